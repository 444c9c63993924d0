#include "aedit/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace aedit::io {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw FormatError(std::string("truncated input while reading ") + what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected \"") + magic + "\"");
  }
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_magic(out, "TNSR");
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw FormatError("write failed");
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, "TNSR");
  const auto rank = get<std::uint32_t>(in, "tensor rank");
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, "tensor dims"));
  std::vector<double> data(shape_size(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw FormatError("truncated tensor payload");
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_block(std::ostream& out, const std::string& text) {
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_block(std::istream& in) {
  const auto n = get<std::uint64_t>(in, "block length");
  if (n > (1u << 26)) throw FormatError("text block too large");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated text block");
  return text;
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const Tensor& t : tensors) write_tensor(out, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(in));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace aedit::io

#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "aedit/tensor.hpp"

// Binary tensor records: magic "TNSR", u32 rank, rank x u64 dims, then the
// raw f64 payload, all little-endian.
namespace aedit::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

// Length-prefixed (u64) UTF-8 text block, used for JSON headers.
void write_block(std::ostream& out, const std::string& text);
std::string read_block(std::istream& in);

void write_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace aedit::io

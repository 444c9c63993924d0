#include "cli.hpp"

int main(int argc, char** argv) { return aedit::cli::run({argv, argv + argc}); }

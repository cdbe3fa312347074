#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fraclens::cli {

/// Runs one command line (without the program name), e.g.
/// {"synth", "--seed", "42", "--n", "10", "--out", "data"}.
/// Returns the process exit status: 0 when every requested output was
/// written, 2 for usage errors, 1 for runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fraclens::cli

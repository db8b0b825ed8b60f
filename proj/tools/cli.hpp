#pragma once

#include <iosfwd>

namespace fewshot::cli {

// Runs the `fewshot` command line. Returns the process exit code: 0 on
// success, 1 for domain errors, 2 for usage and IO errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fewshot::cli

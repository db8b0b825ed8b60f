#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

// Domain errors map to CLI exit code 1, IO/usage errors to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace fewshot

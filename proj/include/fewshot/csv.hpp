#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/error.hpp"

namespace fewshot::csv {

struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based physical line where the record starts
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("csv line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// RFC 4180 reader: quoted fields may contain commas, CR/LF and doubled quotes.
// Accepts LF or CRLF record terminators and a missing final terminator.
std::vector<Record> parse(std::string_view content);

// Quotes the field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

}  // namespace fewshot::csv

#pragma once

#include <stdexcept>
#include <string>

namespace hvfcast {

// Base for every error the library raises. The CLI maps the subclasses
// onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Invalid or insufficient data (bad records, empty sets, inconsistent specs).
class DataError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvfcast

#pragma once

#include <stdexcept>
#include <string>

namespace noisepair {

// Base for every error raised by the library. The message is the stable,
// user-facing reason ("insufficient audio", "not found", ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisepair

#pragma once

#include <stdexcept>
#include <string>

namespace coloc {

/// Thrown for every contract violation, malformed input and I/O failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coloc

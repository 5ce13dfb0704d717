#pragma once

#include <stdexcept>

namespace weakloc {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatches and invalid op geometry.
struct shape_error : error {
  using error::error;
};

// Bad configuration values. CLI exit code 2.
struct config_error : error {
  using error::error;
};

// Missing or malformed data files. CLI exit code 3.
struct data_error : error {
  using error::error;
};

// Numeric failures such as training divergence. CLI exit code 4.
struct numeric_error : error {
  using error::error;
};

}  // namespace weakloc

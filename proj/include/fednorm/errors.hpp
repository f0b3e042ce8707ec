#pragma once

#include <stdexcept>

namespace fednorm {

// bad or inconsistent experiment configuration; the CLI maps this to exit 2
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// numerical breakdown during a run (divergence, non-finite values); exit 3
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fednorm

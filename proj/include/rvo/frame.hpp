#pragma once

#include <vector>

#include "rvo/geometry/types.hpp"

namespace rvo {

/// Features of one video frame.
struct Frame {
  int index = 0;
  double timestamp = 0.0;
  std::vector<Observation> observations;
};

}  // namespace rvo

#pragma once

#include <string>

#include "sbp/box.hpp"

namespace sbp {

struct Detection {
  std::string image_id;
  int class_id = 0;
  Box box;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  std::string image_id;
  int class_id = 0;
  Box box;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

}  // namespace sbp

#pragma once

namespace cms::score {

// Per-molecule critic outputs. Docking is more-negative-better; the rest
// follow the documented ranges.
struct ScoreVector {
  double docking = 0.0;
  double druglikeness = 0.0;      // [0, 1]
  double synthesizability = 10.0; // [1, 10], 1 = easy
  double solubility = 0.0;        // logP scale
  double similarity = 0.0;        // [0, 1], relative to a reference
  bool validity = false;
  bool external_docking = false;  // true when docking came from the scores file
};

}  // namespace cms::score

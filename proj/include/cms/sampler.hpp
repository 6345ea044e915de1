#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cms/hash.hpp"

namespace cms::gen {

// TopPK decoding: keep the intersection of the top-k set and the smallest
// nucleus reaching top_p, renormalize, sample. Probability ties are broken
// by ascending token id so the kept set is well defined.
struct SamplerConfig {
  int top_k = 10;
  double top_p = 0.9;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

int sample_toppk(const Eigen::VectorXd& logits, const SamplerConfig& config, Rng& rng);

// The kept candidate set, exposed for the brute-force intersection oracle.
std::vector<int> toppk_kept_set(const Eigen::VectorXd& logits, const SamplerConfig& config);

}  // namespace cms::gen

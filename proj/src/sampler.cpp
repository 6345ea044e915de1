#include "cms/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cms::gen {

namespace {

struct Ranked {
  std::vector<int> order;         // token ids by (probability desc, id asc)
  std::vector<double> probs;      // softmax probabilities in that order
  int kept = 0;                   // |top-k set ∩ nucleus|
};

Ranked rank_and_cut(const Eigen::VectorXd& logits, const SamplerConfig& config) {
  if (logits.size() == 0) throw std::invalid_argument("empty logits row");
  if (!(config.temperature > 0.0))
    throw std::invalid_argument("temperature must be positive");
  if (config.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (!(config.top_p > 0.0 && config.top_p <= 1.0))
    throw std::invalid_argument("top_p must be in (0, 1]");
  if (!logits.allFinite()) throw std::invalid_argument("logits must be finite");

  const Eigen::Index v = logits.size();
  Eigen::VectorXd scaled = logits / config.temperature;
  const double mx = scaled.maxCoeff();
  Eigen::VectorXd probs = (scaled.array() - mx).exp();
  probs /= probs.sum();

  Ranked out;
  out.order.resize(static_cast<std::size_t>(v));
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  out.probs.resize(static_cast<std::size_t>(v));
  for (std::size_t i = 0; i < out.order.size(); ++i)
    out.probs[i] = probs[out.order[i]];

  // Smallest nucleus reaching top_p; both cuts are prefixes of the same
  // ranking, so the intersection is the shorter prefix.
  int nucleus = static_cast<int>(v);
  double cum = 0.0;
  for (Eigen::Index i = 0; i < v; ++i) {
    cum += out.probs[static_cast<std::size_t>(i)];
    if (cum >= config.top_p) {
      nucleus = static_cast<int>(i) + 1;
      break;
    }
  }
  out.kept = std::max(1, std::min({config.top_k, nucleus, static_cast<int>(v)}));
  return out;
}

}  // namespace

int sample_toppk(const Eigen::VectorXd& logits, const SamplerConfig& config, Rng& rng) {
  const Ranked ranked = rank_and_cut(logits, config);
  double total = 0.0;
  for (int i = 0; i < ranked.kept; ++i) total += ranked.probs[static_cast<std::size_t>(i)];
  const double u = rng.next_double() * total;
  double cum = 0.0;
  for (int i = 0; i < ranked.kept; ++i) {
    cum += ranked.probs[static_cast<std::size_t>(i)];
    if (u < cum) return ranked.order[static_cast<std::size_t>(i)];
  }
  return ranked.order[static_cast<std::size_t>(ranked.kept) - 1];
}

std::vector<int> toppk_kept_set(const Eigen::VectorXd& logits,
                                const SamplerConfig& config) {
  const Ranked ranked = rank_and_cut(logits, config);
  std::vector<int> kept(ranked.order.begin(),
                        ranked.order.begin() + ranked.kept);
  return kept;
}

}  // namespace cms::gen

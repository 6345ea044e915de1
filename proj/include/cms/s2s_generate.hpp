#pragma once

#include <memory>
#include <string>

#include "cms/bpe.hpp"
#include "cms/corpus.hpp"
#include "cms/model.hpp"
#include "cms/sampler.hpp"

namespace cms::corpus {

struct ModelError : std::runtime_error {
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

struct S2sGenerated {
  std::string target;
  bool warned = false;  // no exact-length sample within the retry budget
  int attempts = 0;
};

// Samples the s2s target span from a causally-masked model: the prompt is
// render_s2s_prompt(source, plan); decoding runs until EOS (or any other
// sentinel) or until the character budget fills, truncating to exactly
// target_length characters. Short samples are retried up to max_retries
// times; on exhaustion the longest sample is returned with the warning set.
template <class T>
S2sGenerated generate_s2s_target(const model::ModelConfig& config,
                                 const model::ParametersT<T>& cm_params,
                                 const std::string& source, const MaskPlan& plan,
                                 const gen::SamplerConfig& sampler, Rng& rng,
                                 const bpe::Vocabulary& vocab, int max_retries = 8);

// Binds a frozen model into the epoch-builder callback.
template <class T>
S2sTargetFn make_s2s_target_fn(std::shared_ptr<const model::ParametersT<T>> cm_params,
                               model::ModelConfig config, const bpe::Vocabulary& vocab,
                               gen::SamplerConfig sampler, int max_retries = 8);

extern template S2sGenerated generate_s2s_target<float>(
    const model::ModelConfig&, const model::ParametersT<float>&, const std::string&,
    const MaskPlan&, const gen::SamplerConfig&, Rng&, const bpe::Vocabulary&, int);
extern template S2sGenerated generate_s2s_target<double>(
    const model::ModelConfig&, const model::ParametersT<double>&, const std::string&,
    const MaskPlan&, const gen::SamplerConfig&, Rng&, const bpe::Vocabulary&, int);

}  // namespace cms::corpus

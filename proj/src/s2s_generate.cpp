#include "cms/s2s_generate.hpp"

namespace cms::corpus {

template <class T>
S2sGenerated generate_s2s_target(const model::ModelConfig& config,
                                 const model::ParametersT<T>& cm_params,
                                 const std::string& source, const MaskPlan& plan,
                                 const gen::SamplerConfig& sampler, Rng& rng,
                                 const bpe::Vocabulary& vocab, int max_retries) {
  const Span* s2s = plan.s2s_span();
  if (s2s == nullptr) throw PlanMismatch("plan holds no s2s span");
  const std::size_t budget = static_cast<std::size_t>(s2s->target_length);

  const std::string prompt = render_s2s_prompt(source, plan);
  std::vector<int> prompt_ids;
  prompt_ids.push_back(vocab.bos_id());
  const auto encoded = bpe::encode(prompt, vocab);
  prompt_ids.insert(prompt_ids.end(), encoded.begin(), encoded.end());

  S2sGenerated best;
  for (int attempt = 1; attempt <= std::max(1, max_retries); ++attempt) {
    std::string text;
    try {
      model::DecodeSession<T> session(config, cm_params);
      Eigen::VectorXd logits;
      for (int id : prompt_ids) {
        const auto row = session.feed(id);
        logits = row.row(0).template cast<double>().transpose();
      }
      while (text.size() < budget) {
        const int next = gen::sample_toppk(logits, sampler, rng);
        if (vocab.is_sentinel(next)) break;  // EOS or any stray sentinel
        text += vocab.token_text(next);
        if (text.size() >= budget) break;
        const auto row = session.feed(next);
        logits = row.row(0).template cast<double>().transpose();
      }
    } catch (const model::SequenceTooLong&) {
      // context exhausted mid-span: treat as a short sample
    } catch (const std::exception& e) {
      throw ModelError(e.what());
    }

    if (text.size() >= budget)
      return {text.substr(0, budget), false, attempt};
    if (text.size() > best.target.size()) best.target = text;
    best.attempts = attempt;
  }
  best.warned = true;
  return best;
}

template <class T>
S2sTargetFn make_s2s_target_fn(std::shared_ptr<const model::ParametersT<T>> cm_params,
                               model::ModelConfig config, const bpe::Vocabulary& vocab,
                               gen::SamplerConfig sampler, int max_retries) {
  return [cm_params, config, &vocab, sampler, max_retries](
             const std::string& source, const MaskPlan& plan,
             Rng& rng) -> std::pair<std::string, bool> {
    const S2sGenerated out = generate_s2s_target<T>(config, *cm_params, source, plan,
                                                    sampler, rng, vocab, max_retries);
    return {out.target, out.warned};
  };
}

template S2sGenerated generate_s2s_target<float>(const model::ModelConfig&,
                                                 const model::ParametersT<float>&,
                                                 const std::string&, const MaskPlan&,
                                                 const gen::SamplerConfig&, Rng&,
                                                 const bpe::Vocabulary&, int);
template S2sGenerated generate_s2s_target<double>(const model::ModelConfig&,
                                                  const model::ParametersT<double>&,
                                                  const std::string&, const MaskPlan&,
                                                  const gen::SamplerConfig&, Rng&,
                                                  const bpe::Vocabulary&, int);
template S2sTargetFn make_s2s_target_fn<float>(
    std::shared_ptr<const model::ParametersT<float>>, model::ModelConfig,
    const bpe::Vocabulary&, gen::SamplerConfig, int);
template S2sTargetFn make_s2s_target_fn<double>(
    std::shared_ptr<const model::ParametersT<double>>, model::ModelConfig,
    const bpe::Vocabulary&, gen::SamplerConfig, int);

}  // namespace cms::corpus

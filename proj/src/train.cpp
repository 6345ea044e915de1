#include "cms/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cms/s2s_generate.hpp"

namespace cms::train {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}
void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}
std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint64_t fold_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TensorWriter {
  std::ostream& os;
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  std::uint32_t count = 0;

  void write(const std::string& name, const model::Mat<double>& m) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) write_f64(os, m.data()[i]);
    hash = fold_bytes(hash, m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    ++count;
  }
};

double global_grad_norm(const model::Gradients& grads) {
  double sum = 0.0;
  grads.for_each_tensor([&](const std::string&, const model::Mat<double>& m) {
    sum += m.squaredNorm();
  });
  return std::sqrt(sum);
}

corpus::Phase phase_tag(int phase) {
  switch (phase) {
    case 1: return corpus::Phase::CLM;
    case 2: return corpus::Phase::CM;
    case 3: return corpus::Phase::CMS;
    default: throw PhaseOrderViolation("phase must be 1, 2 or 3");
  }
}

}  // namespace

PhaseSchedule PhaseSchedule::defaults_for_phase(int phase) {
  PhaseSchedule s;
  s.phase = phase;
  switch (phase) {
    case 1: s.epochs = 10; break;
    case 2: s.epochs = 50; break;
    case 3: s.epochs = 20; break;
    default: throw PhaseOrderViolation("phase must be 1, 2 or 3");
  }
  return s;
}

void adam_step(model::Parameters& params, model::Gradients grads, AdamState& state,
               const AdamConfig& config) {
  if (config.clip_norm > 0.0) {
    const double norm = global_grad_norm(grads);
    if (norm > config.clip_norm) {
      const double scale = config.clip_norm / norm;
      grads.for_each_tensor(
          [&](const std::string&, model::Mat<double>& m) { m *= scale; });
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  std::vector<model::Mat<double>*> g, m, v, p;
  grads.for_each_tensor([&](const std::string&, model::Mat<double>& t) { g.push_back(&t); });
  state.m.for_each_tensor([&](const std::string&, model::Mat<double>& t) { m.push_back(&t); });
  state.v.for_each_tensor([&](const std::string&, model::Mat<double>& t) { v.push_back(&t); });
  params.for_each_tensor([&](const std::string&, model::Mat<double>& t) { p.push_back(&t); });

  for (std::size_t i = 0; i < p.size(); ++i) {
    *m[i] = config.beta1 * *m[i] + (1.0 - config.beta1) * *g[i];
    *v[i] = (config.beta2 * v[i]->array() + (1.0 - config.beta2) * g[i]->array().square())
                .matrix();
    p[i]->array() -= config.lr * (m[i]->array() / bc1) /
                     ((v[i]->array() / bc2).sqrt() + config.eps);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.n_layers));
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.n_heads));
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.d_model));
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.d_ff));
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.context_length));
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.vocab_size));
  write_f64(os, ckpt.config.dropout);
  write_u32(os, static_cast<std::uint32_t>(ckpt.config.precision_bits));
  write_u32(os, static_cast<std::uint32_t>(ckpt.phase));
  write_u32(os, static_cast<std::uint32_t>(ckpt.epoch));
  write_u64(os, ckpt.tokenizer_hash);
  write_u64(os, ckpt.rng_state);
  write_u64(os, static_cast<std::uint64_t>(ckpt.opt.step));

  TensorWriter writer{os};
  std::ostringstream tensors_manifest;
  auto dump = [&](const char* prefix, const model::Parameters& tensors) {
    tensors.for_each_tensor([&](const std::string& name, const model::Mat<double>& m) {
      writer.write(prefix + name, m);
      tensors_manifest << prefix << name << " " << m.rows() << "x" << m.cols() << "\n";
    });
  };
  // Count pass first: the block starts with the tensor count.
  std::uint32_t count = 0;
  ckpt.params.for_each_tensor(
      [&](const std::string&, const model::Mat<double>&) { ++count; });
  write_u32(os, count * 3);
  dump("", ckpt.params);
  dump("adam.m.", ckpt.opt.m);
  dump("adam.v.", ckpt.opt.v);
  write_u64(os, writer.hash);
  if (!os) throw IoError("write failed: " + path);
  os.close();

  std::ofstream manifest(path + ".manifest", std::ios::binary);
  if (!manifest) throw IoError("cannot open for writing: " + path + ".manifest");
  manifest << "format=CMSCKPT1 v" << kVersion << "\n"
           << "n_layers=" << ckpt.config.n_layers << "\n"
           << "n_heads=" << ckpt.config.n_heads << "\n"
           << "d_model=" << ckpt.config.d_model << "\n"
           << "d_ff=" << ckpt.config.d_ff << "\n"
           << "context_length=" << ckpt.config.context_length << "\n"
           << "vocab_size=" << ckpt.config.vocab_size << "\n"
           << "dropout=" << ckpt.config.dropout << "\n"
           << "precision_bits=" << ckpt.config.precision_bits << "\n"
           << "phase=" << ckpt.phase << "\n"
           << "epoch=" << ckpt.epoch << "\n"
           << std::hex << std::setfill('0')
           << "tokenizer_hash=" << std::setw(16) << ckpt.tokenizer_hash << "\n"
           << "content_hash=" << std::setw(16) << writer.hash << "\n"
           << std::dec << tensors_manifest.str();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw VersionMismatch("bad checkpoint magic");
  if (read_u32(is) != kVersion) throw VersionMismatch("unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.config.n_layers = static_cast<int>(read_u32(is));
  ckpt.config.n_heads = static_cast<int>(read_u32(is));
  ckpt.config.d_model = static_cast<int>(read_u32(is));
  ckpt.config.d_ff = static_cast<int>(read_u32(is));
  ckpt.config.context_length = static_cast<int>(read_u32(is));
  ckpt.config.vocab_size = static_cast<int>(read_u32(is));
  ckpt.config.dropout = read_f64(is);
  ckpt.config.precision_bits = static_cast<int>(read_u32(is));
  ckpt.phase = static_cast<int>(read_u32(is));
  ckpt.epoch = static_cast<int>(read_u32(is));
  ckpt.tokenizer_hash = read_u64(is);
  ckpt.rng_state = read_u64(is);
  ckpt.opt.step = static_cast<long long>(read_u64(is));
  ckpt.config.validate();

  const std::uint32_t tensor_count = read_u32(is);
  ckpt.params = model::init_parameters<double>(ckpt.config, 0);
  ckpt.opt.m = model::zeros_like(ckpt.params);
  ckpt.opt.v = model::zeros_like(ckpt.params);

  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::uint32_t k = 0; k < tensor_count; ++k) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rows = read_u32(is);
    const std::uint32_t cols = read_u32(is);
    if (!is) throw IoError("truncated checkpoint: " + path);

    model::Parameters* target = &ckpt.params;
    std::string bare = name;
    if (name.rfind("adam.m.", 0) == 0) {
      target = &ckpt.opt.m;
      bare = name.substr(7);
    } else if (name.rfind("adam.v.", 0) == 0) {
      target = &ckpt.opt.v;
      bare = name.substr(7);
    }
    model::Mat<double>* slot = nullptr;
    target->for_each_tensor([&](const std::string& n, model::Mat<double>& m) {
      if (n == bare) slot = &m;
    });
    if (slot == nullptr) throw VersionMismatch("unknown tensor name: " + name);
    if (slot->rows() != static_cast<Eigen::Index>(rows) ||
        slot->cols() != static_cast<Eigen::Index>(cols))
      throw VersionMismatch("tensor shape mismatch for " + name);
    for (Eigen::Index i = 0; i < slot->size(); ++i) slot->data()[i] = read_f64(is);
    hash = fold_bytes(hash, slot->data(),
                      static_cast<std::size_t>(slot->size()) * sizeof(double));
  }
  const std::uint64_t stored = read_u64(is);
  if (!is) throw IoError("truncated checkpoint: " + path);
  if (stored != hash) throw HashMismatch("checkpoint content hash mismatch");
  return ckpt;
}

TrainResult train_phase(const PhaseSchedule& schedule,
                        const std::vector<std::string>& dataset,
                        const bpe::Vocabulary& vocab, std::uint64_t tokenizer_hash,
                        const model::ModelConfig& fresh_config,
                        std::optional<Checkpoint> resume,
                        const corpus::S2sTargetFn& s2s_target, std::ostream* metrics) {
  if (schedule.phase < 1 || schedule.phase > 3)
    throw PhaseOrderViolation("phase must be 1, 2 or 3");
  if (dataset.empty()) throw std::invalid_argument("empty training dataset");

  int start_epoch = 0;
  Checkpoint ckpt;
  if (resume.has_value()) {
    if (resume->tokenizer_hash != tokenizer_hash)
      throw TokenizerMismatch("checkpoint was trained with a different tokenizer");
    if (resume->phase == schedule.phase) {
      start_epoch = resume->epoch;  // continue mid-phase
      ckpt = std::move(*resume);
    } else if (resume->phase == schedule.phase - 1) {
      ckpt = std::move(*resume);
      ckpt.opt.m = model::zeros_like(ckpt.params);
      ckpt.opt.v = model::zeros_like(ckpt.params);
      ckpt.opt.step = 0;
    } else {
      throw PhaseOrderViolation(
          "phase " + std::to_string(schedule.phase) + " needs a phase-" +
          std::to_string(schedule.phase - 1) + " checkpoint, got phase " +
          std::to_string(resume->phase));
    }
  } else {
    if (schedule.phase != 1)
      throw PhaseOrderViolation("phases 2 and 3 require a prior checkpoint");
    ckpt.config = fresh_config;
    ckpt.config.validate();
    ckpt.params = model::init_parameters<double>(ckpt.config, schedule.seed);
    ckpt.opt.m = model::zeros_like(ckpt.params);
    ckpt.opt.v = model::zeros_like(ckpt.params);
  }
  ckpt.phase = schedule.phase;
  ckpt.tokenizer_hash = tokenizer_hash;

  if (schedule.phase == 3 && !s2s_target)
    throw std::invalid_argument("phase 3 requires an s2s target provider");

  TrainResult result;
  const Rng phase_rng = Rng(schedule.seed).derive("phase" + std::to_string(schedule.phase));

  long long examples_seen = static_cast<long long>(start_epoch) *
                            static_cast<long long>(dataset.size());
  for (int epoch = start_epoch; epoch < schedule.epochs; ++epoch) {
    corpus::EpochOptions options;
    options.phase = phase_tag(schedule.phase);
    options.p = schedule.mask_fraction;
    options.single_mask_only =
        schedule.phase == 2 && epoch < schedule.phase2_single_mask_epochs;
    options.cms_mix = schedule.phase3_mix;
    options.n_max = vocab.n_max();
    options.l_max = vocab.l_max();
    options.epoch_seed = phase_rng.derive(static_cast<std::uint64_t>(epoch)).state();

    corpus::EpochResult epoch_data = build_epoch(dataset, options, vocab, s2s_target);
    result.skipped_infeasible += epoch_data.skipped;

    std::vector<std::vector<int>> sequences;
    sequences.reserve(epoch_data.examples.size());
    for (auto& example : epoch_data.examples) {
      if (static_cast<int>(example.ids.size()) > ckpt.config.context_length + 1) {
        ++result.skipped_too_long;
        continue;
      }
      sequences.push_back(std::move(example.ids));
    }

    // Deterministic epoch shuffle, independent of worker layout.
    Rng shuffle_rng = Rng(options.epoch_seed).derive("shuffle");
    Rng dropout_rng = Rng(options.epoch_seed).derive("dropout");
    for (std::size_t i = sequences.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.next_below(i);
      std::swap(sequences[i - 1], sequences[j]);
    }

    AdamConfig adam = schedule.adam;
    if (schedule.cosine_decay) {
      adam.lr = schedule.adam.lr * 0.5 *
                (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                static_cast<double>(schedule.epochs)));
    }

    double epoch_ce = 0.0;
    double epoch_weight = 0.0;
    int step = 0;
    for (std::size_t begin = 0; begin < sequences.size();
         begin += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t end =
          std::min(sequences.size(), begin + static_cast<std::size_t>(schedule.batch_size));
      const std::vector<std::vector<int>> batch(sequences.begin() + static_cast<long>(begin),
                                                sequences.begin() + static_cast<long>(end));
      const auto out = model::batch_backward<double>(
          ckpt.config, ckpt.params, batch, vocab.pad_id(),
          ckpt.config.dropout > 0.0 ? &dropout_rng : nullptr);
      adam_step(ckpt.params, out.grads, ckpt.opt, adam);

      epoch_ce += out.loss * out.total_weight;
      epoch_weight += out.total_weight;
      examples_seen += static_cast<long long>(batch.size());
      if (metrics != nullptr) {
        (*metrics) << "step phase=" << schedule.phase << " epoch=" << epoch
                   << " step=" << step << " loss=" << std::setprecision(10) << out.loss
                   << " examples_seen=" << examples_seen << "\n";
      }
      ++step;
    }

    const double epoch_loss = epoch_weight > 0.0 ? epoch_ce / epoch_weight : 0.0;
    result.epoch_losses.push_back(epoch_loss);
    if (metrics != nullptr) {
      (*metrics) << "epoch phase=" << schedule.phase << " epoch=" << epoch
                 << " loss=" << std::setprecision(10) << epoch_loss
                 << " examples_seen=" << examples_seen << "\n";
      metrics->flush();
    }

    ckpt.epoch = epoch + 1;
    ckpt.rng_state = phase_rng.derive(static_cast<std::uint64_t>(epoch + 1)).state();
  }

  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace cms::train

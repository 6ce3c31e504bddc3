#pragma once

#include "moka/fd.hpp"
#include "moka/network.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace moka {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double warmup_ratio = 0.03;
};

// Linear warmup to the peak rate, then cosine decay to zero. `step` is
// 1-based; the rate at the last warmup step equals the peak exactly.
inline double lr_at(const OptimizerConfig& cfg, int step, int total_steps) {
  const int warmup = std::max(1, static_cast<int>(std::llround(
                                     cfg.warmup_ratio * total_steps)));
  if (step <= warmup)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps <= warmup) return 0.0;
  const double t = static_cast<double>(step - warmup) /
                   static_cast<double>(total_steps - warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// AdamW with bias-corrected moments and decoupled weight decay. Moment
// buffers are aligned with the parameter store's item order.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(const ParamStore<Scalar>& params, OptimizerConfig cfg)
      : cfg_(cfg) {
    for (const auto& [name, p] : params.items()) {
      m_.push_back(MatX<Scalar>::Zero(p.rows(), p.cols()));
      v_.push_back(MatX<Scalar>::Zero(p.rows(), p.cols()));
    }
  }

  int step_count() const { return t_; }

  void step(ParamStore<Scalar>& params, const std::vector<MatX<Scalar>>& grads,
            double lr) {
    if (grads.size() != params.tensor_count())
      throw ContractError("optimizer got " + std::to_string(grads.size()) +
                          " gradients for " + std::to_string(params.tensor_count()) +
                          " parameters");
    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
    const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, t_));
    const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, t_));
    const Scalar eps = static_cast<Scalar>(cfg_.eps);
    const Scalar rate = static_cast<Scalar>(lr);
    const Scalar wd = static_cast<Scalar>(cfg_.weight_decay);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& p = params.items()[i].second;
      const auto& g = grads[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      auto m_hat = (m_[i] / bc1).eval();
      auto v_hat = (v_[i] / bc2).eval();
      p -= rate * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
      if (wd != Scalar(0)) p -= rate * wd * p;
    }
  }

 private:
  OptimizerConfig cfg_;
  int t_ = 0;
  std::vector<MatX<Scalar>> m_;
  std::vector<MatX<Scalar>> v_;
};

// Synthetic instruction-style task: the text span encodes a query index
// through a fixed codebook, and the queried token of the target modality
// carries a class pattern under Gaussian noise. Everything else is noise.
struct SyntheticTaskSpec {
  std::vector<std::pair<std::string, Index>> modality_tokens = {
      {"audio", 8}, {"visual", 8}, {"text", 16}};
  std::string text_modality = "text";
  Index embed_dim = 32;
  int classes = 8;
  double noise = 0.1;
  double signal_scale = 3.0;
  std::string target_modality = "audio";
  std::string query_encoding = "codebook";
  std::uint64_t seed = 7;

  SpanLayout layout() const {
    return SpanLayout::from_counts(modality_tokens, text_modality);
  }

  void validate() const {
    const SpanLayout l = layout();
    const auto& target = l.span(target_modality);
    if (target.modality.is_text)
      throw ConfigError("target modality must be non-text");
    if (classes < 2) throw ConfigError("need at least two classes");
    if (classes > target.length)
      throw ConfigError("classes (" + std::to_string(classes) +
                        ") exceed target modality tokens (" +
                        std::to_string(target.length) + ")");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    if (signal_scale <= 0.0) throw ConfigError("signal_scale must be > 0");
    if (query_encoding != "codebook")
      throw ConfigError("unknown query encoding '" + query_encoding + "'");
  }
};

template <typename Scalar>
class TaskGenerator {
 public:
  explicit TaskGenerator(SyntheticTaskSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    layout_ = spec_.layout();
    const Index n_target = layout_.span(spec_.target_modality).length;
    RngStream qrng = named_stream(spec_.seed, "task.query_codebook");
    query_codebook_ = unit_rows(n_target, spec_.embed_dim, qrng);
    RngStream crng = named_stream(spec_.seed, "task.class_codebook");
    class_codebook_ = unit_rows(spec_.classes, spec_.embed_dim, crng);
  }

  const SyntheticTaskSpec& spec() const { return spec_; }
  const SpanLayout& layout() const { return layout_; }
  const MatX<Scalar>& query_codebook() const { return query_codebook_; }
  const MatX<Scalar>& class_codebook() const { return class_codebook_; }

  std::pair<ModalitySequence<Scalar>, int> sample(RngStream& rng) const {
    const auto& target = layout_.span(spec_.target_modality);
    const int q = rng.uniform_int(static_cast<int>(target.length));
    const int c = rng.uniform_int(spec_.classes);
    MatX<Scalar> tokens(layout_.total_tokens(), spec_.embed_dim);
    for (Index i = 0; i < tokens.rows(); ++i)
      for (Index j = 0; j < tokens.cols(); ++j)
        tokens(i, j) = static_cast<Scalar>(spec_.noise * rng.normal());
    const auto& text = layout_.text_span();
    for (Index i = 0; i < text.length; ++i)
      tokens.row(text.start + i) += query_codebook_.row(q);
    if (q >= target.length)
      throw ContractError("generator produced out-of-span query index");
    tokens.row(target.start + q) += class_codebook_.row(c);
    return {ModalitySequence<Scalar>(std::move(tokens), layout_), c};
  }

  std::vector<std::pair<ModalitySequence<Scalar>, int>> sample_n(
      RngStream& rng, int n) const {
    std::vector<std::pair<ModalitySequence<Scalar>, int>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }

 private:
  // Gaussian rows normalized to `signal_scale` length.
  MatX<Scalar> unit_rows(Index rows, Index cols, RngStream& rng) const {
    MatXd m = gaussian_matrix<double>(rows, cols, 1.0, rng);
    for (Index i = 0; i < rows; ++i)
      m.row(i) *= spec_.signal_scale / m.row(i).norm();
    return m.cast<Scalar>();
  }

  SyntheticTaskSpec spec_;
  SpanLayout layout_;
  MatX<Scalar> query_codebook_;
  MatX<Scalar> class_codebook_;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

template <typename Scalar>
EvalResult evaluate(const ToyNetwork<Scalar>& net,
                    const std::vector<std::pair<ModalitySequence<Scalar>, int>>& samples,
                    const RoutingMask* mask = nullptr) {
  if (samples.empty()) return {};
  int hits = 0;
  double loss = 0.0;
  for (const auto& [seq, label] : samples) {
    Tape<Scalar> tape;
    auto lv = net.make_leaves(tape);
    Value logits = net.forward(tape, lv, seq, mask);
    Value ce = tape.cross_entropy(logits, {label});
    loss += static_cast<double>(tape.val(ce)(0, 0));
    Index best = 0;
    tape.val(logits).row(0).maxCoeff(&best);
    if (static_cast<int>(best) == label) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(samples.size()),
          loss / static_cast<double>(samples.size())};
}

struct TrainLogRow {
  int step;
  std::string split;  // "train" or "eval"
  double loss;
  double accuracy;
  double lr;
};

struct TrainOptions {
  int steps = 2000;
  int batch_size = 16;
  int eval_interval = 200;
  int eval_samples = 256;
  int log_interval = 50;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double initial_eval_accuracy = 0.0;
  double final_eval_accuracy = 0.0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
};

// One deterministic training run: same (config, seed, precision) replays the
// identical loss curve. Aborts with step/lr/grad-norm diagnostics if the
// loss leaves the reals.
template <typename Scalar>
TrainResult train(ToyNetwork<Scalar>& net, const TaskGenerator<Scalar>& gen,
                  const OptimizerConfig& opt, const TrainOptions& topt,
                  std::uint64_t run_seed) {
  TrainResult result;
  result.frozen_checksum_before = net.frozen_checksum();

  RngStream eval_rng = named_stream(gen.spec().seed, "task.eval");
  const auto eval_set = gen.sample_n(eval_rng, topt.eval_samples);
  const EvalResult first = evaluate(net, eval_set);
  result.initial_eval_accuracy = first.accuracy;
  result.final_eval_accuracy = first.accuracy;
  result.log.push_back({0, "eval", first.mean_loss, first.accuracy, 0.0});

  AdamW<Scalar> optimizer(net.trainable_parameters(), opt);
  RngStream data_rng = named_stream(run_seed, "train.data");

  for (int step = 1; step <= topt.steps; ++step) {
    Tape<Scalar> tape;
    auto lv = net.make_leaves(tape);
    std::vector<Value> logit_rows;
    std::vector<int> labels;
    int hits = 0;
    for (int b = 0; b < topt.batch_size; ++b) {
      auto [seq, label] = gen.sample(data_rng);
      Value logits = net.forward(tape, lv, seq, nullptr);
      Index best = 0;
      tape.val(logits).row(0).maxCoeff(&best);
      if (static_cast<int>(best) == label) ++hits;
      logit_rows.push_back(logits);
      labels.push_back(label);
    }
    Value batch_logits = tape.concat_rows(logit_rows);
    Value loss = tape.cross_entropy(batch_logits, labels);
    const double loss_value = static_cast<double>(tape.val(loss)(0, 0));

    auto grads = tape.backward(loss);
    std::vector<MatX<Scalar>> param_grads;
    double grad_sq = 0.0;
    param_grads.reserve(lv.trainable.items.size());
    for (const auto& [name, leaf] : lv.trainable.items) {
      param_grads.push_back(grads[static_cast<std::size_t>(leaf.id)]);
      grad_sq += static_cast<double>(param_grads.back().squaredNorm());
    }
    const double lr = lr_at(opt, step, topt.steps);
    if (!std::isfinite(loss_value))
      throw TrainingError("loss diverged at step " + std::to_string(step) +
                          " (lr=" + std::to_string(lr) +
                          ", grad_norm=" + std::to_string(std::sqrt(grad_sq)) + ")");
    optimizer.step(net.trainable_parameters(), param_grads, lr);

    if (step == 1) result.initial_train_loss = loss_value;
    result.final_train_loss = loss_value;
    if (step % topt.log_interval == 0 || step == topt.steps) {
      result.log.push_back(
          {step, "train", loss_value,
           static_cast<double>(hits) / static_cast<double>(topt.batch_size), lr});
    }
    if (step % topt.eval_interval == 0 || step == topt.steps) {
      const EvalResult ev = evaluate(net, eval_set);
      result.final_eval_accuracy = ev.accuracy;
      result.log.push_back({step, "eval", ev.mean_loss, ev.accuracy, lr});
    }
  }

  result.frozen_checksum_after = net.frozen_checksum();
  if (result.frozen_checksum_after != result.frozen_checksum_before)
    throw ContractError("frozen parameters changed during training");
  return result;
}

struct GradCheckRow {
  std::string variant;
  std::string cross_mode;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double threshold = 1e-4;
  bool all_pass = true;
};

namespace detail {

// Loss of one fixed sample as a function of the trainable parameters.
inline double gradcheck_loss(const ToyNetwork<double>& net,
                             const ModalitySequence<double>& seq, int label) {
  Tape<double> tape;
  auto lv = net.make_leaves(tape);
  Value logits = net.forward(tape, lv, seq, nullptr);
  return tape.val(tape.cross_entropy(logits, {label}))(0, 0);
}

}  // namespace detail

// Backward-vs-central-difference comparison over every trainable parameter
// of one network, at randomized parameter values (zero-init B would make
// most gradients vanish and the check vacuous).
inline double gradcheck_max_rel_err(ToyNetwork<double>& net,
                                    const ModalitySequence<double>& seq, int label,
                                    std::uint64_t seed, double fd_step = 1e-5) {
  RngStream rng(seed, 0x6772616463686b);  // parameter perturbation stream
  for (auto& [name, p] : net.trainable_parameters().items())
    for (Index i = 0; i < p.rows(); ++i)
      for (Index j = 0; j < p.cols(); ++j) p(i, j) = rng.uniform(-0.7, 0.7);

  Tape<double> tape;
  auto lv = net.make_leaves(tape);
  Value logits = net.forward(tape, lv, seq, nullptr);
  Value loss = tape.cross_entropy(logits, {label});
  auto grads = tape.backward(loss);

  std::vector<MatXd> params;
  for (const auto& [name, p] : net.trainable_parameters().items()) params.push_back(p);
  auto f = [&](const std::vector<MatXd>& ps) {
    ToyNetwork<double> probe = net;
    auto& items = probe.trainable_parameters().items();
    for (std::size_t i = 0; i < items.size(); ++i) items[i].second = ps[i];
    return detail::gradcheck_loss(probe, seq, label);
  };
  const auto fd = fd_gradient(f, params, fd_step);

  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const auto& leaf = lv.trainable.items[i].second;
    worst = std::max(worst,
                     max_rel_error(grads[static_cast<std::size_t>(leaf.id)], fd[i]));
  }
  return worst;
}

// Every variant and cross mode shipped, each against the oracle.
inline GradCheckReport gradcheck_suite(const std::vector<std::uint64_t>& seeds,
                                       double threshold = 1e-4) {
  GradCheckReport report;
  report.threshold = threshold;

  const SpanLayout layout = SpanLayout::from_counts(
      {{"audio", 2}, {"visual", 3}, {"text", 4}}, "text");
  NetworkDims dims;
  dims.embed_dim = 8;
  dims.hidden_dim = 8;
  dims.depth = 2;
  dims.classes = 4;

  std::vector<std::pair<AdapterVariant, CrossMode>> combos = {
      {AdapterVariant::Lora, CrossMode::None},
      {AdapterVariant::MultipleLora, CrossMode::None},
      {AdapterVariant::UnimodalLora, CrossMode::None},
      {AdapterVariant::UniPlusMm, CrossMode::None},
      {AdapterVariant::UniPlusMmGated, CrossMode::None},
      {AdapterVariant::Moka, CrossMode::None},
      {AdapterVariant::Moka, CrossMode::TaskCentric},
      {AdapterVariant::Moka, CrossMode::ReversedQuery},
      {AdapterVariant::Moka, CrossMode::Naive},
      {AdapterVariant::Moka, CrossMode::Projected},
      {AdapterVariant::Moka, CrossMode::ExtraPair},
  };

  for (const auto& [variant, mode] : combos) {
    double worst = 0.0;
    for (std::uint64_t seed : seeds) {
      AdapterSpec spec;
      spec.variant = variant;
      spec.cross_mode = mode;
      spec.rank = 2;
      spec.seed = seed;
      ToyNetwork<double> net(dims, spec, layout, seed);
      RngStream srng = named_stream(seed, "gradcheck.sample");
      MatXd tokens = gaussian_matrix<double>(layout.total_tokens(), dims.embed_dim,
                                             1.0, srng);
      ModalitySequence<double> seq(std::move(tokens), layout);
      const int label = static_cast<int>(seed % 4);
      worst = std::max(worst, gradcheck_max_rel_err(net, seq, label, seed));
    }
    report.rows.push_back(
        {variant_name(variant), cross_mode_name(mode), worst, worst < threshold});
    report.all_pass = report.all_pass && worst < threshold;
  }
  return report;
}

}  // namespace moka

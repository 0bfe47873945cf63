// SPDX-License-Identifier: Apache-2.0

#include "msq/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "msq/errors.hpp"
#include "msq/seeding.hpp"

namespace msq {

namespace {

// RNG stream tags under the run seed.
constexpr std::uint64_t kPretrainSourceStream = 11;
constexpr std::uint64_t kAdaptSourceStream = 21;
constexpr std::uint64_t kAdaptTargetStream = 22;

// Cycles through 0..n-1 in a fresh seeded permutation each epoch.
class RoundRobinSampler {
 public:
  RoundRobinSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw ShapeError("cannot sample from an empty dataset");
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed_, 0, epoch_++));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Tensor scaled(const Tensor& t, double factor) {
  Tensor out = t;
  for (double& v : out.values()) v *= factor;
  return out;
}

void check_pairing(const ModelSpec& model, const Dataset& d, const char* role) {
  d.validate();
  if (d.num_classes != num_classes(model)) {
    throw ConfigError(fmt::format("{} dataset has {} classes, model has {}", role, d.num_classes, num_classes(model)));
  }
  if (const auto* mlp = std::get_if<MlpSpec>(&model)) {
    if (d.kind != DatasetKind::Classification || d.channels() != mlp->input_dim) {
      throw ConfigError(fmt::format("{} dataset does not match an MLP with input_dim {}", role, mlp->input_dim));
    }
  } else {
    const auto& seg = std::get<SegNetSpec>(model);
    if (d.kind != DatasetKind::Segmentation || d.channels() != seg.in_channels) {
      throw ConfigError(fmt::format("{} dataset does not match a segmenter with {} input channels", role,
                                    seg.in_channels));
    }
  }
}

struct StepLosses {
  double ce = 0.0;
  double target = 0.0;
};

// One static graph per run holding a source branch and, optionally, a target branch
// that share parameters by name.
class StepProgram {
 public:
  StepProgram(const ModelSpec& model, const Dataset& source, const Dataset* target, const TrainConfig& cfg)
      : model_(model), source_(source), target_(target), cfg_(cfg) {
    const bool mlp = std::holds_alternative<MlpSpec>(model);
    const std::size_t batch = mlp ? cfg.batch_size : 1;
    const auto input_shape = [&](const Dataset& d) {
      return mlp ? Shape{batch, d.channels()} : Shape{batch, d.channels(), d.height(), d.width()};
    };
    batch_ = batch;
    const NodeId xs = graph_.input("x_src", input_shape(source));
    if (mlp) {
      src_final_ = build_mlp(graph_, std::get<MlpSpec>(model), xs);
    } else {
      const SegHeads h = build_segnet(graph_, std::get<SegNetSpec>(model), xs);
      src_final_ = h.p_final;
      src_low_ = h.p_low;
    }
    if (target_ != nullptr) {
      const NodeId xt = graph_.input("x_tgt", input_shape(*target_));
      if (mlp) {
        tgt_final_ = build_mlp(graph_, std::get<MlpSpec>(model), xt);
      } else {
        const SegHeads h = build_segnet(graph_, std::get<SegNetSpec>(model), xt);
        tgt_final_ = h.p_final;
        tgt_low_ = h.p_low;
      }
    }
  }

  std::size_t batch() const { return batch_; }

  // Gradients of the step objective; `losses` receives the unweighted terms.
  TensorMap gradients(const TensorMap& params, std::span<const std::size_t> src_idx,
                      std::span<const std::size_t> tgt_idx, StepLosses& losses) const {
    const bool mlp = std::holds_alternative<MlpSpec>(model_);
    TensorMap inputs;
    inputs.emplace("x_src", mlp ? source_.rows(src_idx) : source_.images(src_idx));
    if (target_ != nullptr) inputs.emplace("x_tgt", mlp ? target_->rows(tgt_idx) : target_->images(tgt_idx));
    const Evaluation eval = forward(graph_, inputs, params);

    std::vector<Seed> seeds;
    const LabelMap y = source_.labels_of(src_idx);
    LossResult ce = cross_entropy(eval.probs(src_final_), y);
    losses.ce = ce.value;
    seeds.push_back({src_final_, std::move(ce.grad_wrt_probs)});
    if (src_low_) {
      // The auxiliary head is also supervised on the source, down-weighted like its target term.
      LossResult ce_low = cross_entropy(eval.probs(*src_low_), y);
      losses.ce += cfg_.lambda_low * ce_low.value;
      seeds.push_back({*src_low_, scaled(ce_low.grad_wrt_probs, cfg_.lambda_low)});
    }

    if (target_ != nullptr) {
      const ProbMap p_final = eval.probs(*tgt_final_);
      if (cfg_.multi_level && tgt_low_) {
        const MultiLevelLoss ml = multi_level_target_loss(MultiLevelOutput{p_final, eval.probs(*tgt_low_)}, cfg_.loss,
                                                          cfg_.lambda_low, cfg_.delta);
        losses.target = ml.value;
        seeds.push_back({*tgt_final_, scaled(ml.final_term.grad_wrt_probs, cfg_.lambda_t)});
        seeds.push_back({*tgt_low_, scaled(ml.low_term.grad_wrt_probs, cfg_.lambda_t * cfg_.lambda_low)});
      } else {
        const LossResult t = target_loss(p_final, cfg_.loss);
        losses.target = t.value;
        seeds.push_back({*tgt_final_, scaled(t.grad_wrt_probs, cfg_.lambda_t)});
      }
    }
    return backward(graph_, eval, seeds);
  }

 private:
  const ModelSpec& model_;
  const Dataset& source_;
  const Dataset* target_;
  const TrainConfig& cfg_;
  Graph graph_;
  std::size_t batch_ = 1;
  NodeId src_final_;
  std::optional<NodeId> src_low_;
  std::optional<NodeId> tgt_final_;
  std::optional<NodeId> tgt_low_;
};

TrainResult run_phase(const ModelSpec& model, TensorMap params, const Dataset& source, const Dataset* target,
                      const TrainConfig& cfg, std::size_t steps, std::uint64_t source_stream) {
  const StepProgram program(model, source, target, cfg);
  RoundRobinSampler src_sampler(source.num_samples(), derive_seed(cfg.seed, source_stream, 0));
  std::optional<RoundRobinSampler> tgt_sampler;
  if (target != nullptr) tgt_sampler.emplace(target->num_samples(), derive_seed(cfg.seed, kAdaptTargetStream, 0));

  OptimizerState state;
  TrainResult result;
  result.log.reserve(steps);
  for (std::size_t it = 0; it < steps; ++it) {
    const double lr = cfg.lr_at(it, steps);
    const std::vector<std::size_t> src_idx = src_sampler.next(program.batch());
    std::vector<std::size_t> tgt_idx;
    if (tgt_sampler) tgt_idx = tgt_sampler->next(program.batch());
    StepLosses losses;
    const TensorMap grads = program.gradients(params, src_idx, tgt_idx, losses);
    sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay);
    result.log.push_back(LossLogRow{.iter = it,
                                    .lr = lr,
                                    .loss_total = losses.ce + cfg.lambda_t * losses.target,
                                    .loss_ce = losses.ce,
                                    .loss_target = losses.target});
  }
  result.params = std::move(params);
  return result;
}

void check_params(const ModelSpec& model, const TensorMap& params) {
  const TensorMap expected = init_params(model, 0);
  if (expected.size() != params.size()) {
    throw ShapeError(fmt::format("expected {} parameter tensors, got {}", expected.size(), params.size()));
  }
  for (const auto& [name, t] : expected) {
    const auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw ShapeError(fmt::format("parameter {} has shape {}, expected {}", name, shape_string(it->second.shape()),
                                   shape_string(t.shape())));
    }
  }
}

}  // namespace

double poly_lr(double lr0, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0) throw DomainError("poly_lr: max_iter must be positive");
  if (iter > max_iter) throw DomainError(fmt::format("poly_lr: iter {} beyond max_iter {}", iter, max_iter));
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

double anneal_lr(double eta0, double progress, double alpha, double beta) {
  if (!(progress >= 0.0 && progress <= 1.0)) throw DomainError(fmt::format("anneal_lr: progress {} outside [0, 1]", progress));
  return eta0 / std::pow(1.0 + alpha * progress, beta);
}

void TrainConfig::validate() const {
  const auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("{} must be a finite nonnegative number", name));
  };
  nonneg(lambda_t, "lambda_t");
  nonneg(lambda_low, "lambda_low");
  nonneg(lr0, "lr0");
  nonneg(weight_decay, "weight_decay");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(loss.gamma > 0.0 && loss.gamma < 0.5)) throw ConfigError("gamma must lie in (0, 0.5)");
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (const auto* p = std::get_if<PolySchedule>(&schedule)) {
    if (!(p->power > 0.0)) throw ConfigError("poly power must be positive");
  } else {
    const auto& a = std::get<AnnealSchedule>(schedule);
    nonneg(a.alpha, "anneal alpha");
    if (!(a.beta > 0.0)) throw ConfigError("anneal beta must be positive");
  }
}

double TrainConfig::lr_at(std::size_t iter, std::size_t total) const {
  if (const auto* p = std::get_if<PolySchedule>(&schedule)) return poly_lr(lr0, iter, total, p->power);
  const auto& a = std::get<AnnealSchedule>(schedule);
  const double progress = total == 0 ? 0.0 : static_cast<double>(iter) / static_cast<double>(total);
  return anneal_lr(lr0, progress, a.alpha, a.beta);
}

void sgd_step(TensorMap& params, const TensorMap& grads, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  if (grads.size() != params.size()) {
    throw ShapeError(fmt::format("sgd_step: {} gradients for {} parameters", grads.size(), params.size()));
  }
  for (auto& [name, w] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("sgd_step: no gradient for " + name);
    if (g->second.shape() != w.shape()) {
      throw ShapeError(fmt::format("sgd_step: gradient for {} has shape {}, parameter {}", name,
                                   shape_string(g->second.shape()), shape_string(w.shape())));
    }
    const auto vit = state.velocity.try_emplace(name, Tensor(w.shape())).first;
    Tensor& v = vit->second;
    if (v.shape() != w.shape()) throw ShapeError("sgd_step: velocity shape drifted for " + name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g->second[i] + weight_decay * w[i];
      v[i] = momentum * v[i] + gi;
      w[i] -= lr * v[i];
    }
  }
  ++state.iteration;
}

TensorMap pretrain_source(const ModelSpec& model, const Dataset& source, const TrainConfig& cfg) {
  cfg.validate();
  check_pairing(model, source, "source");
  TensorMap params = init_params(model, init_seed(model));
  if (cfg.pretrain_iter == 0) return params;
  return run_phase(model, std::move(params), source, nullptr, cfg, cfg.pretrain_iter, kPretrainSourceStream).params;
}

TrainResult adapt(const ModelSpec& model, const TensorMap& init, const Dataset& source, const Dataset& target,
                  const TrainConfig& cfg) {
  cfg.validate();
  check_pairing(model, source, "source");
  check_pairing(model, target, "target");
  check_params(model, init);
  if (target.labels.assigned_count() != 0) {
    throw ContractError("adapt: target dataset must carry only abstain labels");
  }
  return run_phase(model, init, source, &target, cfg, cfg.max_iter, kAdaptSourceStream);
}

TrainResult continue_source_training(const ModelSpec& model, const TensorMap& init, const Dataset& source,
                                     const TrainConfig& cfg) {
  cfg.validate();
  check_pairing(model, source, "source");
  check_params(model, init);
  return run_phase(model, init, source, nullptr, cfg, cfg.max_iter, kAdaptSourceStream);
}

ProbMap predict(const ModelSpec& model, const TensorMap& params, const Dataset& data) {
  check_pairing(model, data, "evaluation");
  if (const auto* mlp = std::get_if<MlpSpec>(&model)) {
    std::vector<std::size_t> all(data.num_samples());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (all.empty()) return ProbMap(Tensor(Shape{0, mlp->num_classes}));
    return mlp_forward(*mlp, params, data.rows(all));
  }
  return predict_heads(std::get<SegNetSpec>(model), params, data).p_final;
}

MultiLevelOutput predict_heads(const SegNetSpec& model, const TensorMap& params, const Dataset& data) {
  check_pairing(model, data, "evaluation");
  const std::size_t c = model.num_classes;
  const std::size_t pix = data.pixels_per_sample();
  Tensor final_all(Shape{data.num_samples() * pix, c});
  Tensor low_all(Shape{data.num_samples() * pix, c});
  Graph g;
  const NodeId x = g.input("x", Shape{1, data.channels(), data.height(), data.width()});
  const SegHeads heads = build_segnet(g, model, x);
  for (std::size_t s = 0; s < data.num_samples(); ++s) {
    const std::size_t idx[] = {s};
    const Evaluation eval = forward(g, {{"x", data.images(idx)}}, params);
    std::copy(eval[heads.p_final].values().begin(), eval[heads.p_final].values().end(),
              final_all.values().begin() + static_cast<std::ptrdiff_t>(s * pix * c));
    std::copy(eval[heads.p_low].values().begin(), eval[heads.p_low].values().end(),
              low_all.values().begin() + static_cast<std::ptrdiff_t>(s * pix * c));
  }
  return MultiLevelOutput{ProbMap(std::move(final_all)), ProbMap(std::move(low_all))};
}

ConfidenceSplit confidence_split(const ProbMap& p, double fraction) {
  if (!(fraction > 0.0 && fraction <= 0.5)) {
    throw DomainError(fmt::format("confidence_split: fraction {} outside (0, 0.5]", fraction));
  }
  const std::size_t n = p.rows();
  std::vector<double> conf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.row(i);
    conf[i] = *std::max_element(row.begin(), row.end());
  }
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  ConfidenceSplit out;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  out.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });
  out.bottom.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& log) {
  std::string text = "iter,lr,loss_total,loss_ce,loss_target\n";
  for (const LossLogRow& r : log) {
    text += fmt::format("{},{:.9e},{:.9e},{:.9e},{:.9e}\n", r.iter, r.lr, r.loss_total, r.loss_ce, r.loss_target);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace msq

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

#include "acceptance.hpp"
#include "msq/cli/commands.hpp"
#include "msq/cli/config.hpp"
#include "msq/graph.hpp"
#include "msq/guidance.hpp"
#include "msq/losses.hpp"
#include "msq/models.hpp"
#include "msq/training.hpp"
#include "oracles.hpp"
#include "random_maps.hpp"

namespace msq::acceptance {

namespace {

using testing::random_probs;
using testing::random_tensor;
using testing::uniform_size;

Outcome fail(std::string detail) { return {false, std::move(detail)}; }

double max_rel_diff(const TensorMap& a, const TensorMap& b) {
  double worst = 0.0;
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      worst = std::max(worst, std::abs(t[i] - u[i]) / std::max(std::abs(u[i]), 1.0));
    }
  }
  return worst;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Outcome gradient_oracle() {
  std::mt19937_64 rng(2024);
  const std::vector<std::pair<std::string, std::function<LossResult(const ProbMap&, const LabelMap&)>>> losses = {
      {"cross entropy", [](const ProbMap& p, const LabelMap& y) { return cross_entropy(p, y); }},
      {"entropy", [](const ProbMap& p, const LabelMap&) { return entropy_loss(p); }},
      {"max squares", [](const ProbMap& p, const LabelMap&) { return max_squares_loss(p); }},
      {"image-wise max squares", [](const ProbMap& p, const LabelMap&) { return iw_max_squares_loss(p, 0.2); }},
      {"scaled entropy", [](const ProbMap& p, const LabelMap&) { return scaled_entropy_loss(p, 0.1); }},
  };
  double worst = 0.0;
  for (const auto& [name, fn] : losses) {
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = uniform_size(1, 16, rng), c = uniform_size(2, 8, rng);
      std::vector<std::int32_t> y(n);
      for (auto& v : y) v = static_cast<std::int32_t>(uniform_size(0, c - 1, rng));
      const LabelMap labels(y);
      Graph g;
      const NodeId z = g.parameter("z", {n, c});
      const NodeId l = g.loss(g.softmax_rows(z), [&fn, labels](const ProbMap& p) { return fn(p, labels); });
      const TensorMap params{{"z", random_tensor({n, c}, rng)}};
      const double err = finite_diff_check(g, {}, params, l, 1e-6);
      if (!(err <= 1e-6)) return fail(fmt::format("{} input {} ({}x{}): relative error {:.3g}", name, t, n, c, err));
      worst = std::max(worst, err);
    }
  }
  return {true, fmt::format("500 inputs, worst relative error {:.2e}", worst)};
}

Outcome binary_closed_forms() {
  const auto entropy = [](double p) { return -p * std::log(p) - (1 - p) * std::log(1 - p); };
  const double h = 1e-6;
  const double fd = std::abs((entropy(0.9 + h) - entropy(0.9 - h)) / (2 * h));
  const double ge = binary_entropy_grad(0.9);
  if (!(std::abs(ge - fd) <= 1e-9)) return fail(fmt::format("entropy gradient {} vs finite difference {}", ge, fd));
  if (!(std::abs(ge - oracle::kLn9) <= 1e-12)) return fail(fmt::format("entropy gradient {} vs ln 9", ge));
  if (binary_maxsquare_grad(0.9) != 1.6) return fail(fmt::format("max squares gradient {:.17g}", binary_maxsquare_grad(0.9)));
  double prev = 0.0;
  for (int k = 1; k <= 99; ++k) {
    const double p = 0.5 + 0.005 * k;
    const double e = binary_entropy_grad(p), m = binary_maxsquare_grad(p);
    if (e < m) return fail(fmt::format("p = {}: entropy gradient {} below max squares {}", p, e, m));
    if (!(e / m > prev)) return fail(fmt::format("p = {}: ratio {} not above {}", p, e / m, prev));
    prev = e / m;
  }
  return {true, fmt::format("|fd - ln 9| = {:.1e}, 99-point dominance sweep holds", std::abs(ge - fd))};
}

Outcome chi2_identity() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const ProbMap p = random_probs(uniform_size(1, 16, rng), uniform_size(2, 8, rng), rng);
    const auto d = pearson_chi2_uniform(p);
    const double mean_d = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(p.rows());
    const double rhs = -(mean_d + 1.0) / (2.0 * static_cast<double>(p.classes()));
    const double err = std::abs(max_squares_loss(p).value - rhs);
    if (!(err <= 1e-12)) return fail(fmt::format("input {}: difference {:.3g}", t, err));
    worst = std::max(worst, err);
  }
  return {true, fmt::format("100 maps, worst difference {:.1e}", worst)};
}

Outcome iw_degeneracy() {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 100; ++t) {
    const ProbMap p = random_probs(uniform_size(1, 16, rng), uniform_size(2, 8, rng), rng);
    const LossResult a = iw_max_squares_loss(p, 0.0), b = max_squares_loss(p);
    if (a.value != b.value) return fail(fmt::format("input {}: {:.17g} vs {:.17g}", t, a.value, b.value));
    if (a.grad_wrt_probs.values().size() != b.grad_wrt_probs.values().size() ||
        !std::equal(a.grad_wrt_probs.values().begin(), a.grad_wrt_probs.values().end(),
                    b.grad_wrt_probs.values().begin())) {
      return fail(fmt::format("input {}: gradients differ", t));
    }
  }
  const double hand = iw_max_squares_loss(ProbMap(4, 2, {1, 0, 1, 0, 1, 0, 0, 1}), 1.0).value;
  if (hand != -1.0) return fail(fmt::format("one-hot example gave {:.17g}", hand));
  return {true, "100 inputs bitwise equal at alpha 0, one-hot example = -1"};
}

Outcome scaled_entropy_bound() {
  const double bound = 0.8 * std::log(9.0);
  double sup = 0.0;
  for (int i = 0; i <= 10000; ++i) sup = std::max(sup, binary_scaled_entropy_grad(i / 10000.0, 0.1));
  if (!(sup <= bound + 1e-9)) return fail(fmt::format("sup {} above {}", sup, bound));
  return {true, fmt::format("sup {:.12f} <= {:.12f}", sup, bound)};
}

Outcome multi_level_sanity() {
  SegmentationDomainSpec ds;
  ds.height = ds.width = 12;
  ds.num_images = 4;
  ds.seed = 5;
  const DomainPair pair = gen_segmentation_pair(ds);
  SegNetSpec spec;
  spec.init_seed = 5;
  TrainConfig cfg;
  cfg.lr0 = 0.05;
  cfg.pretrain_iter = 150;
  const TensorMap trained = pretrain_source(spec, pair.source, cfg);

  const std::vector<std::size_t> batch{0, 1};
  const Tensor images = pair.target.images(batch);
  Graph g;
  const SegHeads heads = build_segnet(g, spec, g.input("x", images.shape()));
  const TensorMap inputs{{"x", images}};
  const Evaluation eval = forward(g, inputs, trained);
  const MultiLevelOutput m{eval.probs(heads.p_final), eval.probs(heads.p_low)};

  // Threshold at the median head confidence so the mask mixes assigned and abstaining pixels.
  std::vector<double> conf(m.p_final.rows());
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = std::max(*std::max_element(m.p_final.row(i).begin(), m.p_final.row(i).end()),
                       *std::max_element(m.p_low.row(i).begin(), m.p_low.row(i).end()));
  }
  std::vector<double> sorted = conf;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double delta = sorted[sorted.size() / 2];
  const double lambda_low = 0.1;
  const LossConfig loss{TargetLoss::MaxSquares};
  const MultiLevelLoss ml = multi_level_target_loss(m, loss, lambda_low, delta);
  const GuidanceMask guide = ml.guidance;
  const std::size_t assigned = guide.assigned_count();
  if (assigned == 0 || assigned == guide.size()) return fail(fmt::format("degenerate mask: {} assigned", assigned));

  for (std::size_t i = 0; i < guide.size(); ++i) {
    if (guide.assigned(i)) continue;
    const std::size_t c = m.p_low.classes();
    for (std::size_t k = 0; k < c; ++k) {
      const double v = ml.low_term.grad_wrt_probs[i * c + k];
      if (v != 0.0) return fail(fmt::format("abstaining pixel {} carries low-head gradient {}", i, v));
    }
  }

  // Same objective as graph nodes with the guidance frozen.
  const NodeId final_term = g.loss(heads.p_final, [loss](const ProbMap& p) { return target_loss(p, loss); });
  const NodeId low_term = g.scale(g.loss(heads.p_low, [guide](const ProbMap& p) { return cross_entropy(p, guide); }),
                                  lambda_low);
  const NodeId total = g.add(final_term, low_term);
  const Evaluation full = forward(g, inputs, trained);
  if (!(std::abs(full[total][0] - ml.value) <= 1e-12)) {
    return fail(fmt::format("graph objective {} vs multi-level value {}", full[total][0], ml.value));
  }
  const TensorMap g_total = backward(g, full, total);

  // Finite differences over the low-head parameters against the full objective.
  TensorMap low_params, low_grads;
  for (const char* name : {"low_head.weight", "low_head.bias"}) {
    low_params.emplace(name, trained.at(name));
    low_grads.emplace(name, g_total.at(name));
  }
  const auto objective = [&](const TensorMap& low) {
    TensorMap merged = trained;
    for (const auto& [name, t] : low) merged.at(name) = t;
    return forward(g, inputs, merged)[total][0];
  };
  const double fd = finite_diff_check(objective, low_params, low_grads, 1e-6);
  if (!(fd <= 1e-6)) return fail(fmt::format("finite-difference audit: relative error {:.3g}", fd));

  const TensorMap g_low = backward(g, full, low_term);
  const TensorMap g_final = backward(g, full, final_term);
  for (const char* name : {"low_head.weight", "low_head.bias"}) {
    const auto& f = g_final.at(name).values();
    if (std::any_of(f.begin(), f.end(), [](double v) { return v != 0.0; })) {
      return fail(fmt::format("final-head loss reaches {}", name));
    }
    const Tensor& a = g_total.at(name);
    const Tensor& b = g_low.at(name);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(std::abs(a[i] - b[i]) <= 1e-12 * std::max(1.0, std::abs(b[i])))) {
        return fail(fmt::format("{}[{}]: objective gradient {} vs guided CE gradient {}", name, i, a[i], b[i]));
      }
    }
  }

  // All-abstain regime on an untrained model.
  const TensorMap init = init_params(spec, spec.init_seed);
  const Evaluation cold = forward(g, inputs, init);
  const MultiLevelOutput m0{cold.probs(heads.p_final), cold.probs(heads.p_low)};
  const MultiLevelLoss ml0 = multi_level_target_loss(m0, loss, lambda_low, 0.999999);
  const double single = target_loss(m0.p_final, loss).value;
  if (ml0.guidance.assigned_count() != 0) return fail("untrained model assigns pixels at delta 0.999999");
  if (!(std::abs(ml0.value - single) <= 1e-12)) return fail(fmt::format("all-abstain {} vs single {}", ml0.value, single));

  TrainConfig tc;
  tc.lr0 = 0.05;
  tc.max_iter = 3;
  tc.delta = 0.999999;
  tc.lambda_low = lambda_low;
  tc.loss = loss;
  const TrainResult plain = adapt(spec, init, pair.source, pair.target, tc);
  tc.multi_level = true;
  const TrainResult multi = adapt(spec, init, pair.source, pair.target, tc);
  for (std::size_t i = 0; i < plain.log.size(); ++i) {
    if (!(std::abs(plain.log[i].loss_total - multi.log[i].loss_total) <= 1e-12)) {
      return fail(fmt::format("training step {}: objective {} vs {}", i, multi.log[i].loss_total, plain.log[i].loss_total));
    }
  }
  const double drift = max_rel_diff(multi.params, plain.params);
  if (!(drift <= 1e-12)) return fail(fmt::format("parameters drift {:.3g} after {} steps", drift, tc.max_iter));

  return {true, fmt::format("{}/{} pixels assigned, FD error {:.1e}, all-abstain gap {:.1e}", assigned, guide.size(), fd,
                            std::abs(ml0.value - single))};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / fmt::format("msq_acceptance_{}", ::getpid());
  fs::remove_all(root);
  const std::vector<std::string> configs = {
      R"({"data": {"generate": {"kind": "classification", "num_classes": 3, "samples_per_class": 50,
            "means": [[0, 0], [4, 0], [8, 0]], "cov_scale": 0.1, "target_shift": [1.35, 0], "target_noise": 0.2}},
          "model": {"kind": "mlp", "hidden_dims": [16]},
          "train": {"loss": "maxsquare", "lambda_t": 0.3, "lr0": 0.01, "pretrain_iter": 200, "max_iter": 300,
                    "schedule": {"kind": "anneal"}},
          "repeat_seeds": [7]})",
      R"({"data": {"generate": {"kind": "segmentation", "height": 16, "width": 16, "num_classes": 3,
            "class_frequency_weights": [8, 1, 1], "num_images": 6,
            "appearance_shift": {"brightness_delta": 0.15, "channel_gain": [0.8, 1.0, 1.2], "noise_sigma": 0.05}}},
          "model": {"kind": "segnet"},
          "train": {"loss": "maxsquare_iw", "alpha": 0.2, "multi_level": true, "delta": 0.9, "lr0": 0.05,
                    "pretrain_iter": 100, "max_iter": 100},
          "repeat_seeds": [7]})",
  };
  std::size_t compared = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::vector<fs::path> dirs;
    for (int rep = 0; rep < 2; ++rep) {
      cli::ExperimentConfig cfg = cli::parse_experiment(configs[c], root);
      cfg.out = root / fmt::format("config{}_run{}", c, rep);
      std::ostringstream log;
      cli::cmd_train(cfg, log);
      dirs.push_back(cfg.out / "seed_7");
    }
    for (const char* file : {"model.ckpt", "loss_log.csv", "report.csv"}) {
      const std::string a = slurp(dirs[0] / file), b = slurp(dirs[1] / file);
      if (a.empty()) return fail(fmt::format("config {}: {} missing or empty", c, file));
      if (a != b) return fail(fmt::format("config {}: {} differs between runs", c, file));
      ++compared;
    }
  }
  fs::remove_all(root);
  return {true, fmt::format("{} artifacts byte-identical across repeated runs", compared)};
}

Outcome guidance_properties() {
  std::mt19937_64 rng(1000);
  std::size_t checked_rows = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = uniform_size(1, 16, rng), c = uniform_size(2, 6, rng);
    const MultiLevelOutput m{random_probs(n, c, rng, 5.0), random_probs(n, c, rng, 5.0)};
    const double lo = std::uniform_real_distribution<double>(0.05, 0.99)(rng);
    const double hi = std::uniform_real_distribution<double>(lo, 0.999)(rng);
    const GuidanceMask a = self_guidance(m, lo);
    if (a != self_guidance(MultiLevelOutput{m.p_low, m.p_final}, lo)) {
      return fail(fmt::format("output {}: head swap changes the guidance at delta {}", t, lo));
    }
    const GuidanceMask b = self_guidance(m, hi);
    for (std::size_t i = 0; i < n; ++i) {
      if (b.assigned(i) && a[i] != b[i]) {
        return fail(fmt::format("output {} row {}: assigned at delta {} but not at {}", t, i, hi, lo));
      }
    }
    checked_rows += n;
  }
  return {true, fmt::format("1000 outputs, {} rows", checked_rows)};
}

}  // namespace msq::acceptance

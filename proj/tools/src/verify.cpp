// SPDX-License-Identifier: Apache-2.0
//
// Self-check of the library invariants on seeded random inputs.

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "msq/cli/commands.hpp"
#include "msq/graph.hpp"
#include "msq/guidance.hpp"
#include "msq/losses.hpp"

namespace msq::cli {

namespace {

using Failure = std::optional<std::string>;

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor noise(Shape shape, std::mt19937_64& rng, double scale) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

ProbMap random_map(std::mt19937_64& rng, std::size_t n, std::size_t c, double scale = 2.0) {
  return softmax_rows(noise({n, c}, rng, scale));
}

std::string describe(const ProbMap& p) {
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < std::min<std::size_t>(p.rows(), 4); ++i) {
    rows.push_back(fmt::format("({:.4g})", fmt::join(p.row(i), ", ")));
  }
  return fmt::format("{}x{} map starting {}{}", p.rows(), p.classes(), fmt::join(rows, " "), p.rows() > 4 ? " ..." : "");
}

Failure loss_gradients() {
  std::mt19937_64 rng(101);
  const std::vector<std::pair<std::string, LossFn>> losses = {
      {"entropy", [](const ProbMap& p) { return entropy_loss(p); }},
      {"scaled entropy", [](const ProbMap& p) { return scaled_entropy_loss(p, 0.1); }},
      {"max squares", [](const ProbMap& p) { return max_squares_loss(p); }},
      {"image-wise max squares", [](const ProbMap& p) { return iw_max_squares_loss(p, 0.2); }},
  };
  for (const auto& [name, fn] : losses) {
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = draw(rng, 1, 16), c = draw(rng, 2, 8);
      Graph g;
      const NodeId z = g.parameter("z", {n, c});
      const NodeId l = g.loss(g.softmax_rows(z), fn);
      const TensorMap params{{"z", noise({n, c}, rng, 1.0)}};
      const double err = finite_diff_check(g, {}, params, l, 1e-6);
      if (!(err <= 1e-6)) {
        return fmt::format("{} on {}: relative error {:.3g}", name, describe(softmax_rows(params.at("z"))), err);
      }
    }
  }
  std::mt19937_64 lrng(102);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = draw(lrng, 1, 16), c = draw(lrng, 2, 8);
    std::vector<std::int32_t> y(n);
    for (auto& v : y) v = static_cast<std::int32_t>(draw(lrng, 0, c - 1));
    const LabelMap labels(y);
    Graph g;
    const NodeId z = g.parameter("z", {n, c});
    const NodeId l = g.loss(g.softmax_rows(z), [labels](const ProbMap& p) { return cross_entropy(p, labels); });
    const TensorMap params{{"z", noise({n, c}, lrng, 1.0)}};
    const double err = finite_diff_check(g, {}, params, l, 1e-6);
    if (!(err <= 1e-6)) return fmt::format("cross entropy on {}: relative error {:.3g}", describe(softmax_rows(params.at("z"))), err);
  }
  return std::nullopt;
}

Failure chi2_identity() {
  std::mt19937_64 rng(103);
  for (int t = 0; t < 100; ++t) {
    const ProbMap p = random_map(rng, draw(rng, 1, 16), draw(rng, 2, 8));
    const auto d = pearson_chi2_uniform(p);
    const double mean_d = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(p.rows());
    const double rhs = -(mean_d + 1.0) / (2.0 * static_cast<double>(p.classes()));
    const double lhs = max_squares_loss(p).value;
    if (!(std::abs(lhs - rhs) <= 1e-12)) return fmt::format("{}: {} vs {}", describe(p), lhs, rhs);
  }
  return std::nullopt;
}

Failure gradient_dominance() {
  double prev = 0.0;
  for (int k = 1; k <= 99; ++k) {
    const double p = 0.5 + 0.005 * k;
    const double e = binary_entropy_grad(p), m = binary_maxsquare_grad(p);
    if (e < m) return fmt::format("p = {}: entropy gradient {} below max-squares {}", p, e, m);
    if (!(e / m > prev)) return fmt::format("p = {}: ratio {} not above {}", p, e / m, prev);
    prev = e / m;
  }
  return std::nullopt;
}

Failure iw_alpha_zero() {
  std::mt19937_64 rng(104);
  for (int t = 0; t < 100; ++t) {
    const ProbMap p = random_map(rng, draw(rng, 1, 16), draw(rng, 2, 8));
    const double a = iw_max_squares_loss(p, 0.0).value, b = max_squares_loss(p).value;
    if (a != b) return fmt::format("{}: {:.17g} vs {:.17g}", describe(p), a, b);
  }
  return std::nullopt;
}

Failure scaled_entropy_bound() {
  const double gamma = 0.1;
  const double bound = (1.0 - 2.0 * gamma) * std::log((1.0 - gamma) / gamma);
  for (int i = 0; i <= 10000; ++i) {
    const double p = i / 10000.0;
    const double g = binary_scaled_entropy_grad(p, gamma);
    if (!(g <= bound + 1e-9)) return fmt::format("p = {}: gradient {} above {}", p, g, bound);
  }
  return std::nullopt;
}

Failure guidance_properties() {
  std::mt19937_64 rng(105);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = draw(rng, 1, 16), c = draw(rng, 2, 6);
    const MultiLevelOutput m{random_map(rng, n, c, 5.0), random_map(rng, n, c, 5.0)};
    const double lo = std::uniform_real_distribution<double>(0.05, 0.99)(rng);
    const double hi = std::uniform_real_distribution<double>(lo, 0.999)(rng);
    const GuidanceMask a = self_guidance(m, lo);
    if (a != self_guidance(MultiLevelOutput{m.p_low, m.p_final}, lo)) {
      return fmt::format("head swap changed guidance for final {} at delta {}", describe(m.p_final), lo);
    }
    const GuidanceMask b = self_guidance(m, hi);
    for (std::size_t i = 0; i < n; ++i) {
      if (b.assigned(i) && a[i] != b[i]) {
        return fmt::format("row {} assigned at delta {} but not at {} for final {}", i, hi, lo, describe(m.p_final));
      }
    }
  }
  return std::nullopt;
}

Failure catalog_gradients() {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    Graph g;
    const NodeId img = g.input("img", {1, 2, 4, 4});
    const NodeId conv = g.relu(g.conv3x3(img, g.parameter("cw", {2, 2, 3, 3}), g.parameter("cb", {2})));
    const NodeId logits = g.add_bias(g.matmul(g.pixel_rows(conv), g.parameter("w", {2, 3})), g.parameter("b", {3}));
    const NodeId p = g.softmax_rows(g.add(logits, g.scale(g.mul(logits, logits), 0.1)));
    const NodeId f = g.add(g.scale(g.mean(g.log(p)), -1.0), g.sum(p));
    const TensorMap params{{"cw", noise({2, 2, 3, 3}, rng, 0.5)},
                           {"cb", noise({2}, rng, 0.5)},
                           {"w", noise({2, 3}, rng, 1.0)},
                           {"b", noise({3}, rng, 1.0)}};
    const double err = finite_diff_check(g, {{"img", noise({1, 2, 4, 4}, rng, 1.0)}}, params, f, 1e-6);
    if (!(err <= 1e-6)) return fmt::format("graph seed {}: relative error {:.3g}", seed, err);
  }
  return std::nullopt;
}

}  // namespace

bool cmd_verify(std::ostream& out) {
  const std::vector<std::pair<std::string, std::function<Failure()>>> suite = {
      {"autodiff catalog vs finite differences", catalog_gradients},
      {"loss gradients vs finite differences", loss_gradients},
      {"max squares equals chi-square identity", chi2_identity},
      {"entropy gradient dominance sweep", gradient_dominance},
      {"image-wise max squares at alpha 0", iw_alpha_zero},
      {"scaled entropy gradient bound", scaled_entropy_bound},
      {"guidance swap symmetry and monotone abstention", guidance_properties},
  };
  bool ok = true;
  for (const auto& [name, check] : suite) {
    const auto t0 = std::chrono::steady_clock::now();
    Failure failure;
    try {
      failure = check();
    } catch (const std::exception& e) {
      failure = std::string("threw: ") + e.what();
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (failure) {
      ok = false;
      out << fmt::format("FAIL {} ({:.0f} ms): {}\n", name, ms, *failure);
    } else {
      out << fmt::format("PASS {} ({:.0f} ms)\n", name, ms);
    }
  }
  out << (ok ? "all properties hold\n" : "some properties failed\n");
  return ok;
}

}  // namespace msq::cli

// SPDX-License-Identifier: Apache-2.0
//
// Runs every acceptance criterion and prints one PASS/FAIL line each.
// A criterion that exceeds its runtime budget fails.

#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <vector>

#include <fmt/format.h>

#include "acceptance.hpp"

using namespace msq::acceptance;

namespace {

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "loss gradients match finite differences", 30, gradient_oracle},
      {2, "binary closed forms and dominance sweep", 1, binary_closed_forms},
      {3, "max squares chi-square identity", 1, chi2_identity},
      {4, "image-wise max squares degeneracy", 1, iw_degeneracy},
      {5, "scaled entropy gradient bound", 1, scaled_entropy_bound},
      {6, "max squares beats entropy on low-confidence targets", 300, confidence_split_directional},
      {7, "image-wise weighting protects minority classes", 900, imbalance_directional},
      {8, "multi-level objective sanity", 60, multi_level_sanity},
      {9, "training runs are byte-for-byte deterministic", 600, determinism},
      {10, "guidance monotonicity and head-swap symmetry", 5, guidance_properties},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      out.pass = false;
      out.detail += fmt::format("; over the {:.0f} s budget", c.budget_s);
    }
    failed += out.pass ? 0 : 1;
    fmt::print("{} [{:2}] {} ({:.2f} s): {}\n", out.pass ? "PASS" : "FAIL", c.id, c.name, secs, out.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "msq/data_synth.hpp"
#include "msq/graph.hpp"
#include "msq/models.hpp"
#include "msq/training.hpp"

namespace {

void BM_SegNetForwardBackward(benchmark::State& state) {
  msq::SegmentationDomainSpec ds;
  ds.num_images = 1;
  const auto pair = msq::gen_segmentation_pair(ds);
  const msq::SegNetSpec spec;
  const auto params = msq::init_params(spec, 1);
  const std::vector<std::size_t> first{0};
  const msq::Tensor image = pair.source.images(first);
  msq::Graph g;
  const auto heads = msq::build_segnet(g, spec, g.input("x", image.shape()));
  const auto loss = g.loss(heads.p_final, [](const msq::ProbMap& p) { return msq::max_squares_loss(p); });
  const msq::TensorMap inputs{{"x", image}};
  for (auto _ : state) {
    const auto eval = msq::forward(g, inputs, params);
    benchmark::DoNotOptimize(msq::backward(g, eval, loss));
  }
}
BENCHMARK(BM_SegNetForwardBackward)->Unit(benchmark::kMicrosecond);

void BM_MlpAdapt(benchmark::State& state) {
  msq::ClassificationDomainSpec ds;
  ds.means = {{0, 0}, {4, 0}, {8, 0}};
  ds.target_shift = {1.0, 0.0};
  const auto pair = msq::gen_classification_pair(ds);
  msq::MlpSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 3;
  msq::TrainConfig cfg;
  cfg.lr0 = 0.01;
  cfg.max_iter = static_cast<std::size_t>(state.range(0));
  const auto init = msq::init_params(spec, 0);
  for (auto _ : state) benchmark::DoNotOptimize(msq::adapt(spec, init, pair.source, pair.target, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpAdapt)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_GenerateSegmentation(benchmark::State& state) {
  msq::SegmentationDomainSpec ds;
  ds.num_images = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(msq::gen_segmentation_pair(ds));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateSegmentation)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace

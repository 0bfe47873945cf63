// SPDX-License-Identifier: Apache-2.0

#include "msq/cli/commands.hpp"

#include <fstream>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "msq/errors.hpp"
#include "msq/losses.hpp"

namespace msq::cli {

namespace {

constexpr double kSplitFraction = 0.3;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

double subset_accuracy(const LabelMap& pred, const LabelMap& truth, const std::vector<std::size_t>& idx) {
  std::size_t hit = 0, seen = 0;
  for (std::size_t i : idx) {
    if (!truth.assigned(i)) continue;
    ++seen;
    hit += pred[i] == truth[i];
  }
  return seen == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(seen);
}

void check_compatible(const ModelSpec& model, const Dataset& data) {
  if (const auto* m = std::get_if<MlpSpec>(&model)) {
    if (data.kind != DatasetKind::Classification || data.channels() != m->input_dim ||
        data.num_classes != m->num_classes) {
      throw ConfigError("dataset does not match the checkpoint's mlp");
    }
  } else {
    const auto& s = std::get<SegNetSpec>(model);
    if (data.kind != DatasetKind::Segmentation || data.channels() != s.in_channels ||
        data.num_classes != s.num_classes || data.height() < 3 || data.width() < 3) {
      throw ConfigError("dataset does not match the checkpoint's segnet");
    }
  }
}

struct LoadedData {
  Dataset source;
  Dataset target;
  Dataset target_eval;
};

LoadedData load_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (const auto* files = std::get_if<DataFiles>(&cfg.data)) {
    LoadedData d{read_dataset(files->source), read_dataset(files->target), read_dataset(files->target_eval)};
    if (d.target_eval.features != d.target.features) {
      throw ConfigError("'data.target_eval' must hold the same features as 'data.target'");
    }
    return d;
  }
  GenerationSpec spec = std::get<GenerationSpec>(cfg.data);
  set_seed(spec, seed);
  DomainPair pair = generate(spec);
  Dataset eval = pair.target_eval();
  return {std::move(pair.source), std::move(pair.target), std::move(eval)};
}

}  // namespace

void apply_overrides(ExperimentConfig& cfg, const TrainOverrides& o) {
  if (o.out) cfg.out = *o.out;
  if (o.seed) cfg.repeat_seeds = {*o.seed};
  if (o.loss) cfg.train.loss.kind = parse_target_loss(*o.loss);
  if (o.multi) {
    if (!std::holds_alternative<SegNetSpec>(cfg.model)) throw ConfigError("--multi needs a segnet model");
    cfg.train.multi_level = true;
  }
  if (o.gamma) cfg.train.loss.gamma = *o.gamma;
  if (o.alpha) cfg.train.loss.alpha = *o.alpha;
  if (o.delta) cfg.train.delta = *o.delta;
  if (o.lambda_t) cfg.train.lambda_t = *o.lambda_t;
  cfg.train.validate();
}

std::string render_curves(double gamma, double step) {
  if (!(step > 0.0 && step <= 0.1)) throw ConfigError(fmt::format("step {} outside (0, 0.1]", step));
  if (!(gamma > 0.0 && gamma < 0.5)) throw ConfigError(fmt::format("gamma {} outside (0, 0.5)", gamma));
  std::string out = "p,grad_entropy,grad_maxsquare,grad_scaled_entropy\n";
  for (std::size_t k = 1;; ++k) {
    const double p = 0.5 + static_cast<double>(k) * step;
    if (p > 1.0 - step + 1e-12) break;
    out += fmt::format("{:.6f},{:.9f},{:.9f},{:.9f}\n", p, binary_entropy_grad(p), binary_maxsquare_grad(p),
                       binary_scaled_entropy_grad(p, gamma));
  }
  return out;
}

void cmd_curves(double gamma, double step, const std::filesystem::path& out) {
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_text(out, render_curves(gamma, step));
}

void cmd_gen(const GenerationSpec& spec, const std::filesystem::path& out_dir) {
  const DomainPair pair = generate(spec);
  ensure_dir(out_dir);
  write_dataset(pair.source, out_dir / "source.uds");
  write_dataset(pair.target, out_dir / "target.uds");
  write_dataset(pair.target_eval(), out_dir / "target_eval.uds");
}

ClassReport evaluate(const Checkpoint& ckpt, const Dataset& data) {
  check_compatible(ckpt.model, data);
  const ProbMap p = predict(ckpt.model, ckpt.params, data);
  ClassReport report = build_report(p, data.labels);
  const LabelMap pred = argmax_labels(p);
  report.extra.emplace_back("accuracy", accuracy(confusion_matrix(pred, data.labels, data.num_classes)));
  if (data.kind == DatasetKind::Classification && p.rows() > 0) {
    const ConfidenceSplit split = confidence_split(p, kSplitFraction);
    report.extra.emplace_back("top30_accuracy", subset_accuracy(pred, data.labels, split.top));
    report.extra.emplace_back("bottom30_accuracy", subset_accuracy(pred, data.labels, split.bottom));
  }
  return report;
}

void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  for (std::uint64_t seed : cfg.repeat_seeds) {
    const LoadedData data = load_data(cfg, seed);
    ModelSpec model = fit_model(cfg.model, data.source);
    std::visit([seed](auto& m) { m.init_seed = seed; }, model);
    check_compatible(model, data.target);
    check_compatible(model, data.target_eval);

    TrainConfig train = cfg.train;
    train.seed = seed;
    const TensorMap pretrained = pretrain_source(model, data.source, train);
    const TrainResult result = adapt(model, pretrained, data.source, data.target, train);

    const std::filesystem::path dir = cfg.out / fmt::format("seed_{}", seed);
    ensure_dir(dir);
    const Checkpoint ckpt{model, result.params};
    save_checkpoint(dir / "model.ckpt", ckpt);
    write_loss_log(dir / "loss_log.csv", result.log);
    const ClassReport report = evaluate(ckpt, data.target_eval);
    emit_report(report, dir / "report.csv");
    log << fmt::format("seed {}: miou {:.4f} accuracy {:.4f} -> {}\n", seed, report.miou, report.extra.front().second,
                       dir.string());
  }
}

void cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
              const std::filesystem::path& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Dataset data = read_dataset(dataset);
  if (data.labels.assigned_count() == 0) throw ConfigError("evaluation dataset carries no labels");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  emit_report(evaluate(ckpt, data), out);
}

int run(int argc, char** argv) {
  CLI::App app{"Maximum-squares domain adaptation lab"};
  app.require_subcommand(1);

  double gamma = 0.1, step = 0.005;
  std::filesystem::path out, config, checkpoint, dataset;
  std::optional<std::uint64_t> seed;
  TrainOverrides overrides;

  auto* curves = app.add_subcommand("curves", "binary gradient curves as CSV");
  curves->add_option("--gamma", gamma, "scaled entropy ratio")->capture_default_str();
  curves->add_option("--step", step, "grid step in (0, 0.1]")->capture_default_str();
  curves->add_option("--out", out, "output CSV")->required();

  auto* gen = app.add_subcommand("gen", "generate a source/target pair as UDS1 files");
  gen->add_option("--config", config, "generation spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "override the spec seed");

  auto* train = app.add_subcommand("train", "pretrain, adapt and report for each seed");
  train->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", overrides.out, "output directory");
  train->add_option("--seed", overrides.seed, "run a single seed");
  train->add_option("--loss", overrides.loss, "entropy|scaled|maxsquare|maxsquare_iw");
  train->add_flag("--multi", overrides.multi, "multi-level self-guided objective");
  train->add_option("--gamma", overrides.gamma, "scaled entropy ratio");
  train->add_option("--alpha", overrides.alpha, "image-wise weighting exponent");
  train->add_option("--delta", overrides.delta, "guidance threshold");
  train->add_option("--lambda-t", overrides.lambda_t, "target loss weight");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labelled dataset");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", dataset, "labelled UDS1 dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "report CSV")->required();

  auto* verify = app.add_subcommand("verify", "run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*curves) {
      cmd_curves(gamma, step, out);
    } else if (*gen) {
      GenerationSpec spec = load_generation(config);
      if (seed) set_seed(spec, *seed);
      cmd_gen(spec, out);
    } else if (*train) {
      ExperimentConfig cfg = load_experiment(config);
      apply_overrides(cfg, overrides);
      cmd_train(cfg, std::cout);
    } else if (*eval) {
      cmd_eval(checkpoint, dataset, out);
    } else if (*verify) {
      return cmd_verify(std::cout) ? kExitOk : kExitRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace msq::cli

// SPDX-License-Identifier: Apache-2.0

#include "msq/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "msq/errors.hpp"

namespace msq::cli {

namespace {

using nlohmann::json;

// Reads fields of one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", label()));
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& require(const std::string& key) {
    if (!obj_.contains(key)) throw ConfigError(fmt::format("missing required field '{}'", path(key)));
    used_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    return convert<T>(require(key), path(key));
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    return has(key) ? get<T>(key) : fallback;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.contains(key)) throw ConfigError(fmt::format("unknown field '{}'", path(key)));
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(fmt::format("'{}' must be true or false", name));
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(fmt::format("'{}' must be a string", name));
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(fmt::format("'{}' must be a number", name));
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(fmt::format("'{}' must be a nonnegative integer", name));
      return v.get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : "'" + where_ + "'"; }

  const json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

template <typename T>
std::vector<T> array_of(const json& v, const std::string& name) {
  if (!v.is_array()) throw ConfigError(fmt::format("'{}' must be an array", name));
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Fields::convert<T>(v[i], fmt::format("{}[{}]", name, i)));
  return out;
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& v, const std::string& name) {
  const auto values = array_of<double>(v, name);
  if (values.size() != N) throw ConfigError(fmt::format("'{}' must have {} entries", name, N));
  std::array<double, N> out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ClassificationDomainSpec parse_classification(Fields& f) {
  ClassificationDomainSpec s;
  s.num_classes = f.get_or<std::size_t>("num_classes", s.num_classes);
  s.samples_per_class = f.get_or<std::size_t>("samples_per_class", s.samples_per_class);
  const json& means = f.require("means");
  if (!means.is_array()) throw ConfigError("'" + f.path("means") + "' must be an array of [x, y] pairs");
  for (std::size_t i = 0; i < means.size(); ++i) {
    s.means.push_back(fixed_array<2>(means[i], fmt::format("{}[{}]", f.path("means"), i)));
  }
  s.cov_scale = f.get_or<double>("cov_scale", s.cov_scale);
  if (f.has("target_shift")) s.target_shift = fixed_array<2>(f.require("target_shift"), f.path("target_shift"));
  s.target_noise = f.get_or<double>("target_noise", s.target_noise);
  s.seed = f.get_or<std::uint64_t>("seed", s.seed);
  return s;
}

SegmentationDomainSpec parse_segmentation(Fields& f) {
  SegmentationDomainSpec s;
  s.height = f.get_or<std::size_t>("height", s.height);
  s.width = f.get_or<std::size_t>("width", s.width);
  s.num_classes = f.get_or<std::size_t>("num_classes", s.num_classes);
  if (f.has("class_frequency_weights")) {
    s.class_frequency_weights = array_of<double>(f.require("class_frequency_weights"), f.path("class_frequency_weights"));
  } else if (s.num_classes != s.class_frequency_weights.size()) {
    throw ConfigError(fmt::format("missing required field '{}'", f.path("class_frequency_weights")));
  }
  s.shapes_per_image = f.get_or<std::size_t>("shapes_per_image", s.shapes_per_image);
  s.num_images = f.get_or<std::size_t>("num_images", s.num_images);
  s.texture_sigma = f.get_or<double>("texture_sigma", s.texture_sigma);
  if (f.has("appearance_shift")) {
    Fields a(f.require("appearance_shift"), f.path("appearance_shift"));
    s.appearance_shift.brightness_delta = a.get_or<double>("brightness_delta", 0.0);
    if (a.has("channel_gain")) s.appearance_shift.channel_gain = fixed_array<3>(a.require("channel_gain"), a.path("channel_gain"));
    s.appearance_shift.noise_sigma = a.get_or<double>("noise_sigma", 0.0);
    a.finish();
  }
  s.seed = f.get_or<std::uint64_t>("seed", s.seed);
  return s;
}

GenerationSpec parse_generation_json(const json& j, const std::string& where) {
  Fields f(j, where);
  const std::string kind = f.get<std::string>("kind");
  GenerationSpec spec;
  if (kind == "classification") {
    spec = parse_classification(f);
  } else if (kind == "segmentation") {
    spec = parse_segmentation(f);
  } else {
    throw ConfigError(fmt::format("'{}' must be classification or segmentation, got '{}'", f.path("kind"), kind));
  }
  f.finish();
  std::visit([](const auto& s) { s.validate(); }, spec);
  return spec;
}

ModelSpec parse_model(const json& j) {
  Fields f(j, "model");
  const std::string kind = f.get<std::string>("kind");
  ModelSpec model;
  if (kind == "mlp") {
    MlpSpec m;
    if (f.has("hidden_dims")) m.hidden_dims = array_of<std::size_t>(f.require("hidden_dims"), "model.hidden_dims");
    model = m;
  } else if (kind == "segnet") {
    SegNetSpec m;
    m.trunk_channels = f.get_or<std::size_t>("trunk_channels", m.trunk_channels);
    m.trunk_depth = f.get_or<std::size_t>("trunk_depth", m.trunk_depth);
    m.tap_depth = f.get_or<std::size_t>("tap_depth", m.tap_depth);
    model = m;
  } else {
    throw ConfigError(fmt::format("'model.kind' must be mlp or segnet, got '{}'", kind));
  }
  f.finish();
  return model;
}

Schedule parse_schedule(const json& j) {
  Fields f(j, "train.schedule");
  const std::string kind = f.get<std::string>("kind");
  Schedule out;
  if (kind == "poly") {
    out = PolySchedule{f.get_or<double>("power", PolySchedule{}.power)};
  } else if (kind == "anneal") {
    AnnealSchedule a;
    a.alpha = f.get_or<double>("alpha", a.alpha);
    a.beta = f.get_or<double>("beta", a.beta);
    out = a;
  } else {
    throw ConfigError(fmt::format("'train.schedule.kind' must be poly or anneal, got '{}'", kind));
  }
  f.finish();
  return out;
}

TrainConfig parse_train(const json& j) {
  Fields f(j, "train");
  TrainConfig c;
  if (f.has("loss")) c.loss.kind = parse_target_loss(f.get<std::string>("loss"));
  c.lambda_t = f.get_or<double>("lambda_t", c.lambda_t);
  c.loss.gamma = f.get_or<double>("gamma", c.loss.gamma);
  c.loss.alpha = f.get_or<double>("alpha", c.loss.alpha);
  c.delta = f.get_or<double>("delta", c.delta);
  c.lambda_low = f.get_or<double>("lambda_low", c.lambda_low);
  c.lr0 = f.get_or<double>("lr0", c.lr0);
  c.momentum = f.get_or<double>("momentum", c.momentum);
  c.weight_decay = f.get_or<double>("weight_decay", c.weight_decay);
  c.max_iter = f.get_or<std::size_t>("max_iter", c.max_iter);
  c.pretrain_iter = f.get_or<std::size_t>("pretrain_iter", c.pretrain_iter);
  if (f.has("schedule")) c.schedule = parse_schedule(f.require("schedule"));
  c.multi_level = f.get_or<bool>("multi_level", c.multi_level);
  c.batch_size = f.get_or<std::size_t>("batch_size", c.batch_size);
  f.finish();
  c.validate();
  return c;
}

std::filesystem::path existing(const std::filesystem::path& base, const std::string& rel, const std::string& field) {
  std::filesystem::path p = rel;
  if (p.is_relative()) p = base / p;
  if (!std::filesystem::exists(p)) throw ConfigError(fmt::format("'{}' refers to missing file {}", field, p.string()));
  return p;
}

}  // namespace

GenerationSpec parse_generation(std::string_view json_text) { return parse_generation_json(parse_text(json_text), ""); }

ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir) {
  const json j = parse_text(json_text);
  Fields f(j, "");
  ExperimentConfig cfg;

  Fields data(f.require("data"), "data");
  if (data.has("generate")) {
    cfg.data = parse_generation_json(data.require("generate"), "data.generate");
  } else {
    DataFiles files;
    files.source = existing(base_dir, data.get<std::string>("source"), "data.source");
    files.target = existing(base_dir, data.get<std::string>("target"), "data.target");
    files.target_eval = existing(base_dir, data.get<std::string>("target_eval"), "data.target_eval");
    cfg.data = files;
  }
  data.finish();

  cfg.model = parse_model(f.require("model"));
  cfg.train = parse_train(f.require("train"));
  if (cfg.train.multi_level && !std::holds_alternative<SegNetSpec>(cfg.model)) {
    throw ConfigError("'train.multi_level' needs a segnet model");
  }
  if (f.has("out")) cfg.out = f.get<std::string>("out");
  cfg.repeat_seeds = array_of<std::uint64_t>(f.require("repeat_seeds"), "repeat_seeds");
  if (cfg.repeat_seeds.empty()) throw ConfigError("'repeat_seeds' must list at least one seed");
  f.finish();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_text(path), path.parent_path());
}

GenerationSpec load_generation(const std::filesystem::path& path) { return parse_generation(read_text(path)); }

void set_seed(GenerationSpec& spec, std::uint64_t seed) {
  std::visit([seed](auto& s) { s.seed = seed; }, spec);
}

DomainPair generate(const GenerationSpec& spec) {
  if (const auto* c = std::get_if<ClassificationDomainSpec>(&spec)) return gen_classification_pair(*c);
  return gen_segmentation_pair(std::get<SegmentationDomainSpec>(spec));
}

ModelSpec fit_model(ModelSpec model, const Dataset& data) {
  if (auto* m = std::get_if<MlpSpec>(&model)) {
    if (data.kind != DatasetKind::Classification) throw ConfigError("an mlp model needs a classification dataset");
    m->input_dim = data.channels();
    m->num_classes = data.num_classes;
  } else {
    auto& s = std::get<SegNetSpec>(model);
    if (data.kind != DatasetKind::Segmentation) throw ConfigError("a segnet model needs a segmentation dataset");
    s.in_channels = data.channels();
    s.num_classes = data.num_classes;
  }
  std::visit([](const auto& s) { s.validate(); }, model);
  return model;
}

}  // namespace msq::cli

#include "xnet/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "xnet/error.hpp"
#include "xnet/rng.hpp"

namespace xnet {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a real number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::string real_text(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "seed") seed = to_u64(key, v);
  else if (key == "data_dir") data_dir = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "input_height" || key == "input_width" || key == "num_classes" || key == "base_filters" ||
           key == "filters_per_stage" || key == "cross_module_skip") {
    std::map<std::string, std::string> kv{{key, v}};
    const ArchConfig parsed = ArchConfig::from_map(kv);
    if (key == "input_height") arch.input_height = parsed.input_height;
    else if (key == "input_width") arch.input_width = parsed.input_width;
    else if (key == "num_classes") arch.num_classes = parsed.num_classes;
    else if (key == "base_filters") arch.base_filters = parsed.base_filters;
    else if (key == "filters_per_stage") arch.filters_per_stage = parsed.filters_per_stage;
    else arch.cross_module_skip = parsed.cross_module_skip;
  }
  else if (key == "l2_lambda") arch.l2_lambda = train.l2_lambda = to_real(key, v);
  else if (key == "learning_rate") train.learning_rate = to_real(key, v);
  else if (key == "batch_size") train.batch_size = to_u64(key, v);
  else if (key == "beta1") train.beta1 = to_real(key, v);
  else if (key == "beta2") train.beta2 = to_real(key, v);
  else if (key == "epsilon") train.epsilon = to_real(key, v);
  else if (key == "patience") train.patience = to_u64(key, v);
  else if (key == "max_epochs") train.max_epochs = to_u64(key, v);
  else if (key == "min_delta") train.min_delta = to_real(key, v);
  else if (key == "threads") train.threads = to_u64(key, v);
  else if (key == "augment") augment = to_bool(key, v);
  else if (key == "elastic_alpha") {
    if (v == "auto") augmentation.elastic_alpha.reset(); else augmentation.elastic_alpha = to_real(key, v);
  } else if (key == "elastic_sigma") {
    if (v == "auto") augmentation.elastic_sigma.reset(); else augmentation.elastic_sigma = to_real(key, v);
  }
  else if (key == "rotation_max") augmentation.rotation_max = to_real(key, v);
  else if (key == "shear_max") augmentation.shear_max = to_real(key, v);
  else if (key == "translate_max") augmentation.translate_max = to_real(key, v);
  else if (key == "crop_fraction_min") augmentation.crop_fraction_min = to_real(key, v);
  else if (key == "crop_probability") augmentation.crop_probability = to_real(key, v);
  else if (key == "per_class_target") augmentation.per_class_target = to_u64(key, v);
  else if (key == "soft_tissue_threshold") soft_tissue_threshold = to_real(key, v);
  else if (key == "soft_tissue_threshold_overrides") {
    soft_tissue_threshold_overrides.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("'" + key + "' entries must be body_part:threshold, got '" + item + "'");
      soft_tissue_threshold_overrides[trim(item.substr(0, colon))] = to_real(key, trim(item.substr(colon + 1)));
    }
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::validate() const {
  arch.validate();
  train.validate();
  augmentation.validate();
  if (!(soft_tissue_threshold >= 0.0 && soft_tissue_threshold <= 1.0)) {
    throw ConfigError("soft_tissue_threshold must be in [0, 1]");
  }
  for (const auto& [part, tau] : soft_tissue_threshold_overrides) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("threshold override for '" + part + "' must be in [0, 1]");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# effective configuration\n";
  os << "seed = " << seed << "\n";
  os << "data_dir = " << data_dir << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << arch.to_text();
  os << "learning_rate = " << real_text(train.learning_rate) << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "beta1 = " << real_text(train.beta1) << "\n";
  os << "beta2 = " << real_text(train.beta2) << "\n";
  os << "epsilon = " << real_text(train.epsilon) << "\n";
  os << "patience = " << train.patience << "\n";
  os << "max_epochs = " << train.max_epochs << "\n";
  os << "min_delta = " << real_text(train.min_delta) << "\n";
  os << "threads = " << train.threads << "\n";
  os << "augment = " << (augment ? "true" : "false") << "\n";
  os << "elastic_alpha = " << (augmentation.elastic_alpha ? real_text(*augmentation.elastic_alpha) : "auto") << "\n";
  os << "elastic_sigma = " << (augmentation.elastic_sigma ? real_text(*augmentation.elastic_sigma) : "auto") << "\n";
  os << "rotation_max = " << real_text(augmentation.rotation_max) << "\n";
  os << "shear_max = " << real_text(augmentation.shear_max) << "\n";
  os << "translate_max = " << real_text(augmentation.translate_max) << "\n";
  os << "crop_fraction_min = " << real_text(augmentation.crop_fraction_min) << "\n";
  os << "crop_probability = " << real_text(augmentation.crop_probability) << "\n";
  os << "per_class_target = " << augmentation.per_class_target << "\n";
  os << "soft_tissue_threshold = " << real_text(soft_tissue_threshold) << "\n";
  os << "soft_tissue_threshold_overrides = ";
  bool first = true;
  for (const auto& [part, tau] : soft_tissue_threshold_overrides) {
    os << (first ? "" : ",") << part << ":" << real_text(tau);
    first = false;
  }
  os << "\n";
  return os.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = train_seed();
  t.l2_lambda = arch.l2_lambda;
  return t;
}

AugmentConfig RunConfig::effective_augment() const {
  AugmentConfig a = augmentation;
  a.seed = augment_seed();
  return a;
}

}  // namespace xnet

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "xnet/architecture.hpp"
#include "xnet/augmentation.hpp"
#include "xnet/rng.hpp"
#include "xnet/training.hpp"

namespace xnet {

// Everything a run needs, read from `key = value` lines (`#` starts a
// comment). Unknown keys are rejected; missing keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "out";
  ArchConfig arch;
  TrainConfig train;
  bool augment = true;
  AugmentConfig augmentation;
  double soft_tissue_threshold = 0.0;
  // body part -> threshold, written as "knee:0.95,hand:0.9"; ships empty.
  std::map<std::string, double> soft_tissue_threshold_overrides;

  // Applies one setting. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Effective configuration listing every key; parsing it reproduces *this.
  std::string to_text() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Seeds for each consumer, derived from `seed` and the component name.
  std::uint64_t init_seed() const { return derive_seed(seed, "init"); }
  std::uint64_t train_seed() const { return derive_seed(seed, "train"); }
  std::uint64_t augment_seed() const { return derive_seed(seed, "augment"); }

  // Copies carrying the derived seeds and the shared l2_lambda.
  TrainConfig effective_train() const;
  AugmentConfig effective_augment() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace xnet

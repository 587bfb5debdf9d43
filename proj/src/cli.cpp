#include "xnet/cli.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "xnet/architecture.hpp"
#include "xnet/augmentation.hpp"
#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/error.hpp"
#include "xnet/evaluation.hpp"
#include "xnet/rng.hpp"
#include "xnet/training.hpp"

namespace fs = std::filesystem;

namespace xnet {
namespace {

constexpr std::uint8_t kPalette[3][3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !(os << text)) throw IoError("cannot write " + path.string());
}

std::string read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

Tensor4 single_input(const ImageF& image) {
  Tensor4 t(Shape4{1, 1, image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), t.data().begin());
  return t;
}

// Options shared by the config-driven subcommands.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "Run configuration file (key = value lines)");
    app->add_option("--set", sets, "Override a configuration key: key=value (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      std::string key = kv.substr(0, eq);
      key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
      cfg.set(key, kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

// ---- synth ---------------------------------------------------------------------

struct SynthArgs {
  std::size_t count = 0;
  std::string profiles = "limb,joint,implant";
  std::uint64_t seed = 0;
  std::string out;
  std::size_t size = 64;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  std::vector<PhantomProfile> profiles;
  std::stringstream ss(a.profiles);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) profiles.push_back(parse_profile(item));
  }
  if (profiles.empty()) throw ConfigError("--profiles lists no profile");
  if (a.size < 8) throw ConfigError("--size must be at least 8");

  const fs::path root(a.out);
  make_dirs(root / "images");
  make_dirs(root / "masks");
  DatasetManifest manifest;
  const std::uint64_t base = derive_seed(a.seed, "synth");
  for (std::size_t i = 0; i < a.count; ++i) {
    const PhantomProfile profile = profiles[i % profiles.size()];
    const Phantom p = synthesize_phantom(mix_seed(base, i), profile, a.size, a.size);
    std::ostringstream id;
    id << to_string(profile) << "_" << std::setw(4) << std::setfill('0') << i;
    ManifestRow row;
    row.id = id.str();
    row.image = "images/" + row.id + ".pgm";
    row.mask = "masks/" + row.id + ".pgm";
    row.body_part = std::string(to_string(profile));
    save_image(p.sample.image, root / row.image);
    save_mask(p.sample.mask, root / row.mask);
    manifest.rows.push_back(std::move(row));
  }
  if (a.count >= 3) split_manifest(manifest, a.seed);
  manifest.save(root / "manifest.csv");
  out << "wrote " << a.count << " phantoms to " << root.string() << "\n";
  return kExitOk;
}

// ---- split ---------------------------------------------------------------------

int cmd_split(const std::string& data, std::uint64_t seed, std::ostream& out) {
  const fs::path csv = fs::path(data) / "manifest.csv";
  DatasetManifest manifest = DatasetManifest::load(csv);
  split_manifest(manifest, seed);
  manifest.save(csv);
  out << "train " << manifest.rows_in(Split::Train).size() << ", val " << manifest.rows_in(Split::Val).size()
      << ", test " << manifest.rows_in(Split::Test).size() << "\n";
  return kExitOk;
}

// ---- augment -------------------------------------------------------------------

int cmd_augment(const RunConfig& cfg, const std::string& in_dir, const std::string& out_dir, std::ostream& out) {
  const fs::path src(in_dir);
  const fs::path dst(out_dir);
  const DatasetManifest manifest = DatasetManifest::load(src / "manifest.csv");
  manifest.check_files(src);

  std::vector<SegmentationSample> train_samples;
  for (const ManifestRow* r : manifest.rows_in(Split::Train)) {
    SegmentationSample s{load_image(src / r->image), load_mask(src / r->mask), r->body_part, r->id};
    s.validate();
    train_samples.push_back(std::move(s));
  }
  if (train_samples.empty()) throw ConfigError("augment: manifest has no training rows");

  make_dirs(dst / "images");
  make_dirs(dst / "masks");
  DatasetManifest result;
  for (const AugmentedSample& a : balance_dataset(train_samples, cfg.effective_augment())) {
    ManifestRow row;
    row.id = a.sample.source_id;
    row.image = "images/" + row.id + ".pgm";
    row.mask = "masks/" + row.id + ".pgm";
    row.body_part = a.sample.body_part;
    row.split = Split::Train;
    row.provenance = a.provenance;
    save_image(a.sample.image, dst / row.image);
    save_mask(a.sample.mask, dst / row.mask);
    result.rows.push_back(std::move(row));
  }
  for (const ManifestRow& r : manifest.rows) {
    if (r.split == Split::Train) continue;
    ManifestRow row = r;
    row.image = "images/" + r.id + ".pgm";
    row.mask = "masks/" + r.id + ".pgm";
    row.provenance = "source=" + r.id + ";original";
    save_image(load_image(src / r.image), dst / row.image);
    save_mask(load_mask(src / r.mask), dst / row.mask);
    result.rows.push_back(std::move(row));
  }
  result.save(dst / "manifest.csv");
  write_text(dst / "effective_config.txt", cfg.to_text());
  out << "wrote " << result.rows.size() << " rows to " << dst.string() << "\n";
  return kExitOk;
}

// ---- train ---------------------------------------------------------------------

std::vector<TrainingExample> examples_for(const RunConfig& cfg, const DatasetManifest& manifest, Split split) {
  const auto rows = manifest.rows_in(split);
  std::vector<TrainingExample> out;
  for (const auto& s : load_samples(cfg.data_dir, rows, cfg.arch.input_height, cfg.arch.input_width)) {
    out.push_back(make_example(s));
  }
  return out;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path data(cfg.data_dir);
  const fs::path dst(cfg.out_dir);
  const DatasetManifest manifest = DatasetManifest::load(data / "manifest.csv");
  manifest.check_files(data);
  make_dirs(dst);
  write_text(dst / "effective_config.txt", cfg.to_text());

  std::vector<TrainingExample> train_set;
  const auto train_rows = manifest.rows_in(Split::Train);
  auto train_samples = load_samples(data, train_rows, cfg.arch.input_height, cfg.arch.input_width);
  if (cfg.augment) {
    for (const auto& a : balance_dataset(train_samples, cfg.effective_augment())) {
      train_set.push_back(make_example(a.sample));
    }
  } else {
    for (const auto& s : train_samples) train_set.push_back(make_example(s));
  }
  const std::vector<TrainingExample> val_set = examples_for(cfg, manifest, Split::Val);
  err << "training on " << train_set.size() << " samples, validating on " << val_set.size() << "\n";

  const TrainResult result =
      train(build_xnet(cfg.arch, cfg.init_seed()), train_set, val_set, cfg.effective_train(),
            [&err](const EpochRecord& r, bool improved, const ModelParams&) {
              err << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss
                  << " val_accuracy " << r.val_accuracy << (improved ? " *" : "") << "\n";
            });
  save_checkpoint(result.best, dst / "model.ckpt");
  result.log.save(dst / "training_log.csv");
  out << "best epoch " << result.best_epoch << (result.stopped_early ? " (stopped early)" : "") << "; wrote "
      << (dst / "model.ckpt").string() << "\n";
  return kExitOk;
}

// ---- predict / eval ------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<std::string> images;
  std::string out;
};

std::vector<const ManifestRow*> select_rows(const DatasetManifest& manifest, const std::string& split) {
  if (split == "all") {
    std::vector<const ManifestRow*> rows;
    for (const auto& r : manifest.rows) rows.push_back(&r);
    return rows;
  }
  return manifest.rows_in(parse_split(split));
}

ImageF network_input(const ImageF& raw, const ArchConfig& arch) {
  return preprocess(resize_bilinear(raw, arch.input_height, arch.input_width));
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.checkpoint);
  std::vector<std::pair<std::string, fs::path>> inputs;
  if (!a.data.empty()) {
    const fs::path data(a.data);
    const DatasetManifest manifest = DatasetManifest::load(data / "manifest.csv");
    for (const ManifestRow* r : select_rows(manifest, a.split)) inputs.emplace_back(r->id, data / r->image);
  }
  for (const auto& img : a.images) inputs.emplace_back(fs::path(img).stem().string(), fs::path(img));
  if (inputs.empty()) throw ConfigError("predict: give --data or --images");

  const fs::path dst(a.out);
  make_dirs(dst / "masks");
  make_dirs(dst / "render");
  make_dirs(dst / "probs");
  for (const auto& [id, path] : inputs) {
    const ProbabilityMap probs = predict(params, single_input(network_input(load_image(path), params.config)));
    const Mask pred = probs.argmax(0);
    save_mask(pred, dst / "masks" / (id + ".pgm"));
    save_mask_render(pred, dst / "render" / (id + ".ppm"));
    save_probabilities(probs, 0, dst / "probs" / (id + ".xprob"));
  }
  out << "predicted " << inputs.size() << " images into " << dst.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string predictions;
  std::string split = "test";
  std::optional<double> tau;
};

int cmd_eval(const RunConfig& cfg, const EvalArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.predictions.empty()) {
    throw ConfigError("eval: give exactly one of --checkpoint and --predictions");
  }
  const fs::path data(cfg.data_dir);
  const DatasetManifest manifest = DatasetManifest::load(data / "manifest.csv");
  const auto rows = select_rows(manifest, a.split);
  if (rows.empty()) throw ConfigError("eval: no rows in split '" + a.split + "'");

  std::optional<ModelParams> params;
  if (!a.checkpoint.empty()) params = load_checkpoint(a.checkpoint);
  PixelPool pool;
  for (const ManifestRow* r : rows) {
    ProbabilityMap probs;
    if (params) {
      probs = predict(*params, single_input(network_input(load_image(data / r->image), params->config)));
    } else {
      probs = load_probabilities(fs::path(a.predictions) / "probs" / (r->id + ".xprob"));
    }
    if (pool.num_classes == 0) pool.num_classes = probs.num_classes();
    const Mask truth = resize_nearest(load_mask(data / r->mask), probs.height(), probs.width());
    pool.append(probs, 0, truth, r->body_part);
  }

  const double tau = a.tau.value_or(cfg.soft_tissue_threshold);
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("soft-tissue threshold must be in [0, 1]");
  const EvaluationReport report = evaluate(pool, tau, cfg.soft_tissue_threshold_overrides);

  const fs::path dst(cfg.out_dir);
  make_dirs(dst);
  write_metrics_csv(report, dst / "metrics.csv");
  const auto names = class_names(pool.num_classes);
  for (std::size_t k = 0; k < report.roc.size(); ++k) {
    if (!report.roc[k].points.empty()) write_roc_csv(report.roc[k], dst / ("roc_" + names[k] + ".csv"));
  }
  write_histogram_csv(report.histogram, dst / "confidence_histogram.csv");
  out << format_summary(report);
  return kExitOk;
}

}  // namespace

void save_probabilities(const ProbabilityMap& map, std::size_t n, const fs::path& path) {
  const std::size_t k = map.num_classes(), h = map.height(), w = map.width();
  std::string bytes = "XNETPROB 1\n" + std::to_string(k) + " " + std::to_string(h) + " " + std::to_string(w) + "\n";
  bytes.reserve(bytes.size() + 4 * k * h * w);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(map.prob(n, c, y, x))));
      }
    }
  }
  write_text(path, bytes);
}

ProbabilityMap load_probabilities(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  const std::string magic = "XNETPROB 1\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw FormatError("not a probability file: " + path.string(), 0);
  const auto eol = bytes.find('\n', magic.size());
  if (eol == std::string::npos) throw FormatError("truncated probability header", magic.size());
  std::istringstream dims(bytes.substr(magic.size(), eol - magic.size()));
  std::size_t k = 0, h = 0, w = 0;
  if (!(dims >> k >> h >> w) || k < 2 || h == 0 || w == 0) {
    throw FormatError("bad probability dimensions", magic.size());
  }
  const std::size_t start = eol + 1;
  const std::size_t count = k * h * w;
  if (bytes.size() != start + 4 * count) {
    throw FormatError("probability payload has " + std::to_string(bytes.size() - start) + " bytes, expected " +
                          std::to_string(4 * count),
                      std::min(bytes.size(), start + 4 * count));
  }
  Tensor4 t(Shape4{1, k, h, w});
  auto data = t.data();
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, start + 4 * i)));
  }
  // float32 storage perturbs the per-pixel sums slightly; restore them.
  for (std::size_t p = 0; p < h * w; ++p) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += data[c * h * w + p];
    if (sum > 0.0) {
      for (std::size_t c = 0; c < k; ++c) data[c * h * w + p] /= sum;
    }
  }
  return ProbabilityMap::from_probabilities(std::move(t));
}

void save_mask_render(const Mask& mask, const fs::path& path) {
  std::string bytes = "P6\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (std::uint8_t v : mask.pixels) {
    if (v > 2) throw DomainError("render: mask value " + std::to_string(v) + " has no palette entry");
    bytes.append(reinterpret_cast<const char*>(kPalette[v]), 3);
  }
  write_text(path, bytes);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual encoder-decoder X-ray segmentation tool", "xnet"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  synth_cmd->add_option("--count", synth.count, "Number of phantoms")->required();
  synth_cmd->add_option("--profiles", synth.profiles, "Comma-separated profiles: limb, joint, implant");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();
  synth_cmd->add_option("--size", synth.size, "Image side in pixels");

  std::string split_data;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "Assign train/val/test splits in a dataset manifest");
  split_cmd->add_option("--data", split_data, "Dataset directory")->required();
  split_cmd->add_option("--seed", split_seed, "Random seed");

  ConfigOptions aug_opts;
  std::string aug_in, aug_out;
  auto* aug_cmd = app.add_subcommand("augment", "Balance the training split by augmentation");
  aug_opts.attach(aug_cmd);
  aug_cmd->add_option("--data", aug_in, "Input dataset directory (defaults to data_dir)");
  aug_cmd->add_option("--out", aug_out, "Output dataset directory (defaults to out_dir)");

  ConfigOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_opts.attach(train_cmd);

  PredictArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "Segment images with a trained checkpoint");
  pred_cmd->add_option("--checkpoint", pred.checkpoint, "Checkpoint file")->required();
  pred_cmd->add_option("--data", pred.data, "Dataset directory with manifest.csv");
  pred_cmd->add_option("--split", pred.split, "Manifest split to predict: train, val, test or all");
  pred_cmd->add_option("--images", pred.images, "Individual 16-bit PGM images");
  pred_cmd->add_option("--out", pred.out, "Output directory")->required();

  ConfigOptions eval_opts;
  EvalArgs ev;
  std::string eval_data, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Compute metrics on a dataset split");
  eval_opts.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
  eval_cmd->add_option("--predictions", ev.predictions, "Directory written by predict");
  eval_cmd->add_option("--data", eval_data, "Dataset directory (defaults to data_dir)");
  eval_cmd->add_option("--split", ev.split, "Manifest split: train, val, test or all");
  eval_cmd->add_option("--soft-tissue-threshold", ev.tau, "Soft tissue only where its probability exceeds this");
  eval_cmd->add_option("--out", eval_out, "Report directory (defaults to out_dir)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*split_cmd) return cmd_split(split_data, split_seed, out);
    if (*aug_cmd) {
      RunConfig cfg = aug_opts.resolve();
      return cmd_augment(cfg, aug_in.empty() ? cfg.data_dir : aug_in, aug_out.empty() ? cfg.out_dir : aug_out, out);
    }
    if (*train_cmd) return cmd_train(train_opts.resolve(), out, err);
    if (*pred_cmd) return cmd_predict(pred, out);
    if (*eval_cmd) {
      RunConfig cfg = eval_opts.resolve();
      if (!eval_data.empty()) cfg.data_dir = eval_data;
      if (!eval_out.empty()) cfg.out_dir = eval_out;
      return cmd_eval(cfg, ev, out);
    }
  } catch (const NumericError& e) {
    err << "numeric error in layer " << e.layer() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitUsage;
}

}  // namespace xnet

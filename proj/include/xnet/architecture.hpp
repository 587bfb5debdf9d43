#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xnet/autodiff.hpp"
#include "xnet/image.hpp"
#include "xnet/probability.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

// Shape of the dual encoder-decoder network. Two modules, 3x3 kernels.
struct ArchConfig {
  std::size_t input_height = 200;
  std::size_t input_width = 200;
  std::size_t num_classes = 3;
  std::size_t base_filters = 32;
  // Filters at each encoder depth; empty means {base, 2*base, 4*base}.
  std::vector<std::size_t> filters_per_stage;
  // Concatenate module-1 encoder features into module-2 decoders as well.
  bool cross_module_skip = false;
  double l2_lambda = 5e-4;

  static constexpr std::size_t kModules = 2;
  static constexpr std::size_t kKernelSize = 3;

  // 64x64 input with 8 base filters.
  static ArchConfig desk();

  std::vector<std::size_t> stage_filters() const;
  std::size_t poolings_per_module() const { return stage_filters().size() - 1; }
  // Throws ConfigError.
  void validate() const;

  // Canonical `key = value` lines; the fingerprint hashes exactly this text.
  std::string to_text() const;
  static ArchConfig from_map(const std::map<std::string, std::string>& kv);
  std::uint64_t fingerprint() const;

  friend bool operator==(const ArchConfig& a, const ArchConfig& b) {
    return a.input_height == b.input_height && a.input_width == b.input_width && a.num_classes == b.num_classes &&
           a.base_filters == b.base_filters && a.stage_filters() == b.stage_filters() &&
           a.cross_module_skip == b.cross_module_skip && a.l2_lambda == b.l2_lambda;
  }
};

struct LayerShape {
  std::string id;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 3;
  bool relu = true;

  std::size_t parameter_count() const {
    return out_channels * in_channels * kernel * kernel + out_channels;
  }
};

// Every convolution of the network in evaluation order.
std::vector<LayerShape> layer_shapes(const ArchConfig& config);

struct LayerTensors {
  std::string id;
  Tensor4 kernel;  // (cout, cin, k, k)
  Tensor4 bias;    // (1, cout, 1, 1)
};

struct ModelParams {
  ArchConfig config;
  std::vector<LayerTensors> layers;

  std::uint64_t fingerprint() const { return config.fingerprint(); }
  std::size_t parameter_count() const;
  // Throws ConfigError when a layer disagrees with config.
  void check_consistent() const;
  const LayerTensors& layer(const std::string& id) const;
  LayerTensors& layer(const std::string& id);
};

// He-normal kernels, zero biases; bit-identical for equal (config, seed).
ModelParams build_xnet(const ArchConfig& config, std::uint64_t seed);

// lambda * sum of squared kernel weights (biases excluded).
double l2_penalty(const ModelParams& params, double lambda);

struct Gradients {
  std::vector<LayerTensors> layers;  // mirrors ModelParams::layers
  double data_loss = 0.0;            // mean cross-entropy
  double penalty = 0.0;              // l2 term

  static Gradients zeros_like(const ModelParams& params);
  void add(const Gradients& other);
};

// One forward/backward session over the network graph.
class XNetGraph {
 public:
  explicit XNetGraph(const ModelParams& params);

  // batch: (n, 1, h, w) matching the configured input size.
  ProbabilityMap forward(const Tensor4& batch, bool train_mode);

  // Gradient of mean cross-entropy + l2 penalty. Requires a preceding
  // train-mode forward and consumes it. `normalizer` overrides the pixel
  // count used by the mean (for splitting a batch across graphs).
  Gradients backward(std::span<const Mask> labels, double l2_lambda, double normalizer = 0.0);

  // Activation recorded under `name` by the last forward, e.g. "m1.enc0",
  // "m1.dec1.concat", "logits".
  const Tensor4& activation(const std::string& name) const;
  std::vector<std::string> activation_names() const;

  struct SkipLink {
    std::string concat;      // concatenated activation
    std::size_t offset = 0;  // channel where the copied features start
    std::string encoder;     // copied encoder activation
  };
  const std::vector<SkipLink>& skip_links() const { return skips_; }

 private:
  Var conv_layer(std::size_t index, Var x);

  const ModelParams& params_;
  std::optional<Tape> tape_;
  std::vector<Var> kernel_vars_;
  std::vector<Var> bias_vars_;
  std::map<std::string, Var> named_;
  std::vector<SkipLink> skips_;
  Var logits_{};
  bool ready_for_backward_ = false;
};

// Inference-only forward pass.
ProbabilityMap predict(const ModelParams& params, const Tensor4& batch);

// Mean cross-entropy + penalty and its gradient, computed one sample per
// graph and summed in sample order; independent of `threads`.
Gradients compute_gradients(const ModelParams& params, const Tensor4& batch,
                            std::span<const Mask> labels, double l2_lambda, std::size_t threads = 1);

// Checkpoint container: text header with the architecture, then per layer
// (id, shape, little-endian float32 values).
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
// Rejects fingerprint mismatches against the stored header and, when given,
// against `expected`.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const std::optional<ArchConfig>& expected = std::nullopt);

}  // namespace xnet

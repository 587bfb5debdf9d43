#include "xnet/architecture.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "xnet/error.hpp"
#include "xnet/rng.hpp"

namespace xnet {
namespace {

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a real number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_size(key, item.substr(b, e - b + 1)));
  }
  return out;
}

}  // namespace

ArchConfig ArchConfig::desk() {
  ArchConfig c;
  c.input_height = 64;
  c.input_width = 64;
  c.base_filters = 8;
  return c;
}

std::vector<std::size_t> ArchConfig::stage_filters() const {
  if (!filters_per_stage.empty()) return filters_per_stage;
  return {base_filters, 2 * base_filters, 4 * base_filters};
}

void ArchConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  const auto filters = stage_filters();
  if (filters.empty()) throw ConfigError("filters_per_stage must not be empty");
  for (std::size_t f : filters) {
    if (f == 0) throw ConfigError("filter counts must be positive");
  }
  const std::size_t divisor = std::size_t{1} << (filters.size() - 1);
  if (input_height == 0 || input_height % divisor != 0) {
    throw ConfigError("input_height " + std::to_string(input_height) + " is not divisible by " +
                      std::to_string(divisor));
  }
  if (input_width == 0 || input_width % divisor != 0) {
    throw ConfigError("input_width " + std::to_string(input_width) + " is not divisible by " +
                      std::to_string(divisor));
  }
  if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
}

std::string ArchConfig::to_text() const {
  std::ostringstream os;
  os << "input_height = " << input_height << "\n";
  os << "input_width = " << input_width << "\n";
  os << "num_classes = " << num_classes << "\n";
  os << "base_filters = " << base_filters << "\n";
  os << "filters_per_stage = ";
  const auto filters = stage_filters();
  for (std::size_t i = 0; i < filters.size(); ++i) os << (i ? "," : "") << filters[i];
  os << "\n";
  os << "cross_module_skip = " << (cross_module_skip ? "true" : "false") << "\n";
  os << "l2_lambda = " << format_real(l2_lambda) << "\n";
  return os.str();
}

ArchConfig ArchConfig::from_map(const std::map<std::string, std::string>& kv) {
  ArchConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "input_height") c.input_height = parse_size(key, value);
    else if (key == "input_width") c.input_width = parse_size(key, value);
    else if (key == "num_classes") c.num_classes = parse_size(key, value);
    else if (key == "base_filters") c.base_filters = parse_size(key, value);
    else if (key == "filters_per_stage") c.filters_per_stage = parse_size_list(key, value);
    else if (key == "cross_module_skip") c.cross_module_skip = parse_bool(key, value);
    else if (key == "l2_lambda") c.l2_lambda = parse_real(key, value);
    else throw ConfigError("unknown architecture key '" + key + "'");
  }
  return c;
}

std::uint64_t ArchConfig::fingerprint() const { return fnv1a64(to_text()); }

std::vector<LayerShape> layer_shapes(const ArchConfig& config) {
  config.validate();
  const auto f = config.stage_filters();
  const std::size_t depth = f.size();
  std::vector<LayerShape> out;
  for (std::size_t m = 1; m <= ArchConfig::kModules; ++m) {
    const std::string prefix = "m" + std::to_string(m);
    std::size_t in = m == 1 ? 1 : f[0];
    for (std::size_t d = 0; d < depth; ++d) {
      const std::string id = prefix + ".enc" + std::to_string(d);
      out.push_back({id + ".conv1", f[d], in, 3, true});
      out.push_back({id + ".conv2", f[d], f[d], 3, true});
      in = f[d];
    }
    for (std::size_t d = depth - 1; d-- > 0;) {
      const std::string id = prefix + ".dec" + std::to_string(d);
      std::size_t cat = f[d + 1] + f[d];
      if (m > 1 && config.cross_module_skip) cat += f[d];
      out.push_back({id + ".conv1", f[d], cat, 3, true});
      out.push_back({id + ".conv2", f[d], f[d], 3, true});
    }
  }
  out.push_back({"head", config.num_classes, f[0], 1, false});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.kernel.size() + l.bias.size();
  return total;
}

void ModelParams::check_consistent() const {
  const auto shapes = layer_shapes(config);
  if (shapes.size() != layers.size()) {
    throw ConfigError("model has " + std::to_string(layers.size()) + " layers, architecture needs " +
                      std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    const auto& l = layers[i];
    const Shape4 ks{s.out_channels, s.in_channels, s.kernel, s.kernel};
    const Shape4 bs{1, s.out_channels, 1, 1};
    if (l.id != s.id || !(l.kernel.shape() == ks) || !(l.bias.shape() == bs)) {
      throw ConfigError("layer " + std::to_string(i) + " ('" + l.id + "', kernel " +
                        l.kernel.shape().to_string() + ") does not match architecture ('" + s.id +
                        "', kernel " + ks.to_string() + ")");
    }
  }
}

const LayerTensors& ModelParams::layer(const std::string& id) const {
  for (const auto& l : layers) {
    if (l.id == id) return l;
  }
  throw ConfigError("no layer '" + id + "'");
}

LayerTensors& ModelParams::layer(const std::string& id) {
  return const_cast<LayerTensors&>(static_cast<const ModelParams&>(*this).layer(id));
}

ModelParams build_xnet(const ArchConfig& config, std::uint64_t seed) {
  ModelParams p;
  p.config = config;
  const auto shapes = layer_shapes(config);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    Tensor4 kernel(Shape4{s.out_channels, s.in_channels, s.kernel, s.kernel});
    const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
    const double stddev = std::sqrt(2.0 / fan_in);
    Rng rng(mix_seed(seed, i));
    for (Real& w : kernel.data()) w = stddev * rng.normal();
    p.layers.push_back({s.id, std::move(kernel), Tensor4(Shape4{1, s.out_channels, 1, 1})});
  }
  return p;
}

double l2_penalty(const ModelParams& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double total = 0.0;
  for (const auto& l : params.layers) {
    for (Real w : l.kernel.data()) total += w * w;
  }
  return lambda * total;
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  for (const auto& l : params.layers) {
    g.layers.push_back({l.id, Tensor4(l.kernel.shape()), Tensor4(l.bias.shape())});
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto k = layers[i].kernel.data();
    auto b = layers[i].bias.data();
    const auto ok = other.layers[i].kernel.data();
    const auto ob = other.layers[i].bias.data();
    for (std::size_t j = 0; j < k.size(); ++j) k[j] += ok[j];
    for (std::size_t j = 0; j < b.size(); ++j) b[j] += ob[j];
  }
  data_loss += other.data_loss;
  penalty += other.penalty;
}

XNetGraph::XNetGraph(const ModelParams& params) : params_(params) { params_.check_consistent(); }

Var XNetGraph::conv_layer(std::size_t index, Var x) {
  Var y = conv2d(*tape_, x, kernel_vars_[index], bias_vars_[index]);
  return index + 1 == kernel_vars_.size() ? y : relu(*tape_, y);
}

ProbabilityMap XNetGraph::forward(const Tensor4& batch, bool train_mode) {
  const ArchConfig& cfg = params_.config;
  const Shape4 s = batch.shape();
  if (s.c != 1) throw DimensionError("forward: channel axis must be 1 (grayscale), got " + std::to_string(s.c));
  if (s.h != cfg.input_height) {
    throw DimensionError("forward: height axis " + std::to_string(s.h) + " does not match input_height " +
                         std::to_string(cfg.input_height));
  }
  if (s.w != cfg.input_width) {
    throw DimensionError("forward: width axis " + std::to_string(s.w) + " does not match input_width " +
                         std::to_string(cfg.input_width));
  }

  tape_.emplace(train_mode);
  kernel_vars_.clear();
  bias_vars_.clear();
  named_.clear();
  skips_.clear();
  ready_for_backward_ = false;
  for (const auto& l : params_.layers) {
    kernel_vars_.push_back(tape_->leaf(l.kernel, train_mode));
    bias_vars_.push_back(tape_->leaf(l.bias, train_mode));
  }

  const auto filters = cfg.stage_filters();
  const std::size_t depth = filters.size();
  std::size_t layer = 0;
  Var x = tape_->leaf(batch, false);
  named_["input"] = x;
  std::vector<Var> first_module_skips;
  for (std::size_t m = 1; m <= ArchConfig::kModules; ++m) {
    const std::string prefix = "m" + std::to_string(m);
    std::vector<Var> encoder;
    for (std::size_t d = 0; d < depth; ++d) {
      if (d > 0) x = maxpool2x2(*tape_, x);
      x = conv_layer(layer++, x);
      x = conv_layer(layer++, x);
      const std::string name = prefix + ".enc" + std::to_string(d);
      named_[name] = x;
      encoder.push_back(x);
    }
    for (std::size_t d = depth - 1; d-- > 0;) {
      const std::string name = prefix + ".dec" + std::to_string(d);
      Var up = upsample_nearest2x(*tape_, x);
      const std::size_t up_channels = tape_->value(up).shape().c;
      Var cat = concat_channels(*tape_, up, encoder[d]);
      skips_.push_back({name + ".concat", up_channels, prefix + ".enc" + std::to_string(d)});
      if (m > 1 && cfg.cross_module_skip) {
        const std::size_t offset = tape_->value(cat).shape().c;
        cat = concat_channels(*tape_, cat, first_module_skips[d]);
        skips_.push_back({name + ".concat", offset, "m1.enc" + std::to_string(d)});
      }
      named_[name + ".concat"] = cat;
      x = conv_layer(layer++, cat);
      x = conv_layer(layer++, x);
      named_[name] = x;
    }
    if (m == 1) first_module_skips = encoder;
  }
  logits_ = conv_layer(layer++, x);
  named_["logits"] = logits_;
  ready_for_backward_ = train_mode;
  return softmax_pixelwise(tape_->value(logits_));
}

Gradients XNetGraph::backward(std::span<const Mask> labels, double l2_lambda, double normalizer) {
  if (!ready_for_backward_) throw StateError("backward called without a preceding train-mode forward");
  ready_for_backward_ = false;
  Tape& t = *tape_;
  Var data_loss = softmax_cross_entropy(t, logits_, labels, nullptr, normalizer);
  Var penalty = l2_penalty(t, kernel_vars_, l2_lambda);
  Var total = add_scalars(t, data_loss, penalty);
  t.backward(total);

  Gradients g;
  g.data_loss = t.value(data_loss).data()[0];
  g.penalty = t.value(penalty).data()[0];
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    const auto dk = t.grad(kernel_vars_[i]);
    const auto db = t.grad(bias_vars_[i]);
    g.layers.push_back({params_.layers[i].id,
                        Tensor4(t.value(kernel_vars_[i]).shape(), std::vector<Real>(dk.begin(), dk.end())),
                        Tensor4(t.value(bias_vars_[i]).shape(), std::vector<Real>(db.begin(), db.end()))});
  }
  return g;
}

const Tensor4& XNetGraph::activation(const std::string& name) const {
  const auto it = named_.find(name);
  if (it == named_.end() || !tape_) throw StateError("no activation named '" + name + "'");
  return tape_->value(it->second);
}

std::vector<std::string> XNetGraph::activation_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : named_) out.push_back(name);
  return out;
}

ProbabilityMap predict(const ModelParams& params, const Tensor4& batch) {
  XNetGraph graph(params);
  return graph.forward(batch, false);
}

Gradients compute_gradients(const ModelParams& params, const Tensor4& batch,
                            std::span<const Mask> labels, double l2_lambda, std::size_t threads) {
  const Shape4 s = batch.shape();
  check_labels(Shape4{s.n, params.config.num_classes, s.h, s.w}, labels);
  const double normalizer = static_cast<double>(s.n * s.plane());
  const std::size_t sample_size = s.c * s.plane();

  std::vector<Gradients> parts(s.n);
  auto run = [&](std::size_t i) {
    Tensor4 one(Shape4{1, s.c, s.h, s.w},
                std::vector<Real>(batch.data().begin() + i * sample_size,
                                  batch.data().begin() + (i + 1) * sample_size));
    XNetGraph graph(params);
    graph.forward(one, true);
    parts[i] = graph.backward(labels.subspan(i, 1), 0.0, normalizer);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, s.n));
  if (workers == 1) {
    for (std::size_t i = 0; i < s.n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < s.n; i += workers) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  Gradients total = Gradients::zeros_like(params);
  for (const auto& part : parts) total.add(part);
  total.penalty = l2_penalty(params, l2_lambda);
  if (l2_lambda != 0.0) {
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      auto g = total.layers[i].kernel.data();
      const auto w = params.layers[i].kernel.data();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0 * l2_lambda * w[j];
    }
  }
  return total;
}

namespace {

constexpr std::string_view kCheckpointMagic = "XNET-CHECKPOINT 1";

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

void put_f32(std::ostream& os, double v) {
  put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::string line() {
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) throw FormatError("checkpoint header truncated", pos_);
    std::string out = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string text(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated", pos_);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

Tensor4 read_tensor(ByteReader& in) {
  Shape4 s;
  s.n = in.u32();
  s.c = in.u32();
  s.h = in.u32();
  s.w = in.u32();
  if (s.size() > (std::size_t{1} << 28)) throw FormatError("implausible tensor shape " + s.to_string(), in.offset());
  std::vector<Real> v(s.size());
  for (Real& x : v) x = in.f32();
  return Tensor4(s, std::move(v));
}

void write_tensor(std::ostream& os, const Tensor4& t) {
  const Shape4 s = t.shape();
  put_u32(os, static_cast<std::uint32_t>(s.n));
  put_u32(os, static_cast<std::uint32_t>(s.c));
  put_u32(os, static_cast<std::uint32_t>(s.h));
  put_u32(os, static_cast<std::uint32_t>(s.w));
  for (Real v : t.data()) put_f32(os, v);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << "\n";
  os << "fingerprint = " << hex64(params.fingerprint()) << "\n";
  os << params.config.to_text();
  os << "layers = " << params.layers.size() << "\n";
  os << "end\n";
  for (const auto& l : params.layers) {
    put_u32(os, static_cast<std::uint32_t>(l.id.size()));
    os.write(l.id.data(), static_cast<std::streamsize>(l.id.size()));
    write_tensor(os, l.kernel);
    write_tensor(os, l.bias);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<ArchConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ByteReader in(std::move(bytes));
  if (in.line() != kCheckpointMagic) throw FormatError("not an xnet checkpoint", 0);

  std::map<std::string, std::string> kv;
  std::string stored_fp;
  std::size_t layer_count = 0;
  for (;;) {
    const std::size_t at = in.offset();
    const std::string line = in.line();
    if (line == "end") break;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("malformed checkpoint header line '" + line + "'", at);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "fingerprint") stored_fp = value;
    else if (key == "layers") layer_count = std::stoul(value);
    else kv[key] = value;
  }

  ModelParams p;
  p.config = ArchConfig::from_map(kv);
  if (hex64(p.config.fingerprint()) != stored_fp) {
    throw ConfigError("checkpoint fingerprint " + stored_fp + " does not match its architecture header (" +
                      hex64(p.config.fingerprint()) + ")");
  }
  if (expected && expected->fingerprint() != p.config.fingerprint()) {
    throw ConfigError("checkpoint fingerprint " + stored_fp + " does not match the configured architecture (" +
                      hex64(expected->fingerprint()) + ")");
  }
  for (std::size_t i = 0; i < layer_count; ++i) {
    LayerTensors l;
    l.id = in.text(in.u32());
    l.kernel = read_tensor(in);
    l.bias = read_tensor(in);
    p.layers.push_back(std::move(l));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after last layer", in.offset());
  p.check_consistent();
  return p;
}

}  // namespace xnet

#include "qkd/models.hpp"

#include <cmath>

#include "qkd/error.hpp"
#include "qkd/rng.hpp"

namespace qkd {

namespace {

LayerSpec conv_layer(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.ksize = ksize;
  l.stride = stride;
  l.pad = pad;
  l.has_bias = bias;
  return l;
}

LayerSpec linear_layer(int in_dim, int out_dim) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.has_bias = true;
  return l;
}

LayerSpec relu_layer() {
  LayerSpec l;
  l.kind = LayerKind::Relu;
  return l;
}

LayerSpec gap_layer() {
  LayerSpec l;
  l.kind = LayerKind::GlobalAvgPool;
  return l;
}

LayerSpec affine_layer(int channels) {
  LayerSpec l;
  l.kind = LayerKind::Affine;
  l.channels = channels;
  return l;
}

LayerSpec block_layer(int in_ch, int out_ch, int stride) {
  LayerSpec l;
  l.kind = LayerKind::ResidualBlock;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.ksize = 3;
  l.stride = stride;
  l.pad = 1;
  return l;
}

void apply_bit_plan(std::vector<LayerSpec>& layers, int bits) {
  const bool disabled = bits >= 32;
  std::vector<std::size_t> parametric;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].parametric()) parametric.push_back(i);
  }
  for (std::size_t idx = 0; idx < parametric.size(); ++idx) {
    LayerSpec& l = layers[parametric[idx]];
    // First and last parametric layers run at 8 bits whatever the target.
    const bool edge = idx == 0 || idx + 1 == parametric.size();
    const int k = edge ? 8 : bits;
    l.weight_quant = QuantSpec::weight(disabled ? 8 : k, !disabled);
    l.act_quant = QuantSpec::activation(disabled ? 8 : k, !disabled);
  }
}

}  // namespace

bool is_known_network(const std::string& name) {
  return name == "mlp-s" || name == "mlp-t" || name == "tiny-cnn-s" || name == "tiny-cnn-t" ||
         name == "mini-resnet-s" || name == "mini-resnet-t";
}

std::string paired_teacher_name(const std::string& student_name) {
  if (student_name.size() < 2 || student_name.substr(student_name.size() - 2) != "-s") {
    throw ConfigError("no paired teacher for network '" + student_name + "'");
  }
  return student_name.substr(0, student_name.size() - 2) + "-t";
}

NetworkSpec make_network_spec(const std::string& name, int bits, int num_classes,
                              InputShape input) {
  if (!is_known_network(name)) throw SpecError("unknown network '" + name + "'");
  if (num_classes < 2) throw SpecError("need at least two classes");
  if (bits < 32 && (bits < 2 || bits > 8)) {
    throw ConfigError("bit-width must be in [2,8] or >=32 for full precision, got " +
                      std::to_string(bits));
  }
  NetworkSpec spec;
  spec.name = name;
  spec.num_classes = num_classes;
  spec.input = input;

  const bool teacher = name.back() == 't';
  if (name.rfind("mlp", 0) == 0) {
    if (input.dim <= 0) throw SpecError("mlp networks need a vector input dimension");
    const int h = teacher ? 64 : 32;
    spec.layers = {linear_layer(input.dim, h), relu_layer(), linear_layer(h, h), relu_layer(),
                   linear_layer(h, num_classes)};
  } else if (name.rfind("tiny-cnn", 0) == 0) {
    if (input.channels <= 0 || input.hw <= 0) throw SpecError("cnn networks need image inputs");
    const int c = teacher ? 16 : 8;
    spec.layers = {conv_layer(input.channels, c, 3, 1, 1, true),
                   relu_layer(),
                   conv_layer(c, 2 * c, 3, 2, 1, true),
                   relu_layer(),
                   conv_layer(2 * c, 2 * c, 3, 2, 1, true),
                   relu_layer(),
                   gap_layer(),
                   linear_layer(2 * c, num_classes)};
  } else {  // mini-resnet
    if (input.channels <= 0 || input.hw <= 0) throw SpecError("cnn networks need image inputs");
    const int c = teacher ? 16 : 8;
    spec.layers = {conv_layer(input.channels, c, 3, 1, 1, false),
                   affine_layer(c),
                   relu_layer(),
                   block_layer(c, c, 1),
                   block_layer(c, 2 * c, 2),
                   block_layer(2 * c, 4 * c, 2),
                   gap_layer(),
                   linear_layer(4 * c, num_classes)};
  }
  apply_bit_plan(spec.layers, bits);
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw SpecError("network '" + name + "' has no layers");
  // Walk the shape through the stack: images carry (channels, side), vectors a dim.
  int ch = input.channels, hw = input.hw, dim = input.dim;
  bool image = ch > 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::ResidualBlock: {
        if (!image) throw SpecError("conv layer " + std::to_string(i) + " on vector input");
        if (l.in_ch != ch) {
          throw SpecError("layer " + std::to_string(i) + ": expects " + std::to_string(l.in_ch) +
                          " channels, gets " + std::to_string(ch));
        }
        const int k = l.kind == LayerKind::ResidualBlock ? 3 : l.ksize;
        if (k > hw + 2 * l.pad) throw SpecError("kernel larger than padded input");
        ch = l.out_ch;
        hw = (hw + 2 * l.pad - k) / l.stride + 1;
        if (l.kind == LayerKind::ResidualBlock && hw < 1) throw SpecError("block shrinks input away");
        break;
      }
      case LayerKind::Linear:
        if (image) throw SpecError("linear layer " + std::to_string(i) + " on image input");
        if (l.in_dim != dim) {
          throw SpecError("layer " + std::to_string(i) + ": expects dim " +
                          std::to_string(l.in_dim) + ", gets " + std::to_string(dim));
        }
        dim = l.out_dim;
        break;
      case LayerKind::Affine:
        if (image) {
          if (l.channels != ch) throw SpecError("affine channel mismatch at layer " + std::to_string(i));
        } else if (l.channels != dim) {
          throw SpecError("affine width mismatch at layer " + std::to_string(i));
        }
        break;
      case LayerKind::GlobalAvgPool:
        if (!image) throw SpecError("global_avg_pool on vector input");
        image = false;
        dim = ch;
        break;
      case LayerKind::Relu:
        break;
    }
  }
  if (image || dim != num_classes) {
    throw SpecError("network '" + name + "' does not end in " + std::to_string(num_classes) +
                    " logits");
  }
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        n += static_cast<std::size_t>(l.out_ch) * l.in_ch * l.ksize * l.ksize;
        if (l.has_bias) n += l.out_ch;
        break;
      case LayerKind::Linear:
        n += static_cast<std::size_t>(l.in_dim) * l.out_dim + l.out_dim;
        break;
      case LayerKind::Affine:
        n += 2 * static_cast<std::size_t>(l.channels);
        break;
      case LayerKind::ResidualBlock: {
        n += 9ull * l.in_ch * l.out_ch + 9ull * l.out_ch * l.out_ch + 4ull * l.out_ch;
        if (l.stride != 1 || l.in_ch != l.out_ch) n += static_cast<std::size_t>(l.in_ch) * l.out_ch + 2ull * l.out_ch;
        break;
      }
      default:
        break;
    }
  }
  return n;
}

void NetworkState::add_param(const std::string& name, Tensor value, ParamKind kind) {
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(value), kind));
}

namespace {

Tensor he_weights(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

NetworkState::NetworkState(NetworkSpec spec, std::uint64_t seed) {
  spec.validate();
  spec_ = std::move(spec);
  Rng rng(seed);
  const auto conv_unit = [&](const std::string& prefix, int in_ch, int out_ch, int k, bool bias) {
    add_param(prefix + ".w", he_weights(rng, {(std::size_t)out_ch, (std::size_t)in_ch, (std::size_t)k, (std::size_t)k},
                                        static_cast<std::size_t>(in_ch) * k * k),
              ParamKind::Weight);
    if (bias) add_param(prefix + ".b", Tensor({(std::size_t)out_ch}), ParamKind::Weight);
    add_param(prefix + ".iw", Tensor::scalar(1.0), ParamKind::Interval);
    add_param(prefix + ".ix", Tensor::scalar(1.0), ParamKind::Interval);
  };
  const auto affine_unit = [&](const std::string& prefix, int channels) {
    add_param(prefix + ".s", Tensor::full({(std::size_t)channels}, 1.0), ParamKind::Weight);
    add_param(prefix + ".b", Tensor({(std::size_t)channels}), ParamKind::Weight);
  };
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string p = "L" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv:
        conv_unit(p, l.in_ch, l.out_ch, l.ksize, l.has_bias);
        break;
      case LayerKind::Linear:
        add_param(p + ".w", he_weights(rng, {(std::size_t)l.in_dim, (std::size_t)l.out_dim},
                                       static_cast<std::size_t>(l.in_dim)),
                  ParamKind::Weight);
        add_param(p + ".b", Tensor({(std::size_t)l.out_dim}), ParamKind::Weight);
        add_param(p + ".iw", Tensor::scalar(1.0), ParamKind::Interval);
        add_param(p + ".ix", Tensor::scalar(1.0), ParamKind::Interval);
        break;
      case LayerKind::Affine:
        affine_unit(p, l.channels);
        break;
      case LayerKind::ResidualBlock: {
        conv_unit(p + ".c1", l.in_ch, l.out_ch, 3, false);
        affine_unit(p + ".a1", l.out_ch);
        conv_unit(p + ".c2", l.out_ch, l.out_ch, 3, false);
        affine_unit(p + ".a2", l.out_ch);
        if (l.stride != 1 || l.in_ch != l.out_ch) {
          conv_unit(p + ".proj", l.in_ch, l.out_ch, 1, false);
          affine_unit(p + ".pa", l.out_ch);
        }
        break;
      }
      default:
        break;
    }
  }
}

NetworkState NetworkState::clone() const {
  NetworkState copy;
  copy.spec_ = spec_;
  copy.mode_ = mode_;
  copy.intervals_initialized_ = intervals_initialized_;
  copy.gated_ste_ = gated_ste_;
  for (const auto& p : params_) {
    copy.index_[p->name] = copy.params_.size();
    copy.params_.push_back(std::make_unique<Parameter>(*p));
  }
  return copy;
}

std::vector<Parameter*> NetworkState::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> NetworkState::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> NetworkState::weight_parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->kind == ParamKind::Weight) out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> NetworkState::interval_parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->kind == ParamKind::Interval) out.push_back(p.get());
  }
  return out;
}

Parameter& NetworkState::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
  return *params_[it->second];
}

const Parameter& NetworkState::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
  return *params_[it->second];
}

bool NetworkState::has_param(const std::string& name) const {
  return index_.count(name) != 0;
}

namespace {

struct ForwardCtx {
  NetworkState& state;
  bool observe = false;
  std::map<std::string, double>* act_max = nullptr;  // per-unit input-activation max
};

// One quantized conv/linear unit. Quantizers apply to the unit's weights
// and input activations; biases stay in full precision.
ag::Value parametric_unit(ForwardCtx& ctx, const std::string& prefix, const LayerSpec& l,
                          LayerKind kind, int stride, int pad, bool bias, ag::Value x) {
  NetworkState& st = ctx.state;
  const bool quantize = st.mode() == PrecisionMode::Quantized && l.weight_quant.enabled;
  if (ctx.observe && ctx.act_max) {
    const Tensor& t = x.tensor();
    double mx = t.size() ? t[0] : 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) mx = std::max(mx, t[i]);
    (*ctx.act_max)[prefix] = mx;
  }
  ag::Value w = ag::leaf(st.param(prefix + ".w"));
  if (quantize) {
    if (!st.intervals_initialized()) {
      throw StateError("quantized forward before interval initialization");
    }
    x = fake_quantize(x, ag::leaf(st.param(prefix + ".ix")), l.act_quant, st.gated_ste());
    w = fake_quantize(w, ag::leaf(st.param(prefix + ".iw")), l.weight_quant, st.gated_ste());
  }
  ag::Value out = kind == LayerKind::Conv ? ag::conv2d(x, w, stride, pad) : ag::matmul(x, w);
  if (bias) out = ag::add_bias(out, ag::leaf(st.param(prefix + ".b")));
  return out;
}

ag::Value affine_unit_fwd(NetworkState& st, const std::string& prefix, ag::Value x) {
  return ag::channel_affine(x, ag::leaf(st.param(prefix + ".s")), ag::leaf(st.param(prefix + ".b")));
}

ag::Value residual_block_fwd(ForwardCtx& ctx, const std::string& prefix, const LayerSpec& l,
                             ag::Value x) {
  ag::Value main = parametric_unit(ctx, prefix + ".c1", l, LayerKind::Conv, l.stride, 1, false, x);
  main = affine_unit_fwd(ctx.state, prefix + ".a1", main);
  main = ag::relu(main);
  main = parametric_unit(ctx, prefix + ".c2", l, LayerKind::Conv, 1, 1, false, main);
  main = affine_unit_fwd(ctx.state, prefix + ".a2", main);
  ag::Value skip = x;
  if (l.stride != 1 || l.in_ch != l.out_ch) {
    skip = parametric_unit(ctx, prefix + ".proj", l, LayerKind::Conv, l.stride, 0, false, x);
    skip = affine_unit_fwd(ctx.state, prefix + ".pa", skip);
  }
  return ag::relu(ag::add(main, skip));
}

ag::Value forward_impl(ForwardCtx& ctx, const Tensor& inputs, ag::Value* featuremap_out) {
  NetworkState& st = ctx.state;
  ag::Value x = ag::constant(inputs);
  ag::Value featuremap;
  const std::vector<LayerSpec>& layers = st.spec().layers;
  // Locate the final parametric layer so its input can double as the
  // featuremap for networks without pooling.
  std::size_t last_parametric = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].parametric()) last_parametric = i;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string p = "L" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv:
        x = parametric_unit(ctx, p, l, LayerKind::Conv, l.stride, l.pad, l.has_bias, x);
        break;
      case LayerKind::Linear:
        if (i == last_parametric && !featuremap.defined()) featuremap = x;
        x = parametric_unit(ctx, p, l, LayerKind::Linear, 0, 0, true, x);
        break;
      case LayerKind::Relu:
        x = ag::relu(x);
        break;
      case LayerKind::GlobalAvgPool:
        if (!featuremap.defined()) featuremap = x;
        x = ag::global_avg_pool(x);
        break;
      case LayerKind::Affine:
        x = affine_unit_fwd(st, p, x);
        break;
      case LayerKind::ResidualBlock:
        x = residual_block_fwd(ctx, p, l, x);
        break;
    }
  }
  if (featuremap_out) *featuremap_out = featuremap;
  return x;
}

}  // namespace

ag::Value forward(NetworkState& state, const Tensor& inputs, ag::Value* featuremap_out) {
  ForwardCtx ctx{state};
  return forward_impl(ctx, inputs, featuremap_out);
}

void init_intervals_minmax(NetworkState& state, const Tensor& probe_inputs) {
  std::map<std::string, double> act_max;
  const PrecisionMode saved = state.mode();
  state.set_mode(PrecisionMode::FullPrecision);
  ForwardCtx ctx{state, true, &act_max};
  forward_impl(ctx, probe_inputs, nullptr);
  state.set_mode(saved);

  const std::vector<LayerSpec>& layers = state.spec().layers;
  const auto init_unit = [&](const std::string& prefix, const LayerSpec& l) {
    state.param(prefix + ".iw").value[0] = init_weight_interval(state.param(prefix + ".w").value,
                                                                l.weight_quant);
    state.param(prefix + ".ix").value[0] = init_activation_interval(act_max.at(prefix), l.act_quant);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string p = "L" + std::to_string(i);
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Linear) {
      init_unit(p, l);
    } else if (l.kind == LayerKind::ResidualBlock) {
      init_unit(p + ".c1", l);
      init_unit(p + ".c2", l);
      if (state.has_param(p + ".proj.w")) init_unit(p + ".proj", l);
    }
  }
  state.set_intervals_initialized(true);
}

}  // namespace qkd

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qkd/autograd.hpp"
#include "qkd/param.hpp"
#include "qkd/quant.hpp"

namespace qkd {

enum class LayerKind { Conv, Linear, Relu, GlobalAvgPool, ResidualBlock, Affine };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;  // conv / residual block
  int in_dim = 0, out_dim = 0;                                // linear
  int channels = 0;                                           // affine
  bool has_bias = false;
  QuantSpec weight_quant = QuantSpec::weight(8, false);
  QuantSpec act_quant = QuantSpec::activation(8, false);

  bool parametric() const {
    return kind == LayerKind::Conv || kind == LayerKind::Linear || kind == LayerKind::ResidualBlock;
  }
};

struct InputShape {
  int channels = 0;  // image inputs: channels and square side
  int hw = 0;
  int dim = 0;  // vector inputs
};

struct NetworkSpec {
  std::string name;
  int num_classes = 0;
  InputShape input;
  std::vector<LayerSpec> layers;

  void validate() const;
  std::size_t param_count() const;  // weight scalars, intervals excluded
};

// Known architectures: mlp-s/t (two hidden layers), tiny-cnn-s/t (three
// convs + classifier), mini-resnet-s/t (stem + three residual blocks +
// classifier). Teachers double the student width. `bits` sets the middle
// layers; the first and last parametric layers stay at 8 bits. bits >= 32
// disables quantization entirely.
NetworkSpec make_network_spec(const std::string& name, int bits, int num_classes, InputShape input);
bool is_known_network(const std::string& name);
std::string paired_teacher_name(const std::string& student_name);

enum class PrecisionMode { FullPrecision, Quantized };

// A built network: the spec plus all Parameters (weights, affine scales and
// biases, quantizer intervals). Owned by exactly one training loop at a time.
class NetworkState {
 public:
  NetworkState(NetworkSpec spec, std::uint64_t seed);

  NetworkState clone() const;

  const NetworkSpec& spec() const { return spec_; }
  PrecisionMode mode() const { return mode_; }
  void set_mode(PrecisionMode m) { mode_ = m; }
  bool intervals_initialized() const { return intervals_initialized_; }
  void set_intervals_initialized(bool v) { intervals_initialized_ = v; }
  bool gated_ste() const { return gated_ste_; }
  void set_gated_ste(bool v) { gated_ste_ = v; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> weight_parameters();
  std::vector<Parameter*> interval_parameters();
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const;

 private:
  NetworkState() = default;

  NetworkSpec spec_;
  PrecisionMode mode_ = PrecisionMode::FullPrecision;
  bool intervals_initialized_ = false;
  bool gated_ste_ = true;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;

  void add_param(const std::string& name, Tensor value, ParamKind kind);
};

// Forward pass over the tape. In quantized mode every enabled conv/linear
// computes on quantize_dequantize(w) and quantize_dequantize(x); full
// precision bypasses the quantizers entirely. `featuremap_out`, when given,
// receives the last pre-classifier featuremap (input to global average
// pooling, or to the final linear layer when there is no pooling).
ag::Value forward(NetworkState& state, const Tensor& inputs, ag::Value* featuremap_out = nullptr);

// Min-max interval initialization: weights from their own min/max, input
// activations from one full-precision probe batch.
void init_intervals_minmax(NetworkState& state, const Tensor& probe_inputs);

}  // namespace qkd

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dtta/tensor.hpp"

namespace dtta {

/// Size of the noise-prediction network. The toy default trains on a CPU in
/// minutes; {width 64, n_blocks 44} is the full-scale setting.
struct DenoiserConfig {
  int width = 16;
  int n_blocks = 8;
  int n_frames = 5;
  int in_channels = 3;
  int time_embed_dim = 32;

  void validate() const;
  /// H and W must be multiples of this (two 2x downsampling stages).
  static constexpr int downsample_factor() { return 4; }
  static constexpr int levels() { return 2; }
  /// Blocks per encoder/decoder stage and in the bottleneck.
  int blocks_per_level() const { return (n_blocks - 1) / 4; }
  int middle_blocks() const { return n_blocks - 4 * blocks_per_level(); }

  bool operator==(const DenoiserConfig&) const = default;
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  /// Output layer; excluded from test-time updates.
  bool last_layer = false;
};

/// Ordered, named parameter set of the denoiser.
template <typename T>
struct ModelWeights {
  static constexpr std::uint32_t kVersion = 1;

  DenoiserConfig config;
  std::uint32_t version = kVersion;
  std::vector<Param<T>> params;

  std::size_t index_of(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const { return params[index_of(name)].value; }
  std::size_t parameter_count() const;

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    out.config = config;
    out.version = version;
    for (const auto& p : params) out.params.push_back({p.name, p.value.template cast<U>(), p.last_layer});
    return out;
  }
};

/// Gradient buffers aligned one-to-one with ModelWeights::params.
template <typename T>
using Gradients = std::vector<Tensor<T>>;

template <typename T>
Gradients<T> zero_gradients(const ModelWeights<T>& w);

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { Uniform, Zeros, Ones } init = Init::Uniform;
  int fan_in = 1;
  bool last_layer = false;
};

/// Parameter names, shapes and initializers in network order.
std::vector<ParamSpec> parameter_layout(const DenoiserConfig& cfg);

/// Uniform(+-1/sqrt(fan_in)) for convolution and linear layers, unit scale
/// for norms, zero residual scales.
template <typename T>
ModelWeights<T> init_weights(const DenoiserConfig& cfg, std::uint64_t seed);

/// Sinusoidal encoding of t: dim/2 sines followed by dim/2 cosines with
/// frequencies 10000^(-i / (dim/2)).
std::vector<double> time_embed(int t, int dim);

/// Channel split product: [a | b] -> a * b.
template <typename T>
std::vector<T> simple_gate(std::span<const T> v);

template <typename T>
class Denoiser {
 public:
  /// Activations recorded by a training forward pass for `backward`.
  class Tape {
   public:
    Tape();
    ~Tape();
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;

   private:
    friend class Denoiser;
    struct Data;
    std::unique_ptr<Data> d_;
  };

  explicit Denoiser(DenoiserConfig cfg);
  ~Denoiser();
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;
  Denoiser(Denoiser&&) noexcept;

  const DenoiserConfig& config() const { return cfg_; }

  /// noisy and cond are [clips * n_frames, C, H, W]; one timestep per clip.
  /// Returns the predicted noise with the same shape as `noisy`.
  Tensor<T> forward(const ModelWeights<T>& w, const Tensor<T>& noisy, const Tensor<T>& cond,
                    std::span<const int> timesteps) const;
  Tensor<T> forward(const ModelWeights<T>& w, const Tensor<T>& noisy, const Tensor<T>& cond,
                    std::span<const int> timesteps, Tape& tape) const;

  /// Accumulates dLoss/dparam into `grads` given dLoss/dout.
  void backward(const ModelWeights<T>& w, const Tape& tape, const Tensor<T>& grad_out, Gradients<T>& grads) const;

 private:
  struct Layout;
  DenoiserConfig cfg_;
  std::unique_ptr<Layout> layout_;
};

/// Single-clip convenience: noisy and cond are [n_frames, C, H, W].
Tensor<float> predict_noise(const Denoiser<float>& net, const ModelWeights<float>& w, const Tensor<float>& noisy,
                            const Tensor<float>& cond, int t);

}  // namespace dtta

#pragma once

#include "ser/ops.hpp"
#include "ser/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ser {

enum class EmotionLabel : int { Anger = 0, Happiness = 1, Sadness = 2, Neutral = 3 };

inline constexpr int kNumEmotions = 4;
inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {"anger", "happiness", "sadness",
                                                                             "neutral"};

std::string_view label_name(int label);
std::optional<int> parse_label(std::string_view name);

enum class ModelKind { CnnTransformer, MlpBaseline };

std::string_view model_kind_name(ModelKind kind);
std::optional<ModelKind> parse_model_kind(std::string_view name);

struct ArchConfig {
  ModelKind kind = ModelKind::CnnTransformer;
  int n_mels = 128;
  int input_frames = 300;
  std::array<int, 3> conv_channels = {32, 64, 128};
  int conv_kernel = 3;
  int n_encoder_layers = 4;
  int n_heads = 8;
  int d_model = 256;
  int d_ff = 512;
  int n_classes = kNumEmotions;
  double dropout = 0.3;
  double bn_momentum = 0.1;
  // MLP baseline: input is mean and std of n_mfcc coefficients.
  int n_mfcc = 13;
  int mlp_hidden = 128;

  /// Throws ConfigError when an invariant fails.
  void validate() const;

  int head_dim() const { return d_model / n_heads; }
  /// Spatial size after the three conv/pool blocks.
  int pooled_mels() const;
  int seq_len() const;
  int d_feat() const { return conv_channels[2] * pooled_mels(); }
  int mlp_input_dim() const { return 2 * n_mfcc; }

  bool operator==(const ArchConfig&) const = default;
};

enum class ParamInit { Glorot, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::Glorot;
  bool trainable = true;
};

/// Fixed enumeration of every tensor the architecture owns, trainable or not.
/// The checkpoint layout follows this order.
std::vector<ParamSpec> param_specs(const ArchConfig& cfg);

/// Number of trainable scalars.
std::int64_t count_params(const ArchConfig& cfg);

/// Named, ordered tensors for one architecture. Running statistics are
/// stored alongside weights but flagged non-trainable.
template <typename Scalar>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
    bool trainable = true;
  };

  void add(std::string name, Tensor<Scalar> tensor, bool trainable);

  const Tensor<Scalar>& operator[](std::string_view name) const;
  Tensor<Scalar>& operator[](std::string_view name);
  bool contains(std::string_view name) const;

  std::span<const Entry> entries() const { return entries_; }
  std::vector<Tensor<Scalar>> trainable() const;
  std::int64_t trainable_count() const;

  /// Deep copy: new storage, no shared graph nodes.
  ModelParams clone() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

/// Per-forward settings: mode plus the coordinates that key dropout masks.
struct ForwardContext {
  Mode mode = Mode::Eval;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
};

/// Optional sink for per-head attention weights (one [N,S,S] tensor per head
/// per layer, in order).
template <typename Scalar>
using AttentionProbe = std::vector<Tensor<Scalar>>;

/// Sinusoidal table: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
/// PE(pos, 2i+1) = cos(same angle).
template <typename Scalar>
Tensor<Scalar> positional_encoding(Index seq_len, Index d_model);

/// Three [conv 3x3 pad 1 -> batch norm -> relu -> maxpool 2x2] blocks, then
/// [N,C,F'',T''] -> [N,T'',C*F''] (time steps become tokens).
template <typename Scalar>
Tensor<Scalar> cnn_frontend(const Tensor<Scalar>& x, ModelParams<Scalar>& params, const ArchConfig& cfg,
                            const ForwardContext& ctx);

/// Multi-head self-attention: per head softmax(Q_i K_i^T / sqrt(d_k)) V_i,
/// heads concatenated and projected by W^O.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& x, const ModelParams<Scalar>& params, int layer,
                                    const ArchConfig& cfg, AttentionProbe<Scalar>* probe = nullptr);

/// Post-norm encoder layer:
///   x1 = LN(x + Dropout(MHA(x))); out = LN(x1 + Dropout(FFN(x1))).
template <typename Scalar>
Tensor<Scalar> encoder_layer(const Tensor<Scalar>& x, const ModelParams<Scalar>& params, int layer,
                             const ArchConfig& cfg, const ForwardContext& ctx, AttentionProbe<Scalar>* probe = nullptr);

/// CNN-Transformer logits [N, n_classes] for input [N,1,F,T].
template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& x, ModelParams<Scalar>& params, const ArchConfig& cfg,
                       const ForwardContext& ctx, AttentionProbe<Scalar>* probe = nullptr);

/// MLP baseline logits for MFCC statistics [N, 2*n_mfcc].
template <typename Scalar>
Tensor<Scalar> mlp_baseline_forward(const Tensor<Scalar>& x, const ModelParams<Scalar>& params,
                                    const ArchConfig& cfg, const ForwardContext& ctx);

/// Dispatches on cfg.kind.
template <typename Scalar>
Tensor<Scalar> model_forward(const Tensor<Scalar>& x, ModelParams<Scalar>& params, const ArchConfig& cfg,
                             const ForwardContext& ctx);

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases
/// and betas, unit gammas, running stats (0, 1). Deterministic in seed.
template <typename Scalar>
ModelParams<Scalar> init_params(const ArchConfig& cfg, std::uint64_t seed);

/// Fan-in / fan-out of a weight tensor as used by init_params.
std::pair<Index, Index> fan_in_out(const Shape& shape);

/// Input shape of one example: {1, F, T} or {2*n_mfcc}.
Shape example_shape(const ArchConfig& cfg);

}  // namespace ser

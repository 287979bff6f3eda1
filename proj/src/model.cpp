#include "ser/model.hpp"

#include <cmath>
#include <random>

namespace ser {
namespace {

std::string enc(int layer, std::string_view leaf) { return "enc" + std::to_string(layer) + "." + std::string(leaf); }

void config_check(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::ConfigError, message);
}

template <typename S>
Tensor<S> ffn(const Tensor<S>& x, const ModelParams<S>& p, int layer) {
  Tensor<S> h = relu(linear(x, p[enc(layer, "ffn.w1")], p[enc(layer, "ffn.b1")]));
  return linear(h, p[enc(layer, "ffn.w2")], p[enc(layer, "ffn.b2")]);
}

template <typename S>
DropoutKey dropout_key(const ForwardContext& ctx, std::uint64_t layer) {
  return DropoutKey{ctx.seed, ctx.epoch, ctx.step, layer};
}

}  // namespace

std::string_view label_name(int label) {
  if (label < 0 || label >= kNumEmotions)
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  return kEmotionNames[static_cast<std::size_t>(label)];
}

std::optional<int> parse_label(std::string_view name) {
  for (int i = 0; i < kNumEmotions; ++i)
    if (kEmotionNames[static_cast<std::size_t>(i)] == name) return i;
  return std::nullopt;
}

std::string_view model_kind_name(ModelKind kind) {
  return kind == ModelKind::CnnTransformer ? "cnn_transformer" : "mlp";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  if (name == "cnn_transformer") return ModelKind::CnnTransformer;
  if (name == "mlp") return ModelKind::MlpBaseline;
  return std::nullopt;
}

void ArchConfig::validate() const {
  config_check(n_classes >= 2, "n_classes must be >= 2");
  config_check(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  if (kind == ModelKind::MlpBaseline) {
    config_check(n_mfcc >= 1 && mlp_hidden >= 1, "MLP sizes must be positive");
    return;
  }
  config_check(n_mels >= 8 && input_frames >= 8, "three 2x2 pools need F >= 8 and T >= 8");
  for (int c : conv_channels) config_check(c >= 1, "conv channels must be positive");
  config_check(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv kernel must be odd");
  config_check(n_encoder_layers >= 1 && n_heads >= 1 && d_model >= 2 && d_ff >= 1, "encoder sizes must be positive");
  config_check(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  config_check(d_model % 2 == 0, "d_model must be even for the positional encoding");
  config_check(bn_momentum >= 0.0 && bn_momentum <= 1.0, "bn_momentum must lie in [0, 1]");
}

int ArchConfig::pooled_mels() const { return n_mels / 2 / 2 / 2; }
int ArchConfig::seq_len() const { return input_frames / 2 / 2 / 2; }

std::vector<ParamSpec> param_specs(const ArchConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  auto weight = [&](std::string name, Shape shape) { specs.push_back({std::move(name), std::move(shape)}); };
  auto zeros = [&](std::string name, Index n, bool trainable = true) {
    specs.push_back({std::move(name), {n}, ParamInit::Zeros, trainable});
  };
  auto ones = [&](std::string name, Index n, bool trainable = true) {
    specs.push_back({std::move(name), {n}, ParamInit::Ones, trainable});
  };

  if (cfg.kind == ModelKind::MlpBaseline) {
    weight("fc1.weight", {cfg.mlp_input_dim(), cfg.mlp_hidden});
    zeros("fc1.bias", cfg.mlp_hidden);
    weight("fc2.weight", {cfg.mlp_hidden, cfg.n_classes});
    zeros("fc2.bias", cfg.n_classes);
    return specs;
  }

  Index in_ch = 1;
  for (int b = 0; b < 3; ++b) {
    const Index out_ch = cfg.conv_channels[static_cast<std::size_t>(b)];
    const std::string conv = "conv" + std::to_string(b);
    const std::string bn = "bn" + std::to_string(b);
    weight(conv + ".kernel", {out_ch, in_ch, cfg.conv_kernel, cfg.conv_kernel});
    zeros(conv + ".bias", out_ch);
    ones(bn + ".gamma", out_ch);
    zeros(bn + ".beta", out_ch);
    zeros(bn + ".running_mean", out_ch, false);
    ones(bn + ".running_var", out_ch, false);
    in_ch = out_ch;
  }
  const Index d = cfg.d_model;
  weight("proj.weight", {cfg.d_feat(), d});
  zeros("proj.bias", d);
  for (int l = 0; l < cfg.n_encoder_layers; ++l) {
    for (const char* m : {"q", "k", "v", "o"}) {
      weight(enc(l, std::string("attn.w") + m), {d, d});
      zeros(enc(l, std::string("attn.b") + m), d);
    }
    ones(enc(l, "ln1.gamma"), d);
    zeros(enc(l, "ln1.beta"), d);
    weight(enc(l, "ffn.w1"), {d, cfg.d_ff});
    zeros(enc(l, "ffn.b1"), cfg.d_ff);
    weight(enc(l, "ffn.w2"), {cfg.d_ff, d});
    zeros(enc(l, "ffn.b2"), d);
    ones(enc(l, "ln2.gamma"), d);
    zeros(enc(l, "ln2.beta"), d);
  }
  weight("cls.weight", {d, cfg.n_classes});
  zeros("cls.bias", cfg.n_classes);
  return specs;
}

std::int64_t count_params(const ArchConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& s : param_specs(cfg))
    if (s.trainable) total += numel(s.shape);
  return total;
}

std::pair<Index, Index> fan_in_out(const Shape& shape) {
  if (shape.size() == 4) {
    const Index receptive = shape[2] * shape[3];
    return {shape[1] * receptive, shape[0] * receptive};
  }
  if (shape.size() == 2) return {shape[0], shape[1]};
  return {shape.front(), shape.front()};
}

Shape example_shape(const ArchConfig& cfg) {
  if (cfg.kind == ModelKind::MlpBaseline) return {cfg.mlp_input_dim()};
  return {1, cfg.n_mels, cfg.input_frames};
}

// --- ModelParams -------------------------------------------------------------

template <typename S>
void ModelParams<S>::add(std::string name, Tensor<S> tensor, bool trainable) {
  if (contains(name)) throw Error(ErrorCode::ConfigError, "duplicate parameter " + name);
  tensor.set_requires_grad(trainable);
  entries_.push_back({std::move(name), std::move(tensor), trainable});
}

template <typename S>
const Tensor<S>& ModelParams<S>::operator[](std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw Error(ErrorCode::ShapeMismatch, "model has no parameter named " + std::string(name));
}

template <typename S>
Tensor<S>& ModelParams<S>::operator[](std::string_view name) {
  return const_cast<Tensor<S>&>(static_cast<const ModelParams&>(*this)[name]);
}

template <typename S>
bool ModelParams<S>::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

template <typename S>
std::vector<Tensor<S>> ModelParams<S>::trainable() const {
  std::vector<Tensor<S>> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

template <typename S>
std::int64_t ModelParams<S>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.size();
  return n;
}

template <typename S>
ModelParams<S> ModelParams<S>::clone() const {
  ModelParams copy;
  for (const auto& e : entries_) copy.add(e.name, e.tensor.detach(), e.trainable);
  return copy;
}

template <typename S>
void ModelParams<S>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// --- forward math --------------------------------------------------------------

template <typename S>
Tensor<S> positional_encoding(Index seq_len, Index d_model) {
  if (d_model % 2 != 0) throw Error(ErrorCode::ConfigError, "positional encoding needs an even d_model");
  typename Tensor<S>::Array values(seq_len * d_model);
  for (Index pos = 0; pos < seq_len; ++pos)
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
      values[pos * d_model + 2 * i] = static_cast<S>(std::sin(angle));
      values[pos * d_model + 2 * i + 1] = static_cast<S>(std::cos(angle));
    }
  return Tensor<S>({seq_len, d_model}, std::move(values));
}

template <typename S>
Tensor<S> cnn_frontend(const Tensor<S>& x, ModelParams<S>& p, const ArchConfig& cfg, const ForwardContext& ctx) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg.n_mels || x.dim(3) != cfg.input_frames)
    throw Error(ErrorCode::ShapeMismatch, "CNN input must be [N,1," + std::to_string(cfg.n_mels) + "," +
                                              std::to_string(cfg.input_frames) + "], got " + shape_string(x.shape()));
  Tensor<S> h = x;
  for (int b = 0; b < 3; ++b) {
    const std::string conv = "conv" + std::to_string(b);
    const std::string bn = "bn" + std::to_string(b);
    h = conv2d(h, p[conv + ".kernel"], p[conv + ".bias"], cfg.conv_kernel / 2);
    h = batch_norm2d(h, p[bn + ".gamma"], p[bn + ".beta"], p[bn + ".running_mean"], p[bn + ".running_var"], ctx.mode,
                     cfg.bn_momentum);
    h = maxpool2d(relu(h));
  }
  const Index n = h.dim(0), c = h.dim(1), f = h.dim(2), t = h.dim(3);
  return reshape(permute(h, {0, 3, 1, 2}), {n, t, c * f});
}

template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& x, const ModelParams<S>& p, int layer, const ArchConfig& cfg,
                               AttentionProbe<S>* probe) {
  const Index dk = cfg.head_dim();
  const Tensor<S> q = linear(x, p[enc(layer, "attn.wq")], p[enc(layer, "attn.bq")]);
  const Tensor<S> k = linear(x, p[enc(layer, "attn.wk")], p[enc(layer, "attn.bk")]);
  const Tensor<S> v = linear(x, p[enc(layer, "attn.wv")], p[enc(layer, "attn.bv")]);
  const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int i = 0; i < cfg.n_heads; ++i) {
    const Tensor<S> qi = slice(q, -1, i * dk, dk);
    const Tensor<S> ki = slice(k, -1, i * dk, dk);
    const Tensor<S> vi = slice(v, -1, i * dk, dk);
    const Tensor<S> weights = softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dk), -1);
    if (probe) probe->push_back(weights);
    heads.push_back(matmul(weights, vi));
  }
  return linear(concat(heads, -1), p[enc(layer, "attn.wo")], p[enc(layer, "attn.bo")]);
}

template <typename S>
Tensor<S> encoder_layer(const Tensor<S>& x, const ModelParams<S>& p, int layer, const ArchConfig& cfg,
                        const ForwardContext& ctx, AttentionProbe<S>* probe) {
  if (x.rank() != 3 || x.dim(2) != cfg.d_model)
    throw Error(ErrorCode::ShapeMismatch, "encoder input must be [N,S," + std::to_string(cfg.d_model) + "], got " +
                                              shape_string(x.shape()));
  const auto attn_key = dropout_key<S>(ctx, 1 + 2 * static_cast<std::uint64_t>(layer));
  const auto ffn_key = dropout_key<S>(ctx, 2 + 2 * static_cast<std::uint64_t>(layer));
  Tensor<S> attn = dropout(multi_head_attention(x, p, layer, cfg, probe), cfg.dropout, ctx.mode, attn_key);
  Tensor<S> x1 = layer_norm(add(x, attn), p[enc(layer, "ln1.gamma")], p[enc(layer, "ln1.beta")]);
  Tensor<S> f = dropout(ffn(x1, p, layer), cfg.dropout, ctx.mode, ffn_key);
  return layer_norm(add(x1, f), p[enc(layer, "ln2.gamma")], p[enc(layer, "ln2.beta")]);
}

template <typename S>
Tensor<S> forward(const Tensor<S>& x, ModelParams<S>& p, const ArchConfig& cfg, const ForwardContext& ctx,
                  AttentionProbe<S>* probe) {
  Tensor<S> tokens = linear(cnn_frontend(x, p, cfg, ctx), p["proj.weight"], p["proj.bias"]);
  tokens = add(tokens, positional_encoding<S>(tokens.dim(1), cfg.d_model));
  Tensor<S> h = dropout(tokens, cfg.dropout, ctx.mode, dropout_key<S>(ctx, 0));
  for (int l = 0; l < cfg.n_encoder_layers; ++l) h = encoder_layer(h, p, l, cfg, ctx, probe);
  return linear(mean_over_axis(h, 1), p["cls.weight"], p["cls.bias"]);
}

template <typename S>
Tensor<S> mlp_baseline_forward(const Tensor<S>& x, const ModelParams<S>& p, const ArchConfig& cfg,
                               const ForwardContext& ctx) {
  if (x.rank() != 2 || x.dim(1) != cfg.mlp_input_dim())
    throw Error(ErrorCode::ShapeMismatch, "MLP input must be [N," + std::to_string(cfg.mlp_input_dim()) + "], got " +
                                              shape_string(x.shape()));
  Tensor<S> h = relu(linear(x, p["fc1.weight"], p["fc1.bias"]));
  h = dropout(h, cfg.dropout, ctx.mode, dropout_key<S>(ctx, 0));
  return linear(h, p["fc2.weight"], p["fc2.bias"]);
}

template <typename S>
Tensor<S> model_forward(const Tensor<S>& x, ModelParams<S>& p, const ArchConfig& cfg, const ForwardContext& ctx) {
  if (cfg.kind == ModelKind::MlpBaseline) return mlp_baseline_forward(x, p, cfg, ctx);
  return forward(x, p, cfg, ctx);
}

template <typename S>
ModelParams<S> init_params(const ArchConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  ModelParams<S> params;
  for (const auto& spec : param_specs(cfg)) {
    const Index n = numel(spec.shape);
    typename Tensor<S>::Array values(n);
    switch (spec.init) {
      case ParamInit::Zeros: values.setZero(); break;
      case ParamInit::Ones: values.setOnes(); break;
      case ParamInit::Glorot: {
        const auto [fan_in, fan_out] = fan_in_out(spec.shape);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index i = 0; i < n; ++i) values[i] = static_cast<S>(dist(gen));
        break;
      }
    }
    params.add(spec.name, Tensor<S>(spec.shape, std::move(values)), spec.trainable);
  }
  return params;
}

#define SER_INSTANTIATE_MODEL(S)                                                                                   \
  template class ModelParams<S>;                                                                                   \
  template Tensor<S> positional_encoding<S>(Index, Index);                                                         \
  template Tensor<S> cnn_frontend(const Tensor<S>&, ModelParams<S>&, const ArchConfig&, const ForwardContext&);    \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const ModelParams<S>&, int, const ArchConfig&,         \
                                          AttentionProbe<S>*);                                                     \
  template Tensor<S> encoder_layer(const Tensor<S>&, const ModelParams<S>&, int, const ArchConfig&,                \
                                   const ForwardContext&, AttentionProbe<S>*);                                     \
  template Tensor<S> forward(const Tensor<S>&, ModelParams<S>&, const ArchConfig&, const ForwardContext&,          \
                             AttentionProbe<S>*);                                                                  \
  template Tensor<S> mlp_baseline_forward(const Tensor<S>&, const ModelParams<S>&, const ArchConfig&,              \
                                          const ForwardContext&);                                                  \
  template Tensor<S> model_forward(const Tensor<S>&, ModelParams<S>&, const ArchConfig&, const ForwardContext&);   \
  template ModelParams<S> init_params<S>(const ArchConfig&, std::uint64_t);

SER_INSTANTIATE_MODEL(float)
SER_INSTANTIATE_MODEL(double)

#undef SER_INSTANTIATE_MODEL

}  // namespace ser

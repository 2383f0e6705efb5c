#pragma once

#include "skipvision/numerics.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace skipvision {

enum class InitMode : std::uint8_t { Gaussian, Orthogonal };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view text);

struct ModelConfig {
  std::size_t layers = 2;     // L
  std::size_t hidden = 32;    // C
  std::size_t ffn_inner = 112; // M
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 4;
  std::size_t vocab = 64;
  bool use_bias = false;
  bool gated_ffn = true;       // SwiGLU; false gives Activation(x W1 + b1) W2 + b2
  bool tie_embeddings = true;  // false adds an untied vocab x C output head
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return hidden / n_heads; }
  std::size_t kv_width() const { return n_kv_heads * head_dim(); }
  std::size_t group_size() const { return n_heads / n_kv_heads; }

  void validate() const;

  /// Llama3-8B architecture: L=32, C=4096, M=14336, 32 heads, 8 kv heads,
  /// vocab 128256, untied output head.
  static ModelConfig llama3_8b();
};

template <typename Scalar>
struct AttentionParams {
  RowVector<Scalar> norm;  // pre-norm gain
  Matrix<Scalar> w_q;      // C x C
  Matrix<Scalar> w_k;      // C x (kv_heads * d_k)
  Matrix<Scalar> w_v;      // C x (kv_heads * d_k)
  Matrix<Scalar> w_o;      // C x C
};

template <typename Scalar>
struct FfnParams {
  RowVector<Scalar> norm;    // pre-norm gain
  Matrix<Scalar> w_1;        // C x M
  Matrix<Scalar> w_gate;     // C x M, empty when the FFN is not gated
  Matrix<Scalar> w_2;        // M x C
  RowVector<Scalar> b_1;     // M, empty without bias
  RowVector<Scalar> b_2;     // C, empty without bias

  bool gated() const { return w_gate.size() > 0; }
  bool has_bias() const { return b_1.size() > 0; }
};

template <typename Scalar>
struct LayerWeights {
  AttentionParams<Scalar> attention;
  FfnParams<Scalar> ffn;
};

/// Decoder-only model weights. Immutable once built; share freely.
template <typename Scalar>
struct Model {
  ModelConfig config;
  InitMode init = InitMode::Gaussian;
  std::vector<LayerWeights<Scalar>> layers;
  RowVector<Scalar> final_norm;
  Matrix<Scalar> embedding;    // vocab x C
  Matrix<Scalar> output_head;  // vocab x C, empty when tied

  const Matrix<Scalar>& head() const { return config.tie_embeddings ? embedding : output_head; }

  template <typename To>
  Model<To> cast() const;
};

/// Seeded weights. Gaussian: std 0.02 everywhere. Orthogonal: every
/// projection is semi-orthogonal (spectral norm 1) and the gated FFN input map
/// [W_1 | W_gate] is drawn as one semi-orthogonal C x 2M block.
/// Norm gains start at 1; biases at 0.
template <typename Scalar>
Model<Scalar> make_model(const ModelConfig& cfg, InitMode init = InitMode::Gaussian);

/// Copy with every weight matrix (not norm gains) multiplied by `factor`.
template <typename Scalar>
Model<Scalar> scale_weights(const Model<Scalar>& model, Scalar factor);

template <typename Scalar>
template <typename To>
Model<To> Model<Scalar>::cast() const {
  Model<To> out;
  out.config = config;
  out.init = init;
  out.final_norm = final_norm.template cast<To>();
  out.embedding = embedding.template cast<To>();
  out.output_head = output_head.template cast<To>();
  for (const auto& l : layers) {
    LayerWeights<To> c;
    c.attention = {l.attention.norm.template cast<To>(), l.attention.w_q.template cast<To>(),
                   l.attention.w_k.template cast<To>(), l.attention.w_v.template cast<To>(),
                   l.attention.w_o.template cast<To>()};
    c.ffn = {l.ffn.norm.template cast<To>(), l.ffn.w_1.template cast<To>(),
             l.ffn.w_gate.template cast<To>(), l.ffn.w_2.template cast<To>(),
             l.ffn.b_1.template cast<To>(), l.ffn.b_2.template cast<To>()};
    out.layers.push_back(std::move(c));
  }
  return out;
}

}  // namespace skipvision

#include "skipvision/model.hpp"

#include <stdexcept>

namespace skipvision {

std::string_view to_string(InitMode mode) {
  return mode == InitMode::Orthogonal ? "orthogonal" : "gaussian";
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "gaussian") return InitMode::Gaussian;
  if (text == "orthogonal") return InitMode::Orthogonal;
  throw std::invalid_argument("unknown init mode '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden < 1 || ffn_inner < 1 || vocab < 1) fail("hidden, ffn_inner and vocab must be >= 1");
  if (n_heads < 1 || n_kv_heads < 1) fail("head counts must be >= 1");
  if (n_heads % n_kv_heads != 0) fail("n_heads must be a multiple of n_kv_heads");
  if (hidden % n_heads != 0) fail("hidden must equal n_heads * head_dim");
}

ModelConfig ModelConfig::llama3_8b() {
  ModelConfig cfg;
  cfg.layers = 32;
  cfg.hidden = 4096;
  cfg.ffn_inner = 14336;
  cfg.n_heads = 32;
  cfg.n_kv_heads = 8;
  cfg.vocab = 128256;
  cfg.tie_embeddings = false;
  return cfg;
}

namespace {

template <typename Scalar>
Matrix<Scalar> draw(Eigen::Index rows, Eigen::Index cols, InitMode init, std::mt19937_64& rng) {
  return init == InitMode::Orthogonal ? orthogonal_matrix<Scalar>(rows, cols, rng)
                                      : gaussian_matrix<Scalar>(rows, cols, 0.02, rng);
}

}  // namespace

template <typename Scalar>
Model<Scalar> make_model(const ModelConfig& cfg, InitMode init) {
  cfg.validate();
  const auto c = static_cast<Eigen::Index>(cfg.hidden);
  const auto m = static_cast<Eigen::Index>(cfg.ffn_inner);
  const auto kv = static_cast<Eigen::Index>(cfg.kv_width());
  const auto vocab = static_cast<Eigen::Index>(cfg.vocab);

  Model<Scalar> model;
  model.config = cfg;
  model.init = init;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 100 + l));
    LayerWeights<Scalar> w;
    w.attention.norm = RowVector<Scalar>::Ones(c);
    w.attention.w_q = draw<Scalar>(c, c, init, rng);
    w.attention.w_k = draw<Scalar>(c, kv, init, rng);
    w.attention.w_v = draw<Scalar>(c, kv, init, rng);
    w.attention.w_o = draw<Scalar>(c, c, init, rng);

    w.ffn.norm = RowVector<Scalar>::Ones(c);
    if (cfg.gated_ffn) {
      const Matrix<Scalar> block = draw<Scalar>(c, 2 * m, init, rng);
      w.ffn.w_1 = block.leftCols(m);
      w.ffn.w_gate = block.rightCols(m);
    } else {
      w.ffn.w_1 = draw<Scalar>(c, m, init, rng);
    }
    w.ffn.w_2 = draw<Scalar>(m, c, init, rng);
    if (cfg.use_bias) {
      w.ffn.b_1 = RowVector<Scalar>::Zero(m);
      w.ffn.b_2 = RowVector<Scalar>::Zero(c);
    }
    model.layers.push_back(std::move(w));
  }
  model.final_norm = RowVector<Scalar>::Ones(c);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  model.embedding = draw<Scalar>(vocab, c, init, rng);
  if (!cfg.tie_embeddings) model.output_head = draw<Scalar>(vocab, c, init, rng);
  return model;
}

template <typename Scalar>
Model<Scalar> scale_weights(const Model<Scalar>& model, Scalar factor) {
  Model<Scalar> out = model;
  for (auto& l : out.layers) {
    l.attention.w_q *= factor;
    l.attention.w_k *= factor;
    l.attention.w_v *= factor;
    l.attention.w_o *= factor;
    l.ffn.w_1 *= factor;
    l.ffn.w_gate *= factor;
    l.ffn.w_2 *= factor;
  }
  out.embedding *= factor;
  out.output_head *= factor;
  return out;
}

template Model<float> make_model<float>(const ModelConfig&, InitMode);
template Model<double> make_model<double>(const ModelConfig&, InitMode);
template Model<float> scale_weights<float>(const Model<float>&, float);
template Model<double> scale_weights<double>(const Model<double>&, double);

}  // namespace skipvision

#include "skipvision/serialization.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace skipvision {

namespace {

// Unknown keys are rejected so that a typo in a config never silently falls
// back to a default.
void check_keys(const json& j, std::string_view what, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

std::string_view to_string(SelectionConfig::Strategy s) {
  return s == SelectionConfig::Strategy::Provenance ? "provenance" : "cls_top_n";
}

SelectionConfig::Strategy parse_strategy(const std::string& s) {
  if (s == "provenance") return SelectionConfig::Strategy::Provenance;
  if (s == "cls_top_n") return SelectionConfig::Strategy::ClsTopN;
  throw std::invalid_argument("selection.strategy: expected 'provenance' or 'cls_top_n', got '" + s + "'");
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = json{{"layers", c.layers},       {"hidden", c.hidden},
           {"ffn_inner", c.ffn_inner}, {"n_heads", c.n_heads},
           {"n_kv_heads", c.n_kv_heads}, {"vocab", c.vocab},
           {"use_bias", c.use_bias},   {"gated_ffn", c.gated_ffn},
           {"tie_embeddings", c.tie_embeddings}, {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  check_keys(j, "model", {"preset", "layers", "hidden", "ffn_inner", "n_heads", "n_kv_heads", "vocab",
                          "use_bias", "gated_ffn", "tie_embeddings", "seed"});
  c = ModelConfig{};
  if (auto it = j.find("preset"); it != j.end()) {
    auto name = it->get<std::string>();
    if (name != "llama3-8b") throw std::invalid_argument("model.preset: unknown preset '" + name + "'");
    c = ModelConfig::llama3_8b();
  }
  read_opt(j, "layers", c.layers);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "ffn_inner", c.ffn_inner);
  read_opt(j, "n_heads", c.n_heads);
  read_opt(j, "n_kv_heads", c.n_kv_heads);
  read_opt(j, "vocab", c.vocab);
  read_opt(j, "use_bias", c.use_bias);
  read_opt(j, "gated_ffn", c.gated_ffn);
  read_opt(j, "tie_embeddings", c.tie_embeddings);
  read_opt(j, "seed", c.seed);
  c.validate();
}

void to_json(json& j, const MockEncoderConfig& c) {
  j = json{{"n_global", c.n_global}, {"n_local", c.n_local},
           {"window_scales", c.window_scales}, {"dim", c.dim},
           {"cluster_count", c.cluster_count}, {"noise_scale", c.noise_scale},
           {"seed", c.seed}};
}

void from_json(const json& j, MockEncoderConfig& c) {
  check_keys(j, "encoder", {"n_global", "n_local", "window_scales", "dim", "cluster_count",
                            "noise_scale", "seed"});
  c = MockEncoderConfig{};
  read_opt(j, "n_global", c.n_global);
  read_opt(j, "n_local", c.n_local);
  read_opt(j, "window_scales", c.window_scales);
  read_opt(j, "dim", c.dim);
  read_opt(j, "cluster_count", c.cluster_count);
  read_opt(j, "noise_scale", c.noise_scale);
  read_opt(j, "seed", c.seed);
  c.validate();
}

void to_json(json& j, const SelectionConfig& c) {
  j = json{{"strategy", std::string(to_string(c.strategy))}, {"n_retain", c.n_retain}};
}

void from_json(const json& j, SelectionConfig& c) {
  check_keys(j, "selection", {"strategy", "n_retain"});
  c = SelectionConfig{};
  if (auto it = j.find("strategy"); it != j.end()) c.strategy = parse_strategy(it->get<std::string>());
  read_opt(j, "n_retain", c.n_retain);
  if (c.strategy == SelectionConfig::Strategy::ClsTopN && c.n_retain == 0)
    throw std::invalid_argument("selection.n_retain: must be >= 1 for cls_top_n");
}

void to_json(json& j, const MergeConfig& c) { j = json{{"k", c.k}}; }

void from_json(const json& j, MergeConfig& c) {
  check_keys(j, "merge", {"k"});
  c = MergeConfig{};
  read_opt(j, "k", c.k);
  if (c.k == 0) throw std::invalid_argument("merge.k: must be >= 1");
}

void to_json(json& j, const SkipSchedule& s) {
  j = json{{"SF", s.skip_ffn},     {"FS", s.former_summary}, {"LS", s.latter_summary},
           {"Merge", s.merge},     {"LV", s.last_visual_ffn}, {"SK", s.skip_cache},
           {"prune_segments", s.prune_segments}};
}

void from_json(const json& j, SkipSchedule& s) {
  check_keys(j, "schedule", {"SF", "FS", "LS", "Merge", "LV", "SK", "prune_segments"});
  s = SkipSchedule{};
  read_opt(j, "SF", s.skip_ffn);
  read_opt(j, "FS", s.former_summary);
  read_opt(j, "LS", s.latter_summary);
  read_opt(j, "Merge", s.merge);
  read_opt(j, "LV", s.last_visual_ffn);
  read_opt(j, "SK", s.skip_cache);
  read_opt(j, "prune_segments", s.prune_segments);
  s.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"id", c.id},
           {"model", c.model},
           {"init", std::string(to_string(c.init))},
           {"encoder", c.encoder},
           {"selection", c.selection},
           {"merge", c.merge},
           {"schedule", c.schedule},
           {"text_tokens", c.text_tokens},
           {"decode_steps", c.decode_steps},
           {"seeds", c.seeds},
           {"output_dir", c.output_dir},
           {"capture_layers", c.capture_layers},
           {"measure_error", c.measure_error},
           {"timing_repeats", c.timing_repeats}};
  if (c.flops_model) j["flops_model"] = *c.flops_model;
}

void from_json(const json& j, ExperimentConfig& c) {
  check_keys(j, "experiment", {"id", "model", "init", "flops_model", "encoder", "selection", "merge",
                               "schedule", "text_tokens", "decode_steps", "seeds", "output_dir",
                               "capture_layers", "measure_error", "timing_repeats"});
  c = ExperimentConfig{};
  read_opt(j, "id", c.id);
  read_opt(j, "model", c.model);
  if (auto it = j.find("init"); it != j.end()) c.init = parse_init_mode(it->get<std::string>());
  if (auto it = j.find("flops_model"); it != j.end()) c.flops_model = it->get<ModelConfig>();
  read_opt(j, "encoder", c.encoder);
  read_opt(j, "selection", c.selection);
  read_opt(j, "merge", c.merge);
  read_opt(j, "schedule", c.schedule);
  read_opt(j, "text_tokens", c.text_tokens);
  read_opt(j, "decode_steps", c.decode_steps);
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "output_dir", c.output_dir);
  read_opt(j, "capture_layers", c.capture_layers);
  read_opt(j, "measure_error", c.measure_error);
  read_opt(j, "timing_repeats", c.timing_repeats);
  c.validate();
}

void to_json(json& j, const ParamBreakdown& p) {
  j = json{{"ffn", p.ffn},
           {"attention", p.attention},
           {"embedding", p.embedding},
           {"other", p.other},
           {"total", p.total()},
           {"ffn_pct", p.ffn_pct()},
           {"attention_pct", p.attention_pct()},
           {"embedding_pct", p.embedding_pct()},
           {"other_pct", p.other_pct()}};
}

void to_json(json& j, const FlopsReport& r) {
  j = json{{"layers", r.layers},
           {"attention_proj_per_layer", r.attention_proj_per_layer},
           {"attention_score_per_layer", r.attention_score_per_layer},
           {"attention_per_layer", r.attention_per_layer()},
           {"ffn_per_layer", r.ffn_per_layer},
           {"per_layer", r.per_layer()},
           {"attention_total", r.attention_total()},
           {"ffn_total", r.ffn_total()},
           {"total", r.total()},
           {"params", r.params}};
}

void to_json(json& j, const LipschitzEstimate& e) {
  j = json{{"gamma", e.gamma}, {"layers", json::array()}};
  for (const auto& l : e.layers) {
    j["layers"].push_back({{"sigma_q", l.sigma_q}, {"sigma_k", l.sigma_k}, {"sigma_v", l.sigma_v},
                           {"sigma_1", l.sigma_1}, {"sigma_2", l.sigma_2},
                           {"attn", l.attn}, {"ffn", l.ffn}});
  }
}

void to_json(json& j, const ErrorReport& r) {
  j = json{{"eps_layer", r.eps_layer},
           {"eps_skip", r.eps_skip},
           {"eps_total_measured", r.eps_total_measured},
           {"eps_total_bound", r.eps_total_bound},
           {"eps_total_closed", r.eps_total_closed},
           {"gamma", r.gamma},
           {"kl_measured", r.kl_measured},
           {"kl_bound13", r.kl_bound13},
           {"kl_bound14", r.kl_bound14},
           {"sigma2", r.sigma2},
           {"theta", r.theta},
           {"eps_sim", r.eps_sim},
           {"warnings", r.warnings}};
}

void to_json(json& j, const DensityReport& r) {
  j = json{{"groups", json::array()}, {"warnings", r.warnings}};
  for (const auto& g : r.groups) {
    j["groups"].push_back({{"group", g.group}, {"tokens", g.tokens}, {"pairs", g.pairs},
                           {"mean", g.mean}, {"histogram", g.histogram}});
  }
}

json report_json(const RunReport& r, bool include_timing) {
  json j{{"config_id", r.config_id},
         {"seed", r.seed},
         {"flops", r.flops},
         {"measured_macs", r.measured_macs},
         {"visual", {{"baseline_n", r.visual.baseline_n},
                     {"n1", r.visual.n1},
                     {"n2", r.visual.n2},
                     {"flops_ratio", r.visual.ratio}}},
         {"token_counts", r.token_counts},
         {"decoded_ids", r.decoded_ids},
         {"evicted_positions", r.evicted_positions},
         {"cache_rows", r.cache_rows},
         {"theta", r.theta}};
  j["error"] = r.error ? json(*r.error) : json(nullptr);
  if (include_timing) {
    j["wall_clock_ms"] = {{"prefill", r.prefill_ms}, {"decode", r.decode_ms}};
    j["determinism_hash"] = r.determinism_hash;
  }
  return j;
}

template <typename Scalar>
json token_sequence_json(const TokenSequence<Scalar>& seq) {
  json tokens = json::array();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(seq.width()));
    for (Eigen::Index c = 0; c < seq.width(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<double>(seq.embeddings(static_cast<Eigen::Index>(i), c));
    tokens.push_back({{"role", std::string(to_string(seq.roles[i]))},
                      {"provenance", seq.provenance[i].label()},
                      {"position", seq.positions[i]},
                      {"id", seq.ids[i]},
                      {"embedding", row}});
  }
  return json{{"width", seq.width()}, {"tokens", tokens}};
}

template <typename Scalar>
TokenSequence<Scalar> token_sequence_from_json(const json& j) {
  auto seq = TokenSequence<Scalar>::empty_with_width(j.at("width").get<Eigen::Index>());
  for (const auto& t : j.at("tokens")) {
    auto values = t.at("embedding").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != seq.width())
      throw std::invalid_argument("token sequence: embedding width mismatch");
    RowVector<Scalar> row(seq.width());
    for (Eigen::Index c = 0; c < seq.width(); ++c) row(c) = static_cast<Scalar>(values[static_cast<std::size_t>(c)]);
    seq.push_back(row, parse_token_role(t.at("role").get<std::string>()),
                  Provenance::parse(t.at("provenance").get<std::string>()),
                  t.at("position").get<std::size_t>(), t.value("id", std::int64_t{-1}));
  }
  seq.validate();
  return seq;
}

template json token_sequence_json(const TokenSequence<float>&);
template json token_sequence_json(const TokenSequence<double>&);
template TokenSequence<float> token_sequence_from_json<float>(const json&);
template TokenSequence<double> token_sequence_from_json<double>(const json&);

ModelConfig model_config_from_any(const json& j) {
  if (j.is_array()) {
    if (j.empty()) throw std::invalid_argument("config: empty array");
    return model_config_from_any(j.front());
  }
  if (j.contains("flops_model")) return j.at("flops_model").get<ModelConfig>();
  if (j.contains("model")) return j.at("model").get<ModelConfig>();
  return j.get<ModelConfig>();
}

std::vector<ExperimentConfig> experiment_configs_from_json(const json& j) {
  std::vector<ExperimentConfig> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(e.get<ExperimentConfig>());
  } else {
    out.push_back(j.get<ExperimentConfig>());
  }
  if (out.empty()) throw std::invalid_argument("config: no experiments");
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

}  // namespace skipvision

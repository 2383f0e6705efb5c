#include "skipvision/harness.hpp"

#include "skipvision/attention_export.hpp"
#include "skipvision/serialization.hpp"
#include "skipvision/summary_layer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace skipvision {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  model.validate();
  if (flops_model) flops_model->validate();
  encoder.validate();
  schedule.validate();
  if (static_cast<std::size_t>(encoder.dim) != model.hidden)
    throw std::invalid_argument("encoder.dim " + std::to_string(encoder.dim) +
                                " != model.hidden " + std::to_string(model.hidden));
  if (selection.strategy == SelectionConfig::Strategy::ClsTopN && selection.n_retain == 0)
    throw std::invalid_argument("selection.n_retain must be >= 1 for cls_top_n");
  if (merge.k == 0) throw std::invalid_argument("merge.k must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  if (timing_repeats == 0) throw std::invalid_argument("timing_repeats must be >= 1");
  for (auto l : capture_layers)
    if (l >= model.layers) throw std::invalid_argument("capture layer " + std::to_string(l) + " out of range");
}

namespace {

// Independent streams per component so that, say, changing the text length
// leaves the model weights untouched.
enum SeedStream : std::uint64_t { kModel = 1, kEncoder, kText, kFormer, kLatter };

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

template <typename Scalar>
TokenSequence<Scalar> concat(const TokenSequence<Scalar>& a, const TokenSequence<Scalar>& b) {
  auto out = a;
  for (std::size_t i = 0; i < b.size(); ++i)
    out.push_back(b.embeddings.row(static_cast<Eigen::Index>(i)), b.roles[i], b.provenance[i],
                  b.positions[i], b.ids[i]);
  return out;
}

}  // namespace

template <typename Scalar>
PreparedInput<Scalar> prepare_input(const ExperimentConfig& cfg, std::uint64_t seed) {
  stage("config", [&] { cfg.validate(); return 0; });
  PreparedInput<Scalar> in;

  in.model = stage("model", [&] {
    ModelConfig mc = cfg.model;
    mc.seed = derive_seed(derive_seed(seed, kModel), cfg.model.seed);
    return make_model<Scalar>(mc, cfg.init);
  });

  in.encoded = stage("encode", [&] {
    MockEncoderConfig ec = cfg.encoder;
    ec.seed = derive_seed(derive_seed(seed, kEncoder), cfg.encoder.seed);
    return mock_encode<Scalar>(ec);
  });
  in.visual_tokens = in.encoded.size() - 1;

  auto selection = stage("select", [&] { return select_tokens(in.encoded, cfg.selection); });
  in.skipped_before_merge = selection.skipped.size();

  auto skipped = selection.skipped;
  if (cfg.schedule.merge && !skipped.empty()) {
    auto merged = stage("merge", [&] {
      if (cfg.merge.k > skipped.size())
        throw std::invalid_argument("merge.k " + std::to_string(cfg.merge.k) + " exceeds " +
                                    std::to_string(skipped.size()) + " skipped tokens");
      return merge_tokens(skipped, cfg.merge);
    });
    skipped = std::move(merged.merged);
    in.theta = merged.mean_merge_similarity;
  }

  std::optional<RowVector<Scalar>> s_former, s_latter;
  stage("summary", [&] {
    const auto width = static_cast<Eigen::Index>(cfg.model.hidden);
    if (cfg.schedule.former_summary) {
      auto p = SummaryParams<Scalar>::random(width, derive_seed(seed, kFormer));
      s_former = summarize(selection.retained.embeddings, p);
    }
    if (cfg.schedule.latter_summary) {
      auto p = SummaryParams<Scalar>::random(width, derive_seed(seed, kLatter));
      s_latter = summarize(concat(selection.retained, skipped).embeddings, p);
    }
    return 0;
  });

  auto text = stage("text", [&] {
    return text_tokens(in.model.embedding, cfg.text_tokens, derive_seed(seed, kText));
  });
  in.sequence = stage("assemble", [&] {
    auto seq = assemble_sequence(selection.retained, skipped, s_former, s_latter, text);
    seq.validate();
    return seq;
  });
  return in;
}

template PreparedInput<float> prepare_input<float>(const ExperimentConfig&, std::uint64_t);
template PreparedInput<double> prepare_input<double>(const ExperimentConfig&, std::uint64_t);

RunReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                         std::vector<AttentionMap>* attention_maps) {
  auto in = prepare_input<float>(cfg, seed);
  const auto& seq = in.sequence;

  RunReport r;
  r.config_id = cfg.id;
  r.seed = seed;
  r.theta = in.theta;
  for (auto role : {TokenRole::RetainedVisual, TokenRole::SkippedVisual, TokenRole::SummaryFormer,
                    TokenRole::SummaryLatter, TokenRole::Text})
    r.token_counts[std::string(to_string(role))] = seq.count(role);

  const auto route = ffn_routing(seq.roles, cfg.schedule);
  const auto routed = static_cast<std::uint64_t>(std::count(route.begin(), route.end(), true));

  stage("flops", [&] {
    r.flops = skip_flops(FlopsQuery{cfg.model, seq.size(), seq.size(), routed});
    const std::uint64_t visual = seq.size() - seq.count(TokenRole::Text);
    r.visual.baseline_n = in.visual_tokens;
    r.visual.n1 = visual;
    r.visual.n2 = visual - (seq.size() - routed);
    r.visual.ratio = flops_ratio(cfg.accounting_model(), r.visual.baseline_n, r.visual.n1, r.visual.n2);
    return 0;
  });

  std::vector<double> prefill_times, decode_times;
  stage("prefill", [&] {
    for (std::size_t rep = 0; rep < cfg.timing_repeats; ++rep) {
      Session<float> session(in.model, cfg.schedule);
      MacCounter counter;
      PrefillOptions<float> opts;
      if (rep == 0) {
        opts.counter = &counter;
        opts.capture_layers = cfg.capture_layers;
        opts.attention_maps = attention_maps;
      }
      auto t0 = std::chrono::steady_clock::now();
      session.prefill(seq, opts);
      prefill_times.push_back(elapsed_ms(t0));

      stage("decode", [&] {
        auto t1 = std::chrono::steady_clock::now();
        auto ids = session.greedy_decode(cfg.decode_steps);
        decode_times.push_back(elapsed_ms(t1));
        if (rep == 0) {
          r.decoded_ids = std::move(ids);
          r.measured_macs = counter.formula_total();
          r.evicted_positions = session.evicted_positions();
          r.cache_rows = seq.size() - r.evicted_positions.size();
        }
        return 0;
      });
    }
    return 0;
  });
  r.prefill_ms = median(prefill_times);
  r.decode_ms = median(decode_times);

  if (cfg.measure_error) {
    r.error = stage("error", [&] {
      auto model = in.model.template cast<double>();
      DivergenceOptions opts;
      opts.theta = in.theta;
      return measure_skip_divergence(model, seq.template cast<double>(), cfg.schedule, opts);
    });
  }

  r.determinism_hash = sha256_hex(report_json(r, false).dump());
  return r;
}

std::string emit_tradeoff_curve(const std::vector<ExperimentConfig>& cfgs) {
  if (cfgs.empty()) throw std::invalid_argument("emit_tradeoff_curve: no configs");
  std::ostringstream out;
  out << "config_id,N1,N2,flops_ratio,wall_clock\n";
  out << std::setprecision(10);
  for (const auto& cfg : cfgs) {
    auto r = run_experiment(cfg, cfg.seeds.front());
    out << cfg.id << ',' << r.visual.n1 << ',' << r.visual.n2 << ',' << r.visual.ratio << ','
        << r.prefill_ms + r.decode_ms << '\n';
  }
  return out.str();
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

namespace {

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_run_outputs(const ExperimentConfig& cfg, const RunReport& report,
                       const std::vector<AttentionMap>& maps, const fs::path& dir) {
  stage("output", [&] {
    fs::create_directories(dir);
    write_file(dir / "config.json", json(cfg).dump(2) + "\n");
    write_file(dir / "report.json", report_json(report).dump(2) + "\n");

    std::ostringstream counts;
    counts << "role,count\n";
    for (const auto& [role, n] : report.token_counts) counts << role << ',' << n << '\n';
    write_file(dir / "token_counts.csv", counts.str());

    if (report.error) {
      std::ostringstream eps;
      eps << std::setprecision(17) << "layer,eps_layer,eps_skip\n";
      for (std::size_t l = 0; l < report.error->eps_layer.size(); ++l)
        eps << l << ',' << report.error->eps_layer[l] << ',' << report.error->eps_skip[l] << '\n';
      write_file(dir / "error_layers.csv", eps.str());
    }

    for (const auto& m : maps)
      write_attention_map(m, dir / "attention", "layer_" + std::to_string(m.layer));

    // Manifest over everything written so far, in path order.
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json manifest = json::object();
    for (const auto& f : files)
      manifest[fs::relative(f, dir).generic_string()] = sha256_hex(slurp(f));
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return 0;
  });
}

}  // namespace skipvision

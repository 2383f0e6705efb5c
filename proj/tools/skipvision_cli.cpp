// skipvision command-line front end.
#include "skipvision/harness.hpp"
#include "skipvision/serialization.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace skipvision;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool config_required) {
  auto* opt = app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  if (config_required) opt->required();
  app->add_option("--seed", c.seed, "run a single seed instead of the configured list");
  app->add_option("--out", c.out, "output directory (default: $SKIPVISION_OUT or the config's output_dir)");
}

fs::path output_dir(const Common& c, const std::string& fallback) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("SKIPVISION_OUT"); env && *env) return env;
  return fallback;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("output", "cannot write " + path.string());
  out << text;
}

ExperimentConfig load_experiment(const Common& c) {
  if (c.config.empty()) return ExperimentConfig{};
  auto j = read_json_file(c.config);
  try {
    return experiment_configs_from_json(j).front();
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
}

std::vector<std::uint64_t> seeds_of(const Common& c, const ExperimentConfig& cfg) {
  return c.seed ? std::vector<std::uint64_t>{*c.seed} : cfg.seeds;
}

int cmd_run(const Common& c) {
  auto cfg = load_experiment(c);
  const auto dir = output_dir(c, cfg.output_dir);
  const auto seeds = seeds_of(c, cfg);

  // Seeds fan out; each one writes only inside its own directory.
  std::vector<std::future<RunReport>> jobs;
  for (auto s : seeds) {
    jobs.push_back(std::async(std::launch::async, [&cfg, &dir, s] {
      std::vector<AttentionMap> maps;
      auto r = run_experiment(cfg, s, &maps);
      write_run_outputs(cfg, r, maps, dir / ("seed_" + std::to_string(s)));
      return r;
    }));
  }
  json summary = json::array();
  json manifest = json::object();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto r = jobs[i].get();
    summary.push_back(report_json(r));
    manifest["seed_" + std::to_string(seeds[i])] = r.determinism_hash;
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_flops(const Common& c, const std::string& preset, std::uint64_t baseline,
              std::optional<std::uint64_t> n1_opt, std::optional<std::uint64_t> n2_opt) {
  ModelConfig model = ModelConfig::llama3_8b();
  if (!c.config.empty()) {
    try {
      model = model_config_from_any(read_json_file(c.config));
    } catch (const std::exception& e) {
      throw StageError("config", e.what());
    }
  } else if (preset == "llama3-8b-mha") {
    model.n_kv_heads = model.n_heads;
  } else if (preset != "llama3-8b") {
    throw StageError("config", "unknown preset '" + preset + "'");
  }
  const auto n1 = n1_opt.value_or(baseline);
  const auto n2 = n2_opt.value_or(n1);

  json j;
  try {
    const auto dense = dense_flops(model, baseline);
    const FlopsQuery q{model, std::max(baseline, n1), n1, n2};
    const auto skip = skip_flops(q);
    j = json{{"model", model},
             {"baseline_n", baseline},
             {"n1", n1},
             {"n2", n2},
             {"dense", dense},
             {"skip", skip},
             {"flops_ratio", flops_ratio(model, baseline, n1, n2)},
             {"training_estimate_dense", training_flops_estimate({model, baseline, baseline, baseline})},
             {"training_estimate_skip", training_flops_estimate(q)},
             {"params", param_count(model)}};
  } catch (const std::exception& e) {
    throw StageError("flops", e.what());
  }

  // Sweep N1 over eighths of the baseline and N2 over eighths of N1.
  std::ostringstream csv;
  csv << "N1,N2,flops_ratio\n" << std::setprecision(10);
  for (std::uint64_t a = 1; a <= 8; ++a) {
    const auto s1 = baseline * a / 8;
    for (std::uint64_t b = 0; b <= 8; ++b) {
      const auto s2 = s1 * b / 8;
      csv << s1 << ',' << s2 << ',' << flops_ratio(model, baseline, s1, s2) << '\n';
    }
  }
  const auto dir = output_dir(c, "skipvision-out");
  write_text(dir / "flops.json", j.dump(2) + "\n");
  write_text(dir / "flops_curve.csv", csv.str());
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bound(const Common& c, std::size_t n_seeds, const std::string& init) {
  auto cfg = load_experiment(c);
  if (c.config.empty()) {
    // Without a config: the 4-layer, 32-wide desk model with every skip mechanism on.
    cfg.model.layers = 4;
    cfg.model.n_kv_heads = 2;
    cfg.schedule = SkipSchedule::all_on();
  }
  if (!init.empty()) cfg.init = parse_init_mode(init);
  std::vector<std::uint64_t> seeds;
  if (c.seed) {
    seeds = {*c.seed};
  } else {
    for (std::uint64_t s = 0; s < n_seeds; ++s) seeds.push_back(s);
  }

  json reports = json::array();
  std::ostringstream csv;
  csv << "seed,eps_measured,eps_bound,kl_measured,kl_bound13,kl_bound14\n" << std::setprecision(17);
  std::size_t violations = 0;
  for (auto s : seeds) {
    auto in = prepare_input<double>(cfg, s);
    ErrorReport r;
    try {
      DivergenceOptions opts;
      opts.theta = in.theta;
      r = measure_skip_divergence(in.model, in.sequence, cfg.schedule, opts);
    } catch (const std::exception& e) {
      throw StageError("bound", e.what());
    }
    if (r.eps_total_measured > r.eps_total_bound) ++violations;
    json j = r;
    j["seed"] = s;
    reports.push_back(j);
    csv << s << ',' << r.eps_total_measured << ',' << r.eps_total_bound << ',' << r.kl_measured << ','
        << r.kl_bound13 << ',' << r.kl_bound14 << '\n';
  }
  const auto dir = output_dir(c, cfg.output_dir);
  write_text(dir / "bound.json", reports.dump(2) + "\n");
  write_text(dir / "bound.csv", csv.str());
  std::cout << reports.dump(2) << "\n";
  if (violations > 0) {
    std::cerr << "skipvision: error in stage 'bound': measured error exceeds the bound on "
              << violations << " of " << seeds.size() << " seeds\n";
    return 1;
  }
  return 0;
}

int cmd_merge_stats(const Common& c) {
  auto cfg = load_experiment(c);
  const auto seed = seeds_of(c, cfg).front();
  auto in = prepare_input<double>(cfg, seed);

  const auto& encoded = in.encoded;
  std::vector<std::size_t> visual;
  for (std::size_t i = 0; i < encoded.size(); ++i)
    if (encoded.provenance[i].is_visual()) visual.push_back(i);
  auto density = similarity_density(encoded.select(visual));

  json j{{"seed", seed},
         {"density", density},
         {"skipped_before_merge", in.skipped_before_merge},
         {"skipped_after_merge", in.sequence.count(TokenRole::SkippedVisual)},
         {"theta", in.theta}};
  const auto dir = output_dir(c, cfg.output_dir);
  write_text(dir / "similarity_density.csv", density.to_csv());
  write_text(dir / "merge_stats.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_decode(const Common& c, std::optional<std::size_t> steps) {
  auto cfg = load_experiment(c);
  if (steps) cfg.decode_steps = *steps;
  cfg.timing_repeats = 1;
  json out = json::array();
  for (auto s : seeds_of(c, cfg)) {
    auto r = run_experiment(cfg, s);
    out.push_back({{"seed", s}, {"decoded_ids", r.decoded_ids}, {"evicted_positions", r.evicted_positions}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_curve(const Common& c, const std::vector<std::string>& configs) {
  std::vector<ExperimentConfig> cfgs;
  for (const auto& path : configs) {
    try {
      for (auto& e : experiment_configs_from_json(read_json_file(path))) cfgs.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw StageError("config", e.what());
    }
  }
  if (c.seed)
    for (auto& cfg : cfgs) cfg.seeds = {*c.seed};
  auto csv = emit_tradeoff_curve(cfgs);
  write_text(output_dir(c, "skipvision-out") / "curve.csv", csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skipvision: visual-token skipping experiments on a desk-scale decoder"};
  app.require_subcommand(1);

  Common run_c, flops_c, bound_c, merge_c, decode_c, curve_c;

  auto* run = app.add_subcommand("run", "run an experiment config, one output directory per seed");
  add_common(run, run_c, false);

  auto* flops = app.add_subcommand("flops", "analytic FLOPs and parameter accounting");
  add_common(flops, flops_c, false);
  std::string preset = "llama3-8b";
  std::uint64_t baseline = 576;
  std::optional<std::uint64_t> n1, n2;
  flops->add_option("--preset", preset, "llama3-8b or llama3-8b-mha (ignored with --config)");
  flops->add_option("--baseline-n", baseline, "visual tokens in the dense baseline");
  flops->add_option("--n1", n1, "tokens through attention (default: baseline)");
  flops->add_option("--n2", n2, "tokens through the FFN (default: N1)");

  auto* bound = app.add_subcommand("bound", "measured skip error against its analytic bound");
  add_common(bound, bound_c, false);
  std::size_t n_seeds = 100;
  std::string init;
  bound->add_option("--seeds", n_seeds, "number of seeds, 0..n-1");
  bound->add_option("--init", init, "gaussian or orthogonal");

  auto* merge = app.add_subcommand("merge-stats", "similarity densities and merge statistics");
  add_common(merge, merge_c, false);

  auto* decode = app.add_subcommand("decode", "greedy decode and print the token ids");
  add_common(decode, decode_c, false);
  std::optional<std::size_t> steps;
  decode->add_option("--steps", steps, "decode steps (default from config)");

  auto* curve = app.add_subcommand("curve", "FLOPs ratio vs token budget across configs");
  std::vector<std::string> curve_configs;
  curve->add_option("--config", curve_configs, "config file (repeatable; arrays allowed)")
      ->required()
      ->check(CLI::ExistingFile);
  curve->add_option("--seed", curve_c.seed, "seed for every config");
  curve->add_option("--out", curve_c.out, "output directory");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*run) return cmd_run(run_c);
    if (*flops) return cmd_flops(flops_c, preset, baseline, n1, n2);
    if (*bound) return cmd_bound(bound_c, n_seeds, init);
    if (*merge) return cmd_merge_stats(merge_c);
    if (*decode) return cmd_decode(decode_c, steps);
    if (*curve) return cmd_curve(curve_c, curve_configs);
  } catch (const StageError& e) {
    std::cerr << "skipvision: error in stage '" << e.stage() << "': " << e.detail() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "skipvision: error in stage '" << name << "': " << e.what() << "\n";
    return 1;
  }
  return 0;
}

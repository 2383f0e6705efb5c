#pragma once

#include "skipvision/error_analysis.hpp"
#include "skipvision/flops.hpp"
#include "skipvision/model.hpp"
#include "skipvision/token_reduction.hpp"
#include "skipvision/token_stream.hpp"
#include "skipvision/transformer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipvision {

/// A failure tagged with the pipeline stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), detail_(what) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string stage_;
  std::string detail_;
};

struct ExperimentConfig {
  std::string id = "experiment";
  ModelConfig model;
  InitMode init = InitMode::Gaussian;
  std::optional<ModelConfig> flops_model;  // accounting-only architecture; defaults to `model`
  MockEncoderConfig encoder;
  SelectionConfig selection;
  MergeConfig merge{16};
  SkipSchedule schedule;
  std::size_t text_tokens = 8;
  std::size_t decode_steps = 8;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "skipvision-out";
  std::vector<std::size_t> capture_layers;  // attention maps exported for these layers
  bool measure_error = false;               // attach an ErrorReport (64-bit rerun)
  std::size_t timing_repeats = 5;

  void validate() const;
  const ModelConfig& accounting_model() const { return flops_model ? *flops_model : model; }
};

/// Everything upstream of the decoder for one seed.
template <typename Scalar>
struct PreparedInput {
  Model<Scalar> model;
  TokenSequence<Scalar> encoded;       // raw encoder output, cls included
  TokenSequence<Scalar> sequence;
  std::size_t visual_tokens = 0;       // encoder output excluding cls
  std::size_t skipped_before_merge = 0;
  double theta = 1.0;                  // mean merge similarity
};

/// mock-encode -> select -> merge (flag) -> summaries (FS/LS) -> assemble.
template <typename Scalar>
PreparedInput<Scalar> prepare_input(const ExperimentConfig& cfg, std::uint64_t seed);

struct VisualFlops {
  std::uint64_t baseline_n = 0;
  std::uint64_t n1 = 0;
  std::uint64_t n2 = 0;
  double ratio = 1.0;
};

struct RunReport {
  std::string config_id;
  std::uint64_t seed = 0;
  FlopsReport flops;              // analytic, over the whole prefill sequence
  std::uint64_t measured_macs = 0; // instrumented prefill MACs (formula scopes)
  VisualFlops visual;
  std::map<std::string, std::size_t> token_counts;
  std::vector<std::int64_t> decoded_ids;
  std::vector<std::size_t> evicted_positions;
  std::size_t cache_rows = 0;     // per layer, after prefill (and eviction)
  double theta = 1.0;
  std::optional<ErrorReport> error;
  double prefill_ms = 0;          // median over repeats
  double decode_ms = 0;
  std::string determinism_hash;   // sha256 of the report without timing fields
};

/// Runs one seed end to end. Sub-module failures surface as StageError.
RunReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                         std::vector<AttentionMap>* attention_maps = nullptr);

/// Runs each config on its first seed: config_id,N1,N2,flops_ratio,wall_clock.
std::string emit_tradeoff_curve(const std::vector<ExperimentConfig>& cfgs);

/// Writes config echo, report, attention maps and a sha256 manifest under `dir`.
void write_run_outputs(const ExperimentConfig& cfg, const RunReport& report,
                       const std::vector<AttentionMap>& maps, const std::filesystem::path& dir);

std::string sha256_hex(std::string_view data);

}  // namespace skipvision

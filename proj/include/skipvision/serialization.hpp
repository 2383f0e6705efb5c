#pragma once

#include "skipvision/harness.hpp"

#include <json.hpp>

namespace skipvision {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const MockEncoderConfig& c);
void from_json(const json& j, MockEncoderConfig& c);
void to_json(json& j, const SelectionConfig& c);
void from_json(const json& j, SelectionConfig& c);
void to_json(json& j, const MergeConfig& c);
void from_json(const json& j, MergeConfig& c);
void to_json(json& j, const SkipSchedule& s);
void from_json(const json& j, SkipSchedule& s);
void to_json(json& j, const ExperimentConfig& c);
void from_json(const json& j, ExperimentConfig& c);

void to_json(json& j, const ParamBreakdown& p);
void to_json(json& j, const FlopsReport& r);
void to_json(json& j, const LipschitzEstimate& e);
void to_json(json& j, const ErrorReport& r);
void to_json(json& j, const DensityReport& r);

/// Timing fields are left out when `include_timing` is false; that form is
/// what the determinism hash covers.
json report_json(const RunReport& r, bool include_timing = true);

template <typename Scalar>
json token_sequence_json(const TokenSequence<Scalar>& seq);
template <typename Scalar>
TokenSequence<Scalar> token_sequence_from_json(const json& j);

/// Accepts a bare ModelConfig or any object with a "model" member.
ModelConfig model_config_from_any(const json& j);

/// Accepts one ExperimentConfig object or an array of them.
std::vector<ExperimentConfig> experiment_configs_from_json(const json& j);

json read_json_file(const std::filesystem::path& path);

}  // namespace skipvision

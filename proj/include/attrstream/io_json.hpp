#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "attrstream/estimator.hpp"
#include "attrstream/evaluation.hpp"
#include "attrstream/oracle.hpp"
#include "attrstream/streaming.hpp"
#include "attrstream/trajectory.hpp"
#include "attrstream/unitization.hpp"

namespace attrstream {

using Json = nlohmann::ordered_json;

// Partitions: {method, K, grid_dims, membership} with the K×M matrix as a
// row-major string of '0'/'1'.
Json to_json(const RegionPartition& partition);
RegionPartition partition_from_json(const Json& j);

std::string mask_bits(const MaskSample& mask);
MaskSample mask_from_bits(const std::string& bits);

Json to_json(const TrainingSample& sample);
TrainingSample sample_from_json(const Json& j);
void write_training_set(const TrainingSet& set, std::ostream& out);
TrainingSet read_training_set(std::istream& in);

Json to_json(const EstimatorWeights& weights);
EstimatorWeights weights_from_json(const Json& j);

Json to_json(const Manifest& manifest);
Manifest manifest_from_json(const Json& j);

/// One NDJSON line, without timing fields unless asked.
Json to_json(const AttributionFrame& frame, bool timing = false);
AttributionFrame frame_from_json(const Json& j);
std::vector<AttributionFrame> read_frames(std::istream& in);

Json to_json(const EvalReport& report);
/// Header plus one row per (dataset, method).
void write_eval_csv(const EvalReport& report, std::ostream& out);

void write_loss_history(std::span<const double> losses, std::ostream& out);

/// step, e_1..e_R, then one column per projected axis.
void write_trajectory_csv(const CanonicalTrajectory& canonical, const Steps& projected,
                          std::ostream& out);
Json to_json(const Distribution& d);

// File helpers. Missing or unreadable files raise ErrorKind::io, malformed
// content ErrorKind::format.
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace attrstream

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "taformer/harness/model.hpp"
#include "taformer/synth/synthclip.hpp"

namespace taf {

/// Forward-only quality measures over a clip set.
struct EvalMetrics {
  double mean_loss = 0.0;
  double mean_iou = 0.0;            // matched-slot mask IoU at the level-0 resolution
  double intra_similarity = 0.0;    // cosine of one instance's box queries across frames
  double inter_similarity = 0.0;    // cosine between box queries of different instances
  double track_consistency = 0.0;   // frames whose best-IoU slot is the instance's majority slot
  double separation() const { return intra_similarity - inter_similarity; }
};

struct MetricsReport {
  std::size_t steps = 0;
  std::vector<double> losses;  // mean total loss over the pool, before each update
  double initial_loss = 0.0;
  double final_loss = 0.0;     // after the last update
  EvalMetrics eval;

  nlohmann::json to_json() const;
};

/// The fixed training pool: clip i uses seed `cfg.seed * 1000 + i`.
std::vector<SynthClip> training_pool(const RunConfig& cfg);

/// Evaluates `model` on `clips`; fills `predictions` with the dump format
/// accepted by validate_predictions when non-null.
EvalMetrics evaluate(const Model& model, const std::vector<SynthClip>& clips, nlohmann::json* predictions = nullptr);

/// Throws FormatError describing the first violation.
void validate_predictions(const nlohmann::json& dump);

struct StepRecord {
  std::size_t step = 0;
  double total = 0.0;
  TermReport terms;
  double grad_norm = 0.0;
  double wall_time_s = 0.0;  // excluded from determinism comparisons
  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::filesystem::path out;  // empty: write nothing
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<SynthClip> clips;
  MetricsReport report;
};

/// AdamW over the training pool. With `out` set writes loss_log.jsonl,
/// metrics.json, checkpoint/ and clips/.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

enum class AblationAxis { Components, KInter, Fusion };
AblationAxis parse_axis(const std::string& s);

struct AblationRow {
  std::string variant;
  RunConfig config;
  MetricsReport report;
};

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base, AblationAxis axis);
std::vector<AblationRow> run_ablation(const RunConfig& base, AblationAxis axis,
                                      const std::function<void(const AblationRow&)>& on_row = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Attention maps (channel mean of level 0, before and after the encoder) as
/// PGM per frame, plus final-layer box-query embeddings labelled by matched
/// instance. Returns the embedding JSON.
nlohmann::json dump_clip(const Model& model, const SynthClip& clip, const std::filesystem::path& out);

/// IoU of (logits > 0) against a binary mask; 1 when both are empty.
double mask_iou(std::span<const double> logits, const std::vector<double>& truth);

}  // namespace taf

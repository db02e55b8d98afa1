#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fade/data.hpp"
#include "fade/evaluation.hpp"
#include "fade/trainer.hpp"

namespace fade {

// Built-in two-group fixture with controllable planted disparity: every user
// prefers one item cluster, and group-1 users' preference distributions are
// mixed with uniform noise at level `disparity`, which drags their
// recommendation quality down once a model is trained on the stream.
struct SyntheticSpec {
  int users = 2000;
  int items = 500;
  int periods = 5;  // dynamic periods T
  double disparity = 0.5;
  double group1_fraction = 0.3;
  int interactions_per_user = 40;
  // Group-1 users contribute proportionally fewer interactions, mirroring the
  // activity imbalance of the real datasets this fixture stands in for.
  double group1_interaction_scale = 1.0;
  int clusters = 10;
  double base_noise = 0.05;  // group-0 noise floor
};

struct ExperimentConfig {
  std::string data_path;
  std::string attrs_path;
  LogFormat format = LogFormat::Csv;
  AttributeMapping attribute_mapping;
  std::optional<SyntheticSpec> synthetic;
  int binarize_threshold = 2;
  double pretrain_fraction = 0.6;
  double dynamic_fraction = 0.28;
  int periods = 7;
  std::vector<Strategy> strategies;
  HyperParams hp;
  EvalConfig eval;
  std::string out_dir;  // empty = in-memory only, nothing written

  // Throws ConfigError; performs no writes.
  void validate() const;
};

InteractionLog generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct StrategySummary {
  MetricTriple mean_perf;       // mean over periods of the overall metrics
  MetricTriple mean_abs_pd;     // mean over periods of |PD|
  MetricTriple mean_signed_pd;  // mean over periods of signed PD
  double mean_update_seconds = 0.0;   // periods 1..T-1
  double final_period_seconds = 0.0;  // period T-1
  long long empty_group_batches = 0;
};

struct StrategyReport {
  std::string name;
  Strategy strategy;
  double lambda = 0.0;  // effective fairness scale
  std::vector<PeriodMetrics> periods;
  std::vector<PeriodLog> period_logs;
  StrategySummary summary;
};

struct RunReport {
  int num_users = 0;
  int num_items = 0;
  int dynamic_periods = 0;
  std::size_t interactions = 0;
  std::vector<StrategyReport> strategies;
};

// Full pipeline: ingest (or generate), binarize, split, train every strategy,
// evaluate every checkpoint, and emit reports/checkpoints under
// cfg.out_dir when set. Fails before any write on invalid configuration; a
// mid-run failure flushes partial results next to a FAILED marker.
RunReport run_experiment(const ExperimentConfig& cfg);

enum class ReportFormat { Json, Csv, Tsv };

void emit_report(const RunReport& report, const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::vector<ReportFormat>& formats);

std::string report_to_json(const RunReport& report, const ExperimentConfig& cfg);
RunReport report_from_json(const std::string& json_text);

}  // namespace fade

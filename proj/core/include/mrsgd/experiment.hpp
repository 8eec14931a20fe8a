#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrsgd/analysis.hpp"
#include "mrsgd/config.hpp"
#include "mrsgd/data.hpp"
#include "mrsgd/network.hpp"
#include "mrsgd/partition.hpp"

namespace mrsgd {

/// One CSV line: state at the end of an epoch. Unset optionals are written
/// as empty fields.
struct MetricsRow {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t micro_step = 0;
  std::optional<double> train_loss;
  std::optional<double> acc_train;
  std::optional<double> acc_test;
  std::optional<double> acc_clean;
  std::optional<double> acc_patch_only;
  std::optional<double> acc_augmented;
  std::optional<double> grad_norm_sq;
  CostCounters counters;

  bool operator==(const MetricsRow&) const = default;
};

/// Column names in file order.
const std::vector<std::string>& metrics_columns();
std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
/// Inverse of the writer (header line required).
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

/// Training set plus named evaluation sets: test, or clean / patch_only /
/// augmented for patch data.
struct Datasets {
  Dataset train;
  std::map<std::string, Dataset> evals;
};

/// Directory holding the four MNIST IDX files: data.mnist_dir, else
/// $MRSGD_MNIST_DIR, else ./data/mnist.
std::filesystem::path mnist_directory(const DataConfig& cfg);
Datasets build_datasets(const DataConfig& cfg);

/// Per-sample input shape and class count implied by the data config.
std::vector<std::size_t> input_shape_for(const DataConfig& cfg);
std::size_t classes_for(const DataConfig& cfg);

Network build_network(const ExperimentConfig& cfg, RngStream init);
Partition build_partition(const ExperimentConfig& cfg, const Network& net, RngStream& rng);

/// Mean loss and accuracy of `net` on `ds`, evaluated in row chunks.
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(Network& net, LossKind loss, const Dataset& ds);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

struct MetricStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Aggregates over seeds: `final_<metric>` uses the last epoch,
/// `best_<metric>` the best epoch of each seed (lowest for losses).
struct Summary {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::size_t epochs = 0;
  std::map<std::string, MetricStats> metrics;

  std::string to_json() const;
};
Summary summarize(const std::string& name, const std::vector<SeedRun>& runs);

/// Trains one seed. When `checkpoint` is set, the final network, optimizer
/// state and partition are written there.
SeedRun train_seed(const ExperimentConfig& cfg, const Datasets& data, std::uint64_t seed,
                   const std::filesystem::path* checkpoint = nullptr);

struct RunResult {
  std::vector<SeedRun> runs;
  Summary summary;
};

/// Runs every seed. With a nonempty `out_dir`, writes metrics_seed<S>.csv per
/// seed, summary.json, and checkpoints when enabled.
RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                         const Datasets* data = nullptr);

/// Output directory: --out, else output.dir, else $MRSGD_OUTPUT_ROOT/<name>,
/// else runs/<name>.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::optional<std::string>& out_override);

/// Expands sweeps and runs each point; returns the number of points. Sweep
/// points write into <out>/<point> and a sweep_summary.json at <out>.
std::size_t run_config(const ConfigMap& map, const std::optional<std::uint64_t>& seed_override,
                       const std::optional<std::string>& out_override);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  double tolerance = 1e-5;
  bool passed = false;
  std::string to_json() const;
};

/// Central differences against backward_full on every coordinate (or on
/// `max_coordinates` evenly spaced ones when nonzero). Error per coordinate
/// is |analytic - numeric| / (1 + |analytic|).
GradCheckReport gradient_check(Network& net, LossKind loss, const Batch& batch, double eps = 1e-5,
                               std::size_t max_coordinates = 0);
/// gradient_check on the configured model with a random Gaussian batch.
GradCheckReport gradcheck_config(const ConfigMap& map);

/// Logistic-regression bound check driven by bound.* keys.
BoundReport boundcheck_config(const ConfigMap& map);

/// Writes train.bin and one <eval>.bin per evaluation set; returns the paths.
std::vector<std::filesystem::path> gendata_config(const ConfigMap& map, const std::filesystem::path& out_dir);

}  // namespace mrsgd

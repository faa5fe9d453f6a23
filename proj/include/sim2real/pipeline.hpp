#pragma once

// End-to-end operations shared by the command-line tool and the acceptance
// runner: dataset generation, evaluation, the distribution-gap diagnostic,
// bound verification tables and the ablation sweep.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sim2real/divergence.hpp"
#include "sim2real/trainer.hpp"

namespace sim2real {

struct DatagenOptions {
    int n_source = 500;
    int n_target = 500;
    int image_size = 64;
    std::uint64_t seed = 0;
};

DatasetManifest generate_dataset(const DatagenOptions& options, const std::filesystem::path& dir);

EvalReport evaluate_checkpoint(const Checkpoint& checkpoint, const Dataset& dataset,
                               const std::filesystem::path& dataset_dir, Domain domain);

struct DistributionGap {
    double transferred_to_target = 0.0;  // empirical χ²(G(source), target)
    double source_to_target = 0.0;       // empirical χ²(source, target)
};

DistributionGap distribution_gap(const Checkpoint& checkpoint, const Dataset& dataset,
                                 const HistogramSpec& spec = HistogramSpec());

struct BoundRow {
    int instance = 0;
    int x_outcomes = 0;
    int y_outcomes = 0;
    BoundReport report;
    [[nodiscard]] double bound() const { return report.theorem.rhs; }
    [[nodiscard]] double slack() const {
        return std::min({report.prop1.slack, report.prop2.slack, report.theorem.slack});
    }
    [[nodiscard]] bool pass() const { return report.all_hold(); }
};

std::vector<BoundRow> verify_bounds(int instances, std::uint64_t seed, int max_outcomes = 16);
void write_bounds_tsv(const std::vector<BoundRow>& rows, const std::filesystem::path& path);

struct AblationRow {
    TrainConfig config;
    TrainSnapshot final;
    std::filesystem::path checkpoint;
    std::optional<double> target_accuracy;  // when target labels are available
    DistributionGap gap;
};

// Trains every ablation configuration into out_dir/<name>/ and writes
// out_dir/ablation.tsv.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::filesystem::path& dataset_dir,
                                      const std::filesystem::path& out_dir);

}  // namespace sim2real

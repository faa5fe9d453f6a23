#pragma once

// Steering discretization over [−range, range] rad/s, probability-weighted
// reconstruction, and classifier evaluation tables.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "sim2real/errors.hpp"

namespace sim2real {

enum class Command { left = 0, straight = 1, right = 2 };
inline constexpr int kCommandCount = 3;

std::string_view to_string(Command c);
Command parse_command(std::string_view s);

class SteerBins {
public:
    explicit SteerBins(int n_bins = 5, double range = 1.4);

    [[nodiscard]] int n_bins() const { return n_bins_; }
    [[nodiscard]] double range() const { return range_; }
    [[nodiscard]] double width() const { return 2.0 * range_ / n_bins_; }
    [[nodiscard]] const std::vector<double>& boundaries() const { return boundaries_; }
    [[nodiscard]] const std::vector<double>& representatives() const { return representatives_; }

    // Values outside the range are clamped; a value on a boundary belongs to
    // the lower interval, except the minimum which belongs to the first.
    [[nodiscard]] int discretize(double angular_velocity) const;

    // Σ probs[k]·representatives[k], summed in mirrored pairs so symmetric
    // inputs reconstruct to exactly zero.
    [[nodiscard]] double reconstruct(std::span<const double> probs) const;

private:
    int n_bins_;
    double range_;
    std::vector<double> boundaries_;
    std::vector<double> representatives_;
};

struct EvalReport {
    int n_bins = 5;
    std::array<double, kCommandCount> accuracy{};  // NaN-free: 0 when a command has no samples
    std::array<long, kCommandCount> count{};
    double overall_accuracy = 0.0;
    long total = 0;
    std::array<Eigen::MatrixXi, kCommandCount> confusion;  // rows true class, columns predicted
    double dangerous_swap_rate = 0.0;  // extreme classes predicted as the opposite extreme, over all samples
    double mean_abs_velocity_error = 0.0;  // |reconstruct(probs) − label|
};

struct Prediction {
    Command command = Command::straight;
    int true_class = 0;
    double true_velocity = 0.0;
    std::vector<double> probs;
};

EvalReport tabulate(std::span<const Prediction> predictions, const SteerBins& bins = SteerBins());

void write_report_tsv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace sim2real

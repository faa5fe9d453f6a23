#include "sim2real/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "sim2real/errors.hpp"

namespace sim2real {

std::string_view to_string(Command c) {
    switch (c) {
        case Command::left:
            return "left";
        case Command::straight:
            return "straight";
        case Command::right:
            return "right";
    }
    return "?";
}

Command parse_command(std::string_view s) {
    for (const Command c : {Command::left, Command::straight, Command::right}) {
        if (to_string(c) == s) {
            return c;
        }
    }
    throw ConfigError("unknown command: " + std::string(s));
}

SteerBins::SteerBins(int n_bins, double range) : n_bins_(n_bins), range_(range) {
    if (n_bins < 1 || !(range > 0.0)) {
        throw ConfigError("SteerBins requires n_bins >= 1 and range > 0");
    }
    const double w = width();
    for (int k = 0; k <= n_bins; ++k) {
        boundaries_.push_back(-range + k * w);
    }
    boundaries_.back() = range;
    representatives_.resize(n_bins);
    for (int k = 0; k < n_bins; ++k) {
        representatives_[k] = -range + (k + 0.5) * w;
    }
    for (int k = 0; k < n_bins / 2; ++k) {
        representatives_[n_bins - 1 - k] = -representatives_[k];
    }
    if (n_bins % 2 == 1) {
        representatives_[n_bins / 2] = 0.0;
    }
}

int SteerBins::discretize(double v) const {
    v = std::clamp(v, -range_, range_);
    for (int k = 0; k < n_bins_; ++k) {
        if (v <= boundaries_[k + 1]) {
            return k;
        }
    }
    return n_bins_ - 1;
}

double SteerBins::reconstruct(std::span<const double> probs) const {
    if (static_cast<int>(probs.size()) != n_bins_) {
        throw DimensionError("reconstruct: expected " + std::to_string(n_bins_) + " probabilities");
    }
    double sum = 0.0;
    for (const double p : probs) {
        if (!(p >= 0.0)) {
            throw InvalidInput("reconstruct: probabilities must be nonnegative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw InvalidInput("reconstruct: probabilities must sum to 1");
    }
    double v = 0.0;
    for (int k = 0; k < n_bins_ / 2; ++k) {
        v += representatives_[n_bins_ - 1 - k] * (probs[n_bins_ - 1 - k] - probs[k]);
    }
    return v;
}

EvalReport tabulate(std::span<const Prediction> predictions, const SteerBins& bins) {
    EvalReport r;
    const int nb = bins.n_bins();
    r.n_bins = nb;
    for (auto& m : r.confusion) {
        m = Eigen::MatrixXi::Zero(nb, nb);
    }
    std::array<long, kCommandCount> correct{};
    long swaps = 0;
    double abs_err = 0.0;
    for (const Prediction& p : predictions) {
        if (static_cast<int>(p.probs.size()) != nb) {
            throw DimensionError("tabulate: prediction has " + std::to_string(p.probs.size()) + " probabilities");
        }
        if (p.true_class < 0 || p.true_class >= nb) {
            throw InvalidInput("tabulate: true class out of range");
        }
        const int predicted = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
        const int c = static_cast<int>(p.command);
        r.confusion[c](p.true_class, predicted) += 1;
        r.count[c] += 1;
        correct[c] += predicted == p.true_class ? 1 : 0;
        if ((p.true_class == 0 && predicted == nb - 1) || (p.true_class == nb - 1 && predicted == 0)) {
            ++swaps;
        }
        abs_err += std::abs(bins.reconstruct(p.probs) - p.true_velocity);
    }
    long all_correct = 0;
    for (int c = 0; c < kCommandCount; ++c) {
        r.accuracy[c] = r.count[c] > 0 ? static_cast<double>(correct[c]) / r.count[c] : 0.0;
        r.total += r.count[c];
        all_correct += correct[c];
    }
    if (r.total > 0) {
        r.overall_accuracy = static_cast<double>(all_correct) / r.total;
        r.dangerous_swap_rate = static_cast<double>(swaps) / r.total;
        r.mean_abs_velocity_error = abs_err / r.total;
    }
    return r;
}

void write_report_tsv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write report " + path.string());
    }
    out << "metric\tcommand\tvalue\n";
    out << "accuracy\tall\t" << report.overall_accuracy << "\n";
    out << "samples\tall\t" << report.total << "\n";
    out << "dangerous_swap_rate\tall\t" << report.dangerous_swap_rate << "\n";
    out << "mean_abs_velocity_error\tall\t" << report.mean_abs_velocity_error << "\n";
    for (int c = 0; c < kCommandCount; ++c) {
        const auto name = to_string(static_cast<Command>(c));
        out << "accuracy\t" << name << "\t" << report.accuracy[c] << "\n";
        out << "samples\t" << name << "\t" << report.count[c] << "\n";
        const Eigen::MatrixXi& m = report.confusion[c];
        for (int t = 0; t < m.rows(); ++t) {
            for (int p = 0; p < m.cols(); ++p) {
                out << "confusion_" << t << "_" << p << "\t" << name << "\t" << m(t, p) << "\n";
            }
        }
    }
    if (!out) {
        throw IoError("failed writing report " + path.string());
    }
}

}  // namespace sim2real

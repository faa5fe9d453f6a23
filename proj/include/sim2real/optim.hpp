#pragma once

#include <cmath>

#include "sim2real/tensor.hpp"

namespace sim2real {

struct AdamSettings {
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction; one instance per parameter vector.
template <typename Scalar>
class Adam {
public:
    Adam() = default;
    Adam(std::int64_t size, AdamSettings settings)
        : settings_(settings), m_(Vector<Scalar>::Zero(size)), v_(Vector<Scalar>::Zero(size)) {}

    [[nodiscard]] long steps() const { return t_; }
    [[nodiscard]] const AdamSettings& settings() const { return settings_; }

    template <typename DP, typename DG>
    void step(Eigen::MatrixBase<DP>& params, const Eigen::MatrixBase<DG>& grad) {
        if (params.size() != m_.size() || grad.size() != m_.size()) {
            throw DimensionError("Adam: parameter/gradient size does not match optimizer state");
        }
        ++t_;
        const auto b1 = static_cast<Scalar>(settings_.beta1);
        const auto b2 = static_cast<Scalar>(settings_.beta2);
        m_ = b1 * m_ + (Scalar(1) - b1) * grad;
        v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
        const auto step = static_cast<Scalar>(settings_.learning_rate * std::sqrt(c2) / c1);
        const auto eps = static_cast<Scalar>(settings_.epsilon * std::sqrt(c2));
        params -= (step * m_.array() / (v_.array().sqrt() + eps)).matrix();
    }

private:
    AdamSettings settings_;
    Vector<Scalar> m_;
    Vector<Scalar> v_;
    long t_ = 0;
};

}  // namespace sim2real

#pragma once

// Divergences between finite distributions and a brute-force checker for the
// target-error bound E_T ≤ 4·sqrt(χ²) + E_F under a shared conditional P(y|x).

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "sim2real/tensor.hpp"

namespace sim2real {

class DiscreteDist {
public:
    DiscreteDist() = default;
    explicit DiscreteDist(Eigen::VectorXd probs);

    [[nodiscard]] const Eigen::VectorXd& probs() const { return probs_; }
    [[nodiscard]] Eigen::Index size() const { return probs_.size(); }
    double operator[](Eigen::Index i) const { return probs_[i]; }

    // Elementwise average of two distributions on the same space.
    static DiscreteDist mixture(const DiscreteDist& p, const DiscreteDist& q);

private:
    Eigen::VectorXd probs_;
};

// One error rate per joint outcome, every entry in [0, 1].
class ErrorField {
public:
    ErrorField() = default;
    explicit ErrorField(Eigen::VectorXd values);

    [[nodiscard]] const Eigen::VectorXd& values() const { return values_; }
    [[nodiscard]] Eigen::Index size() const { return values_.size(); }

private:
    Eigen::VectorXd values_;
};

double total_variation(const DiscreteDist& p, const DiscreteDist& q);
// Σ (p−q)²/q; throws DomainError when p puts mass where q has none.
double pearson(const DiscreteDist& p, const DiscreteDist& q);
// ¼·pearson(p, (p+q)/2)
double chi_squared(const DiscreteDist& p, const DiscreteDist& q);
double average_error(const DiscreteDist& joint, const ErrorField& e);

// Joint over X×Y laid out x-major: index x·|Y| + y.
DiscreteDist joint_distribution(const DiscreteDist& marginal, const Eigen::MatrixXd& conditional);

struct Inequality {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;  // rhs − lhs
    bool holds = false;  // slack ≥ −tolerance
};

struct BoundReport {
    double e_target = 0.0;
    double e_transferred = 0.0;
    double tv = 0.0;             // TV(P_T, P_F)
    double tv_to_mixture = 0.0;  // TV(P_T, (P_T+P_F)/2)
    double pearson_to_mixture = 0.0;
    double chi2 = 0.0;
    double error_gap_l1 = 0.0;   // Σ e·|P_T(x,y) − P_F(x,y)|
    double mixture_identity_gap = 0.0;  // |2·TV(P_T, mix) − TV(P_T, P_F)|
    Inequality prop1;    // TV(P_T, mix)² ≤ ¼·pearson(P_T, mix)
    Inequality prop2;    // TV(P_T, P_F) ≤ 2·sqrt(χ²)
    Inequality theorem;  // E_T ≤ 4·sqrt(χ²) + E_F

    [[nodiscard]] bool all_hold() const { return prop1.holds && prop2.holds && theorem.holds; }
};

inline constexpr double kBoundTolerance = 1e-12;

// `conditional` is |X|×|Y| with rows summing to one, used for both domains.
BoundReport verify_bound_chain(const DiscreteDist& p_target_x, const DiscreteDist& p_transferred_x,
                               const Eigen::MatrixXd& conditional, const ErrorField& e,
                               double tolerance = kBoundTolerance);

struct BoundInstance {
    DiscreteDist p_target_x;
    DiscreteDist p_transferred_x;
    Eigen::MatrixXd conditional;
    ErrorField error;
};

// Random instance with |X| and |Y| drawn from [2, max_outcomes]; some
// instances get sparse marginals so boundary cases are exercised.
BoundInstance random_bound_instance(std::uint64_t seed, int max_outcomes = 16);

struct HistogramSpec {
    int bins = 16;
    double lo = -1.0;
    double hi = 1.0;
    int random_projections = 4;
    std::uint64_t projection_seed = 0x5eedULL;
};

// Per-image features: channel means followed by fixed seeded random
// projections scaled by 1/sqrt(h·w·c). Rows are images.
Eigen::MatrixXd projection_features(const Tensor<float>& images, const HistogramSpec& spec = {});

// Histograms each feature column over [lo, hi] (out-of-range values go to the
// edge bins) and returns the mean χ² across features.
double empirical_chi_squared(const Tensor<float>& samples_t, const Tensor<float>& samples_f,
                             const HistogramSpec& spec = {});

}  // namespace sim2real

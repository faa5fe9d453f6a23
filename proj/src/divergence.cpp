#include "sim2real/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace sim2real {
namespace {

void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) {
        throw DimensionError(std::string(what) + ": sizes " + std::to_string(a) + " and " + std::to_string(b));
    }
}

Inequality compare(double lhs, double rhs, double tolerance) {
    return {lhs, rhs, rhs - lhs, rhs - lhs >= -tolerance};
}

Eigen::VectorXd normalized_draws(std::mt19937_64& rng, int k, double zero_prob) {
    std::exponential_distribution<double> expo(1.0);
    std::bernoulli_distribution zero(zero_prob);
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) {
        v[i] = zero(rng) ? 0.0 : expo(rng);
    }
    if (v.sum() <= 0.0) {
        v[std::uniform_int_distribution<int>(0, k - 1)(rng)] = 1.0;
    }
    return v / v.sum();
}

Eigen::VectorXd histogram(const Eigen::VectorXd& values, const HistogramSpec& spec) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(spec.bins);
    const double width = (spec.hi - spec.lo) / spec.bins;
    for (const double v : values) {
        const int b = std::clamp(static_cast<int>(std::floor((v - spec.lo) / width)), 0, spec.bins - 1);
        counts[b] += 1.0;
    }
    return counts / static_cast<double>(values.size());
}

}  // namespace

DiscreteDist::DiscreteDist(Eigen::VectorXd probs) : probs_(std::move(probs)) {
    if (probs_.size() == 0) {
        throw InvalidInput("DiscreteDist: empty support");
    }
    if (!probs_.allFinite() || (probs_.array() < 0.0).any()) {
        throw InvalidInput("DiscreteDist: entries must be finite and nonnegative");
    }
    if (std::abs(probs_.sum() - 1.0) > 1e-12) {
        throw InvalidInput("DiscreteDist: entries must sum to 1");
    }
}

DiscreteDist DiscreteDist::mixture(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_size(p.size(), q.size(), "mixture");
    DiscreteDist m;
    m.probs_ = 0.5 * (p.probs_ + q.probs_);
    return m;
}

ErrorField::ErrorField(Eigen::VectorXd values) : values_(std::move(values)) {
    if ((values_.array() < 0.0).any() || (values_.array() > 1.0).any() || !values_.allFinite()) {
        throw InvalidInput("ErrorField: entries must lie in [0, 1]");
    }
}

double total_variation(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_size(p.size(), q.size(), "total_variation");
    return 0.5 * (p.probs() - q.probs()).cwiseAbs().sum();
}

double pearson(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_size(p.size(), q.size(), "pearson");
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (q[i] > 0.0) {
            const double d = p[i] - q[i];
            total += d * d / q[i];
        } else if (p[i] > 0.0) {
            throw DomainError("pearson: p is not dominated by q at outcome " + std::to_string(i));
        }
    }
    return total;
}

double chi_squared(const DiscreteDist& p, const DiscreteDist& q) {
    require_same_size(p.size(), q.size(), "chi_squared");
    return 0.25 * pearson(p, DiscreteDist::mixture(p, q));
}

double average_error(const DiscreteDist& joint, const ErrorField& e) {
    require_same_size(joint.size(), e.size(), "average_error");
    return joint.probs().dot(e.values());
}

DiscreteDist joint_distribution(const DiscreteDist& marginal, const Eigen::MatrixXd& conditional) {
    if (conditional.rows() != marginal.size()) {
        throw DimensionError("joint_distribution: conditional has " + std::to_string(conditional.rows()) +
                             " rows for " + std::to_string(marginal.size()) + " outcomes");
    }
    for (Eigen::Index x = 0; x < conditional.rows(); ++x) {
        if ((conditional.row(x).array() < 0.0).any() || std::abs(conditional.row(x).sum() - 1.0) > 1e-12) {
            throw InvalidInput("joint_distribution: conditional row " + std::to_string(x) + " is not a distribution");
        }
    }
    const Eigen::Index ny = conditional.cols();
    Eigen::VectorXd joint(marginal.size() * ny);
    for (Eigen::Index x = 0; x < marginal.size(); ++x) {
        joint.segment(x * ny, ny) = marginal[x] * conditional.row(x).transpose();
    }
    // Rounding in the products can move the sum by a few ulps; renormalize.
    return DiscreteDist(joint / joint.sum());
}

BoundReport verify_bound_chain(const DiscreteDist& p_target_x, const DiscreteDist& p_transferred_x,
                               const Eigen::MatrixXd& conditional, const ErrorField& e, double tolerance) {
    require_same_size(p_target_x.size(), p_transferred_x.size(), "verify_bound_chain");
    const DiscreteDist joint_t = joint_distribution(p_target_x, conditional);
    const DiscreteDist joint_f = joint_distribution(p_transferred_x, conditional);
    require_same_size(joint_t.size(), e.size(), "verify_bound_chain error field");

    const DiscreteDist mix = DiscreteDist::mixture(p_target_x, p_transferred_x);
    BoundReport r;
    r.e_target = average_error(joint_t, e);
    r.e_transferred = average_error(joint_f, e);
    r.tv = total_variation(p_target_x, p_transferred_x);
    r.tv_to_mixture = total_variation(p_target_x, mix);
    r.pearson_to_mixture = pearson(p_target_x, mix);
    r.chi2 = chi_squared(p_target_x, p_transferred_x);
    r.error_gap_l1 = e.values().dot((joint_t.probs() - joint_f.probs()).cwiseAbs());
    r.mixture_identity_gap = std::abs(2.0 * r.tv_to_mixture - r.tv);

    r.prop1 = compare(r.tv_to_mixture * r.tv_to_mixture, 0.25 * r.pearson_to_mixture, tolerance);
    r.prop2 = compare(r.tv, 2.0 * std::sqrt(r.chi2), tolerance);
    r.theorem = compare(r.e_target, 4.0 * std::sqrt(r.chi2) + r.e_transferred, tolerance);
    return r;
}

BoundInstance random_bound_instance(std::uint64_t seed, int max_outcomes) {
    if (max_outcomes < 2) {
        throw InvalidInput("random_bound_instance: max_outcomes must be at least 2");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(2, max_outcomes);
    const int nx = size(rng);
    const int ny = size(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double sparsity = unit(rng) < 0.3 ? 0.3 : 0.0;

    BoundInstance inst;
    inst.p_target_x = DiscreteDist(normalized_draws(rng, nx, sparsity));
    inst.p_transferred_x = unit(rng) < 0.05 ? inst.p_target_x : DiscreteDist(normalized_draws(rng, nx, sparsity));
    inst.conditional.resize(nx, ny);
    for (int x = 0; x < nx; ++x) {
        inst.conditional.row(x) = normalized_draws(rng, ny, sparsity).transpose();
    }
    Eigen::VectorXd e(nx * ny);
    const bool binary = unit(rng) < 0.3;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        e[i] = binary ? std::round(unit(rng)) : unit(rng);
    }
    inst.error = ErrorField(e);
    return inst;
}

Eigen::MatrixXd projection_features(const Tensor<float>& images, const HistogramSpec& spec) {
    const Shape& s = images.shape();
    if (s.n <= 0) {
        throw InvalidInput("projection_features: empty batch");
    }
    const std::int64_t per_image = static_cast<std::int64_t>(s.h) * s.w * s.c;
    std::mt19937_64 rng(spec.projection_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd directions(per_image, spec.random_projections);
    for (Eigen::Index j = 0; j < directions.cols(); ++j) {
        for (Eigen::Index i = 0; i < directions.rows(); ++i) {
            directions(i, j) = normal(rng);
        }
    }
    directions /= std::sqrt(static_cast<double>(per_image));

    const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> flat(
        images.data().data(), s.n, per_image);
    const Eigen::MatrixXd x = flat.cast<double>();

    Eigen::MatrixXd features(s.n, s.c + spec.random_projections);
    for (int n = 0; n < s.n; ++n) {
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> pixels(
            x.row(n).eval().data(), s.h * s.w, s.c);
        features.block(n, 0, 1, s.c) = pixels.colwise().mean();
    }
    features.rightCols(spec.random_projections) = x * directions;
    return features;
}

double empirical_chi_squared(const Tensor<float>& samples_t, const Tensor<float>& samples_f,
                             const HistogramSpec& spec) {
    if (samples_t.shape().n <= 0 || samples_f.shape().n <= 0) {
        throw InvalidInput("empirical_chi_squared: empty batch");
    }
    if (samples_t.shape().h != samples_f.shape().h || samples_t.shape().w != samples_f.shape().w ||
        samples_t.shape().c != samples_f.shape().c) {
        throw DimensionError("empirical_chi_squared: image shapes differ");
    }
    if (spec.bins < 1 || !(spec.hi > spec.lo)) {
        throw InvalidInput("empirical_chi_squared: invalid histogram spec");
    }
    const Eigen::MatrixXd ft = projection_features(samples_t, spec);
    const Eigen::MatrixXd ff = projection_features(samples_f, spec);
    double total = 0.0;
    for (Eigen::Index j = 0; j < ft.cols(); ++j) {
        const DiscreteDist ht(histogram(ft.col(j), spec));
        const DiscreteDist hf(histogram(ff.col(j), spec));
        total += chi_squared(ht, hf);
    }
    return total / static_cast<double>(ft.cols());
}

}  // namespace sim2real

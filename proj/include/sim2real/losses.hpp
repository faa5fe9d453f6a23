#pragma once

// Training losses: Fisher-IPM adversarial terms with the cycle penalty,
// gram-matrix style loss over discriminator features, and soft-label cross
// entropy for the steering classifier. Each loss has a matching gradient
// helper used by the trainer.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "sim2real/tensor.hpp"

namespace sim2real {

inline constexpr int kSoftLabelSize = 5;

// Lagrange multiplier and quadratic penalty weight of the constrained critic.
struct FisherState {
    double lambda = 0.0;
    double rho = 1e-6;

    void validate() const {
        if (!(rho > 0.0) || !std::isfinite(rho) || !std::isfinite(lambda)) {
            throw InvalidInput("FisherState requires finite lambda and rho > 0");
        }
    }
};

template <typename Derived>
void require_scores(const Eigen::MatrixBase<Derived>& s, const char* what) {
    if (s.size() == 0) {
        throw InvalidInput(std::string(what) + ": empty score batch");
    }
}

// Φ = E[D(real)] − E[D(fake)]; patch scores all enter the expectation.
template <typename DR, typename DF>
typename DR::Scalar fisher_phi(const Eigen::MatrixBase<DR>& d_real, const Eigen::MatrixBase<DF>& d_fake) {
    require_scores(d_real, "fisher_phi");
    require_scores(d_fake, "fisher_phi");
    return d_real.mean() - d_fake.mean();
}

// Ω = ½(E[D(real)²] + E[D(fake)²])
template <typename DR, typename DF>
typename DR::Scalar fisher_omega(const Eigen::MatrixBase<DR>& d_real, const Eigen::MatrixBase<DF>& d_fake) {
    using Scalar = typename DR::Scalar;
    require_scores(d_real, "fisher_omega");
    require_scores(d_fake, "fisher_omega");
    return Scalar(0.5) * (d_real.squaredNorm() / static_cast<Scalar>(d_real.size()) +
                          d_fake.squaredNorm() / static_cast<Scalar>(d_fake.size()));
}

// Φ + λ(1 − Ω) − (ρ/2)(Ω − 1)² + cycle
template <typename Scalar>
Scalar adversarial_loss(Scalar phi, Scalar omega, const FisherState& state, Scalar cycle_l1) {
    state.validate();
    const Scalar lambda = static_cast<Scalar>(state.lambda);
    const Scalar rho = static_cast<Scalar>(state.rho);
    return phi + lambda * (Scalar(1) - omega) - rho / Scalar(2) * (omega - Scalar(1)) * (omega - Scalar(1)) + cycle_l1;
}

// ∂L/∂Ω of adversarial_loss (∂L/∂Φ and ∂L/∂cycle are 1).
template <typename Scalar>
Scalar adversarial_domega(Scalar omega, const FisherState& state) {
    return static_cast<Scalar>(-state.lambda - state.rho * (static_cast<double>(omega) - 1.0));
}

// Gradients of `weight_phi·Φ + weight_omega·Ω` with respect to each score.
template <typename Scalar>
struct ScoreGradients {
    Vector<Scalar> real;
    Vector<Scalar> fake;
};

template <typename DR, typename DF>
ScoreGradients<typename DR::Scalar> fisher_score_gradients(const Eigen::MatrixBase<DR>& d_real,
                                                           const Eigen::MatrixBase<DF>& d_fake,
                                                           typename DR::Scalar weight_phi,
                                                           typename DR::Scalar weight_omega) {
    using Scalar = typename DR::Scalar;
    const Scalar nr = static_cast<Scalar>(d_real.size());
    const Scalar nf = static_cast<Scalar>(d_fake.size());
    ScoreGradients<Scalar> g;
    g.real = (Vector<Scalar>::Constant(d_real.size(), weight_phi / nr) + (weight_omega / nr) * d_real).eval();
    g.fake = (Vector<Scalar>::Constant(d_fake.size(), -weight_phi / nf) + (weight_omega / nf) * d_fake).eval();
    return g;
}

// Batch mean of per-image L1 norms.
template <typename Scalar>
Scalar cycle_l1(const Tensor<Scalar>& x, const Tensor<Scalar>& reconstructed) {
    require_same_shape(x, reconstructed, "cycle_l1");
    if (x.shape().n <= 0) {
        throw InvalidInput("cycle_l1: empty batch");
    }
    return (reconstructed.data() - x.data()).cwiseAbs().sum() / static_cast<Scalar>(x.shape().n);
}

// d cycle_l1 / d reconstructed (subgradient 0 at ties).
template <typename Scalar>
Tensor<Scalar> cycle_l1_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& reconstructed) {
    require_same_shape(x, reconstructed, "cycle_l1_grad");
    Tensor<Scalar> g(x.shape());
    const Scalar inv = Scalar(1) / static_cast<Scalar>(x.shape().n);
    g.data() = (reconstructed.data() - x.data()).unaryExpr([inv](Scalar d) {
        return d > Scalar(0) ? inv : (d < Scalar(0) ? -inv : Scalar(0));
    });
    return g;
}

template <typename Scalar>
struct GramMatrix {
    RowMatrix<Scalar> values;
    int layer_index = 0;
};

// C×C inner products of channel activations over batch and spatial positions.
template <typename Scalar>
GramMatrix<Scalar> gram(const Tensor<Scalar>& features, int layer_index = 0) {
    if (features.shape().c < 1) {
        throw InvalidInput("gram: feature map has no channels");
    }
    const auto f = features.matrix();
    GramMatrix<Scalar> g;
    g.values = RowMatrix<Scalar>::Zero(f.cols(), f.cols());
    g.values.template selfadjointView<Eigen::Lower>().rankUpdate(f.transpose());
    g.values.template triangularView<Eigen::StrictlyUpper>() = g.values.transpose();
    g.layer_index = layer_index;
    return g;
}

namespace detail {
template <typename Scalar>
void require_matching_layers(std::span<const Tensor<Scalar>> a, std::span<const Tensor<Scalar>> b) {
    if (a.size() != b.size()) {
        throw DimensionError("style_loss: layer count mismatch");
    }
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].shape().c != b[l].shape().c) {
            throw DimensionError("style_loss: channel mismatch at layer " + std::to_string(l));
        }
        if (a[l].shape().positions() != b[l].shape().positions()) {
            throw DimensionError("style_loss: batch·area mismatch at layer " + std::to_string(l));
        }
    }
}

template <typename Scalar>
Scalar style_weight(const Tensor<Scalar>& f) {
    const Scalar n = static_cast<Scalar>(f.shape().positions());
    const Scalar c = static_cast<Scalar>(f.shape().c);
    return Scalar(1) / (n * n * c * c);
}
}  // namespace detail

// Σ_l 1/((n^l)²(c^l)²) Σ_ij (A^l_ij − B^l_ij)², n = batch·area, c = channels.
template <typename Scalar>
Scalar style_loss(std::span<const Tensor<Scalar>> real_feats, std::span<const Tensor<Scalar>> fake_feats) {
    detail::require_matching_layers(real_feats, fake_feats);
    Scalar total = 0;
    for (std::size_t l = 0; l < real_feats.size(); ++l) {
        const auto a = gram(real_feats[l]).values;
        const auto b = gram(fake_feats[l]).values;
        total += detail::style_weight(real_feats[l]) * (a - b).squaredNorm();
    }
    return total;
}

// d style_loss / d fake_feats[l] = −4k·F_fake(A − B); the real side has the opposite sign.
template <typename Scalar>
std::vector<Tensor<Scalar>> style_loss_grad(std::span<const Tensor<Scalar>> real_feats,
                                            std::span<const Tensor<Scalar>> fake_feats, bool wrt_fake = true) {
    detail::require_matching_layers(real_feats, fake_feats);
    std::vector<Tensor<Scalar>> grads;
    for (std::size_t l = 0; l < real_feats.size(); ++l) {
        const RowMatrix<Scalar> diff = gram(real_feats[l]).values - gram(fake_feats[l]).values;
        const Scalar k = detail::style_weight(real_feats[l]);
        const Tensor<Scalar>& own = wrt_fake ? fake_feats[l] : real_feats[l];
        Tensor<Scalar> g(own.shape());
        g.matrix().noalias() = (wrt_fake ? Scalar(-4) : Scalar(4)) * k * own.matrix() * diff;
        grads.push_back(std::move(g));
    }
    return grads;
}

// Length-5 probability vector over steering intervals.
struct SoftLabel {
    Eigen::Matrix<double, kSoftLabelSize, 1> probs = Eigen::Matrix<double, kSoftLabelSize, 1>::Zero();

    void validate() const {
        if ((probs.array() < 0.0).any() || std::abs(probs.sum() - 1.0) > 1e-9) {
            throw InvalidInput("SoftLabel must be nonnegative and sum to 1");
        }
    }
};

// Center class keeps 1 − ε; each existing neighbor gets ε/2; a missing
// neighbor's share stays on the center.
SoftLabel soften(int hard_class, double epsilon = 0.1);

// Mean over rows of −Σ target·log(predicted).
template <typename DP, typename DT>
typename DP::Scalar task_loss(const Eigen::MatrixBase<DP>& predicted, const Eigen::MatrixBase<DT>& target) {
    using Scalar = typename DP::Scalar;
    if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
        throw DimensionError("task_loss: shape mismatch");
    }
    if (predicted.rows() == 0) {
        throw InvalidInput("task_loss: empty batch");
    }
    const Scalar tol = std::is_same_v<Scalar, float> ? Scalar(1e-4) : Scalar(1e-6);
    for (Eigen::Index r = 0; r < predicted.rows(); ++r) {
        if (std::abs(predicted.row(r).sum() - Scalar(1)) > tol || std::abs(target.row(r).sum() - Scalar(1)) > tol) {
            throw InvalidInput("task_loss: row " + std::to_string(r) + " is not normalized");
        }
        if ((predicted.row(r).array() <= Scalar(0)).any()) {
            throw InvalidInput("task_loss: predictions must be strictly positive");
        }
    }
    return -(target.array() * predicted.array().log()).sum() / static_cast<Scalar>(predicted.rows());
}

// d task_loss / d logits for softmax outputs `probs` (rows are the selected branch).
template <typename Scalar>
RowMatrix<Scalar> task_loss_logit_grad(const RowMatrix<Scalar>& probs, const RowMatrix<Scalar>& target) {
    return (probs - target) / static_cast<Scalar>(probs.rows());
}

}  // namespace sim2real

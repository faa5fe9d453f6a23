#include <doctest.h>

#include <random>
#include <vector>

#include "oracles.hpp"
#include "sim2real/losses.hpp"

using namespace sim2real;

namespace {

Eigen::VectorXd to_eigen(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

std::vector<double> random_scores(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> d(0.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

RowMatrix<double> random_distribution_rows(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    RowMatrix<double> m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
        m.row(r) /= m.row(r).sum();
    }
    return m;
}

}  // namespace

TEST_CASE("fisher_phi examples and oracle") {
    Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 0.7);
    CHECK(fisher_phi(c, c) == doctest::Approx(0.0));
    CHECK(fisher_phi(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)) == 1.0);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = random_scores(rng, 1 + trial % 9);
        const auto f = random_scores(rng, 1 + trial % 7);
        const double expected = oracle::mean_difference(r, f);
        CHECK(oracle::relative_error(fisher_phi(to_eigen(r), to_eigen(f)), expected, 1e-12) <= 1e-10);
    }
    CHECK_THROWS_AS(fisher_phi(Eigen::VectorXd(), Eigen::VectorXd::Ones(2)), InvalidInput);
}

TEST_CASE("fisher_omega examples and oracle") {
    CHECK(fisher_omega(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(3)) == 1.0);
    CHECK(fisher_omega(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(3)) == 0.0);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = random_scores(rng, 1 + trial % 5);
        const auto f = random_scores(rng, 2 + trial % 6);
        const double expected = oracle::half_second_moment(r, f);
        CHECK(oracle::relative_error(fisher_omega(to_eigen(r), to_eigen(f)), expected, 1e-12) <= 1e-10);
    }
    CHECK_THROWS_AS(fisher_omega(Eigen::VectorXd::Ones(1), Eigen::VectorXd()), InvalidInput);
}

TEST_CASE("adversarial loss terms") {
    CHECK(adversarial_loss(0.0, 1.0, FisherState{3.7, 0.4}, 0.0) == 0.0);
    CHECK(adversarial_loss(1.0, 0.0, FisherState{0.5, 2.0}, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
    const double base = adversarial_loss(0.3, 0.8, FisherState{0.2, 1.5}, 0.0);
    CHECK(adversarial_loss(0.3, 0.8, FisherState{0.2, 1.5}, 2.25) - base == doctest::Approx(2.25).epsilon(1e-15));
    CHECK_THROWS_AS(adversarial_loss(0.0, 1.0, FisherState{0.0, 0.0}, 0.0), InvalidInput);
    CHECK_THROWS_AS(adversarial_loss(0.0, 1.0, FisherState{0.0, -1.0}, 0.0), InvalidInput);
}

TEST_CASE("adversarial loss is linear in lambda with slope 1 - omega") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double phi = u(rng);
        const double omega = u(rng) + 2.0;
        const double l1 = u(rng);
        const double l2 = l1 + 0.5;
        const double slope = (adversarial_loss(phi, omega, FisherState{l2, 0.3}, 0.1) -
                              adversarial_loss(phi, omega, FisherState{l1, 0.3}, 0.1)) / 0.5;
        CHECK(slope == doctest::Approx(1.0 - omega).epsilon(1e-12));
    }
}

TEST_CASE("adversarial partial derivative in omega") {
    const FisherState s{0.7, 0.9};
    for (double omega : {0.2, 1.0, 1.6}) {
        double o = omega;
        std::function<double()> f = [&] { return adversarial_loss(0.4, o, s, 0.0); };
        double* p = &o;
        const double numeric = oracle::central_difference(f, p, 0, 1e-5);
        CHECK(adversarial_domega(omega, s) == doctest::Approx(numeric).epsilon(1e-8));
    }
}

TEST_CASE("fisher score gradients match finite differences") {
    std::mt19937_64 rng(4);
    Eigen::VectorXd real = to_eigen(random_scores(rng, 5));
    Eigen::VectorXd fake = to_eigen(random_scores(rng, 7));
    const double wp = 1.3;
    const double wo = -0.6;
    std::function<double()> f = [&] { return wp * fisher_phi(real, fake) + wo * fisher_omega(real, fake); };
    const auto g = fisher_score_gradients(real, fake, wp, wo);
    for (int i = 0; i < real.size(); ++i) {
        CHECK(oracle::relative_error(g.real[i], oracle::central_difference(f, real, i, 1e-5)) <= 1e-6);
    }
    for (int i = 0; i < fake.size(); ++i) {
        CHECK(oracle::relative_error(g.fake[i], oracle::central_difference(f, fake, i, 1e-5)) <= 1e-6);
    }
}

TEST_CASE("cycle_l1 examples, oracle and gradient") {
    const Shape s{2, 3, 4, 3};
    const auto zero = Tensor<double>(s);
    const auto one = Tensor<double>::constant(s, 1.0);
    CHECK(cycle_l1(zero, zero) == 0.0);
    CHECK(cycle_l1(zero, one) == doctest::Approx(3.0 * 3 * 4));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const Shape t{1 + trial % 3, 2, 1 + trial % 4, 3};
        const auto x = oracle::random_tensor(t, rng);
        const auto y = oracle::random_tensor(t, rng);
        CHECK(oracle::relative_error(cycle_l1(x, y), oracle::cycle_l1(x, y), 1e-12) <= 1e-10);
    }

    auto x = oracle::random_tensor(s, rng);
    auto y = oracle::random_tensor(s, rng);
    std::vector<Tensor<double>> items{x.slice(1), x.slice(0)};
    std::vector<Tensor<double>> recon{y.slice(1), y.slice(0)};
    CHECK(cycle_l1(stack_batch(items), stack_batch(recon)) == doctest::Approx(cycle_l1(x, y)).epsilon(1e-14));

    const auto g = cycle_l1_grad(x, y);
    std::function<double()> f = [&] { return cycle_l1(x, y); };
    for (long i = 0; i < y.size(); i += 7) {
        CHECK(oracle::relative_error(g.data()[i], oracle::central_difference(f, y.data(), i, 1e-6)) <= 1e-2);
    }
    CHECK_THROWS_AS(cycle_l1(x, Tensor<double>(Shape{2, 3, 4, 2})), DimensionError);
}

TEST_CASE("gram matrix") {
    Tensor<double> f(Shape{1, 1, 3, 3});
    f(0, 0, 0, 0) = 2.0;
    f(0, 0, 1, 1) = -1.0;
    f(0, 0, 2, 2) = 0.5;
    const auto g = gram(f).values;
    CHECK(g.isDiagonal());
    CHECK(g(0, 0) == 4.0);

    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = oracle::random_tensor(Shape{2, 2, 2, 3}, rng);
        const auto got = gram(t, 2);
        CHECK(got.layer_index == 2);
        const auto want = oracle::gram(t);
        double worst = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) worst = std::max(worst, oracle::relative_error(got.values(a, b), want[a][b], 1e-12));
        CHECK(worst <= 1e-10);
        CHECK(got.values.isApprox(got.values.transpose(), 0.0));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(got.values);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
    }
    const auto t = oracle::random_tensor(Shape{1, 3, 3, 4}, rng);
    CHECK(gram(t).values == gram(Tensor<double>(t)).values);
}

TEST_CASE("style loss") {
    std::mt19937_64 rng(7);
    std::vector<Tensor<double>> a{oracle::random_tensor(Shape{1, 2, 2, 2}, rng)};
    std::vector<Tensor<double>> b{oracle::random_tensor(Shape{1, 2, 2, 2}, rng)};
    CHECK(style_loss<double>(a, a) == 0.0);
    CHECK(style_loss<double>(a, b) == style_loss<double>(b, a));
    CHECK(oracle::relative_error(style_loss<double>(a, b), oracle::style_loss(a, b), 1e-12) <= 1e-10);

    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Tensor<double>> real;
        std::vector<Tensor<double>> fake;
        for (int l = 0; l < 3; ++l) {
            const Shape s{1 + trial % 2, 2 + l, 2, 1 + (trial + l) % 4};
            real.push_back(oracle::random_tensor(s, rng));
            fake.push_back(oracle::random_tensor(s, rng));
        }
        const double got = style_loss<double>(real, fake);
        CHECK(got >= 0.0);
        CHECK(oracle::relative_error(got, oracle::style_loss(real, fake), 1e-12) <= 1e-10);
    }

    std::vector<Tensor<double>> wrong{oracle::random_tensor(Shape{1, 2, 2, 3}, rng)};
    CHECK_THROWS_AS(style_loss<double>(a, wrong), DimensionError);
    CHECK_THROWS_AS(style_loss<double>(a, std::vector<Tensor<double>>{}), DimensionError);
}

TEST_CASE("style loss gradients match finite differences") {
    std::mt19937_64 rng(8);
    std::vector<Tensor<double>> real{oracle::random_tensor(Shape{2, 2, 3, 3}, rng), oracle::random_tensor(Shape{2, 1, 2, 4}, rng)};
    std::vector<Tensor<double>> fake{oracle::random_tensor(Shape{2, 2, 3, 3}, rng), oracle::random_tensor(Shape{2, 1, 2, 4}, rng)};
    std::function<double()> f = [&] { return style_loss<double>(real, fake); };
    for (const bool wrt_fake : {true, false}) {
        const auto grads = style_loss_grad<double>(real, fake, wrt_fake);
        auto& own = wrt_fake ? fake : real;
        for (std::size_t l = 0; l < own.size(); ++l) {
            for (long i = 0; i < own[l].size(); ++i) {
                const double numeric = oracle::central_difference(f, own[l].data(), i, 1e-5);
                CHECK(oracle::relative_error(grads[l].data()[i], numeric, 1e-9) <= 1e-4);
            }
        }
    }
}

TEST_CASE("soften") {
    const auto c2 = soften(2, 0.1).probs;
    CHECK(c2[0] == 0.0);
    CHECK(c2[1] == doctest::Approx(0.05));
    CHECK(c2[2] == doctest::Approx(0.9));
    CHECK(c2[3] == doctest::Approx(0.05));
    CHECK(c2[4] == 0.0);
    const auto c0 = soften(0, 0.1).probs;
    CHECK(c0[0] == doctest::Approx(0.95));
    CHECK(c0[1] == doctest::Approx(0.05));
    CHECK(c0.tail(3).isZero());
    const auto c4 = soften(4, 0.1).probs;
    CHECK(c4[4] == doctest::Approx(0.95));
    CHECK(c4[3] == doctest::Approx(0.05));
    for (int k = 0; k < kSoftLabelSize; ++k) {
        const auto one_hot = soften(k, 0.0).probs;
        CHECK(one_hot[k] == 1.0);
        CHECK(one_hot.sum() == 1.0);
        for (double eps : {0.0, 0.1, 0.37, 0.999}) {
            const SoftLabel s = soften(k, eps);
            CHECK_NOTHROW(s.validate());
        }
    }
    CHECK_THROWS_AS(soften(5, 0.1), InvalidInput);
    CHECK_THROWS_AS(soften(-1, 0.1), InvalidInput);
    CHECK_THROWS_AS(soften(1, 1.0), InvalidInput);
}

TEST_CASE("task loss") {
    RowMatrix<double> one_hot = RowMatrix<double>::Zero(2, 5);
    one_hot(0, 1) = 1.0;
    one_hot(1, 4) = 1.0;
    RowMatrix<double> near = one_hot.array() * (1.0 - 4e-15) + 1e-15;
    CHECK(task_loss(near, one_hot) == doctest::Approx(0.0).epsilon(1e-12));

    RowMatrix<double> uniform = RowMatrix<double>::Constant(3, 5, 0.2);
    std::mt19937_64 rng(9);
    const auto targets = random_distribution_rows(rng, 3, 5);
    CHECK(task_loss(uniform, targets) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    for (int trial = 0; trial < 100; ++trial) {
        const int rows = 1 + trial % 6;
        const auto p = random_distribution_rows(rng, rows, 5);
        const auto t = random_distribution_rows(rng, rows, 5);
        std::vector<std::vector<double>> pv(rows, std::vector<double>(5));
        std::vector<std::vector<double>> tv(rows, std::vector<double>(5));
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < 5; ++k) {
                pv[r][k] = p(r, k);
                tv[r][k] = t(r, k);
            }
        CHECK(oracle::relative_error(task_loss(p, t), oracle::cross_entropy(pv, tv), 1e-12) <= 1e-10);
    }

    RowMatrix<double> bad = RowMatrix<double>::Constant(1, 5, 0.3);
    CHECK_THROWS_AS(task_loss(bad, bad), InvalidInput);
    CHECK_THROWS_AS(task_loss(uniform, one_hot), DimensionError);
    RowMatrix<double> zero_pred = one_hot;
    CHECK_THROWS_AS(task_loss(zero_pred, one_hot), InvalidInput);
}

TEST_CASE("task loss logit gradient matches finite differences") {
    std::mt19937_64 rng(10);
    RowMatrix<double> logits = RowMatrix<double>::Random(3, 5);
    const auto targets = random_distribution_rows(rng, 3, 5);
    auto softmax = [](const RowMatrix<double>& z) {
        RowMatrix<double> p = (z.colwise() - z.rowwise().maxCoeff()).array().exp();
        p.array().colwise() /= p.rowwise().sum().array();
        return p;
    };
    const auto g = task_loss_logit_grad<double>(softmax(logits), targets);
    std::function<double()> f = [&] { return task_loss(softmax(logits), targets); };
    double* raw = logits.data();
    for (long i = 0; i < logits.size(); ++i) {
        CHECK(oracle::relative_error(g.data()[i], oracle::central_difference(f, raw, i, 1e-5)) <= 1e-6);
    }
}

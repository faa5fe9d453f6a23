#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "arch_tables.hpp"
#include "oracles.hpp"
#include "sim2real/checkpoint.hpp"

using namespace sim2real;

namespace {

void check_trace(const Network<float>& net, const std::vector<tables::Row>& rows) {
    for (const auto& m : tables::trace_mismatches(net, rows)) FAIL_CHECK(m);
}

Tensor<float> random_images(int n, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor<float> t(Shape{n, size, size, 3});
    for (auto& v : t.data()) v = u(rng);
    return t;
}

using tables::C;
using tables::D;

}  // namespace

TEST_CASE("DRN generator matches its table at 96") {
    const auto net = build_drn_generator<float>(96, 1);
    check_trace(net, tables::drn_generator_96());
    for (std::size_t i = 0; i + 1 < net.layers().size(); ++i) {
        if (net.layers()[i].kind == C || net.layers()[i].kind == D) {
            CHECK(net.layers()[i].normalization == Normalization::pixel);
            CHECK(net.layers()[i].activation == Activation::relu);
        }
    }
    CHECK(net.layers().back().activation == Activation::none);
    CHECK(net.layers().back().normalization == Normalization::none);
    const auto y = net.forward(random_images(1, 96, 3), Mode::eval);
    CHECK(y.shape() == Shape{1, 96, 96, 3});
}

TEST_CASE("UNET generator matches its table at 256") {
    const auto net = build_unet_generator<float>(256, 1);
    check_trace(net, tables::unet_generator_256());
    CHECK(unet_skip_count(net.architecture()) == 7);
    // Decoder i concatenates encoder 7−i (arrows a7→b1 … a1→b7).
    for (int i = 0; i < 7; ++i) {
        CHECK(net.layers()[8 + i].concat_from == 6 - i);
    }
    CHECK(net.layers().back().activation == Activation::none);
    const auto y = net.forward(random_images(1, 256, 4), Mode::eval);
    CHECK(y.shape() == Shape{1, 256, 256, 3});
}

TEST_CASE("discriminator matches its table at 96") {
    const auto net = build_discriminator<float>(96, 4, 1);
    check_trace(net, tables::discriminator_96());
    for (int i = 0; i < 4; ++i) {
        CHECK(net.layers()[i].dropout_p == 0.5);
        CHECK(net.layers()[i].noise_sigma == doctest::Approx(0.2));
        CHECK(net.layers()[i].activation == Activation::leaky_relu);
        CHECK(net.layers()[i].normalization == Normalization::instance);
    }
    CHECK(net.layers()[5].activation == Activation::none);
    CHECK(net.layers()[5].normalization == Normalization::none);
    const auto x = random_images(2, 96, 5);
    const auto y = net.forward(x, Mode::eval);
    CHECK(y.shape() == Shape{2, 1, 1, 4});
    CHECK(net.forward(x, Mode::eval).data() == y.data());
    std::mt19937_64 rng(1);
    CHECK(net.forward(x, Mode::train, &rng).data() != y.data());
}

TEST_CASE("classifier matches its table at 96") {
    const auto net = build_classifier<float>(96, 1);
    check_trace(net, tables::classifier_96());
    for (std::size_t i = 0; i + 2 < net.layers().size(); ++i) {
        if (net.layers()[i].kind == C) {
            CHECK(net.layers()[i].normalization == Normalization::group);
            CHECK(net.layers()[i].groups == std::min(32, net.layouts()[i].linear_shape.c));
        }
    }
    const auto x = random_images(3, 96, 6);
    const auto logits = net.forward(x, Mode::eval);
    const std::vector<int> cmds{0, 1, 2};
    const auto p = branch_probabilities(logits, cmds);
    CHECK(p.rows() == 3);
    CHECK(p.cols() == 5);
    for (int r = 0; r < 3; ++r) CHECK(std::abs(p.row(r).sum() - 1.0f) <= 1e-6f);
}

TEST_CASE("desk-scale shapes and configuration errors") {
    CHECK(build_drn_generator<float>(64, 1, 4).forward(random_images(2, 64, 1), Mode::eval).shape() == Shape{2, 64, 64, 3});
    const auto unet = build_unet_generator<float>(64, 1, 4);
    CHECK(unet.forward(random_images(2, 64, 1), Mode::eval).shape() == Shape{2, 64, 64, 3});
    CHECK(unet_skip_count(unet.architecture()) == 4);
    CHECK(build_discriminator<float>(64, 4, 1, 4).output_shape(2) == Shape{2, 1, 1, 4});
    CHECK(build_discriminator<float>(64, 1, 1, 4).output_shape(2) == Shape{2, 1, 1, 1});
    CHECK(build_classifier<float>(64, 1, 4).output_shape(2) == Shape{2, 1, 1, 15});

    CHECK_THROWS_AS(drn_generator_architecture(128), ConfigError);
    CHECK_THROWS_AS(unet_generator_architecture(96), ConfigError);
    CHECK_THROWS_AS(discriminator_architecture(96, 3), ConfigError);
    CHECK_THROWS_AS(discriminator_architecture(96, 16), ConfigError);
    CHECK_THROWS_AS(classifier_architecture(256), ConfigError);
    CHECK_THROWS_AS(drn_generator_architecture(64, 3), ConfigError);
}

TEST_CASE("forward rejects mismatched inputs naming the first layer") {
    const auto net = build_drn_generator<float>(64, 1, 8);
    try {
        net.forward(random_images(1, 96, 1), Mode::eval);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("L1") != std::string::npos);
    }
    const auto disc = build_discriminator<float>(64, 4, 1, 8);
    CHECK_THROWS_AS(disc.forward(random_images(1, 64, 1), Mode::train), ConfigError);
}

TEST_CASE("determinism and parameter count") {
    const auto a = build_classifier<float>(64, 42, 8);
    const auto b = build_classifier<float>(64, 42, 8);
    const auto c = build_classifier<float>(64, 43, 8);
    CHECK(a.parameters() == b.parameters());
    CHECK(a.parameters() != c.parameters());
    CHECK(a.num_params() == c.num_params());
    const auto x = random_images(2, 64, 9);
    CHECK(a.forward(x, Mode::eval).data() == b.forward(x, Mode::eval).data());

    // Weights are truncated normal with std 0.02; biases and shifts start at 0, scales at 1.
    double max_abs = 0.0;
    double sum_sq = 0.0;
    long count = 0;
    for (const auto& lay : a.layouts()) {
        if (lay.weight.present()) {
            const auto w = a.parameters().segment(lay.weight.offset, lay.weight.size());
            max_abs = std::max(max_abs, static_cast<double>(w.cwiseAbs().maxCoeff()));
            sum_sq += w.template cast<double>().squaredNorm();
            count += w.size();
        }
        if (lay.bias.present()) CHECK(a.parameters().segment(lay.bias.offset, lay.bias.size()).isZero());
        if (lay.gamma.present()) CHECK(a.parameters().segment(lay.gamma.offset, lay.gamma.size()).isOnes());
        if (lay.beta.present()) CHECK(a.parameters().segment(lay.beta.offset, lay.beta.size()).isZero());
    }
    CHECK(max_abs <= 0.04 + 1e-7);
    // Variance of a standard normal truncated at ±2 is about 0.774.
    CHECK(std::sqrt(sum_sq / count) == doctest::Approx(0.02 * std::sqrt(0.7737)).epsilon(0.02));
}

TEST_CASE("normalization properties") {
    const auto x = random_images(2, 64, 12);
    const auto drn = build_drn_generator<float>(64, 3, 4);
    Tape<float> tape;
    drn.forward(x, Mode::eval, nullptr, &tape);
    for (std::size_t i = 0; i + 1 < drn.layers().size(); ++i) {
        if (drn.layers()[i].normalization != Normalization::pixel) continue;
        const auto f = tape.features(static_cast<int>(i)).matrix();
        const Eigen::ArrayXf norms = f.rowwise().norm().array();
        CHECK((norms - 1.0f).abs().maxCoeff() <= 1e-5f);
    }

    const auto cls = build_classifier<double>(64, 3, 4);
    Tape<double> ct;
    cls.forward(x.cast<double>(), Mode::eval, nullptr, &ct);
    for (std::size_t i = 0; i + 2 < cls.layers().size(); ++i) {
        const auto& l = cls.layers()[i];
        if (l.normalization != Normalization::group) continue;
        const auto& f = ct.features(static_cast<int>(i));
        const auto& s = f.shape();
        const int per_group = s.c / l.groups;
        for (int n = 0; n < s.n; ++n) {
            for (int g = 0; g < l.groups; ++g) {
                double sum = 0.0, sq = 0.0;
                long cnt = 0;
                for (int y = 0; y < s.h; ++y)
                    for (int xx = 0; xx < s.w; ++xx)
                        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
                            sum += f(n, y, xx, c);
                            sq += f(n, y, xx, c) * f(n, y, xx, c);
                            ++cnt;
                        }
                const double mean = sum / cnt;
                const double var = sq / cnt - mean * mean;
                CHECK(std::abs(mean) <= 1e-4);
                CHECK(std::abs(var - 1.0) <= 1e-4);
            }
        }
    }
}

TEST_CASE("classifier branches share the trunk") {
    const auto net = build_classifier<float>(64, 5, 8);
    const auto x = random_images(1, 64, 3);
    const auto logits = net.forward(x, Mode::eval);
    const auto& fc = net.layouts().back();
    REQUIRE(fc.weight.present());
    CHECK(fc.weight.cols == 15);
    // Each branch's logits depend on the same pooled features through its own 5 columns.
    std::vector<int> left{0}, straight{1};
    CHECK(branch_probabilities(logits, left) != branch_probabilities(logits, straight));
}

TEST_CASE("zeroing a skip connection changes the UNET output") {
    const auto net = build_unet_generator<double>(64, 8, 8);
    const auto x = random_images(1, 64, 2).cast<double>();
    const auto y = net.forward(x, Mode::eval);
    const int dec = net.layer_index("dec2");
    const int skip = net.layers()[dec].concat_from;
    REQUIRE(skip >= 0);
    // The skip channels are the trailing input rows of the next decoder's weights.
    auto zeroed = net;
    const auto& next = zeroed.layouts()[dec + 1];
    const int skip_c = zeroed.layouts()[skip].out_shape.c;
    Eigen::Map<RowMatrix<double>> w(zeroed.parameters().data() + next.weight.offset, next.weight.rows, next.weight.cols);
    w.bottomRows(skip_c).setZero();
    CHECK(zeroed.forward(x, Mode::eval).data() != y.data());
}

namespace {

// Compares analytic gradients of L = Σ w·output (+ Σ v·features for seeded
// layers) with central differences on 20 random parameters and a few inputs.
// The step is small enough that ReLU and max-pool switches between the two
// probes are rare.
constexpr double kStep = 1e-6;

template <typename Net>
void gradient_check(const Net& proto, int batch, Mode mode, std::vector<int> seeded_layers, std::uint64_t seed) {
    Net net = proto;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> x(net.input_shape(batch));
    for (auto& v : x.data()) v = u(rng);
    const auto w = oracle::random_tensor(net.output_shape(batch), rng);

    Tape<double> probe;
    std::mt19937_64 mrng(seed + 1);
    net.forward(x, mode, &mrng, &probe);
    std::vector<Tensor<double>> feature_weights;
    for (int l : seeded_layers) feature_weights.push_back(oracle::random_tensor(probe.features(l).shape(), rng, 0.1));

    auto loss = [&]() {
        Tape<double> t;
        std::mt19937_64 r(seed + 1);
        const auto y = net.forward(x, mode, &r, &t);
        double total = y.data().dot(w.data());
        for (std::size_t k = 0; k < seeded_layers.size(); ++k) {
            total += t.features(seeded_layers[k]).data().dot(feature_weights[k].data());
        }
        return total;
    };

    Tape<double> tape;
    std::mt19937_64 r(seed + 1);
    net.forward(x, mode, &r, &tape);
    std::vector<FeatureSeed<double>> seeds;
    for (std::size_t k = 0; k < seeded_layers.size(); ++k) seeds.push_back({seeded_layers[k], &feature_weights[k]});
    Vector<double> grad = Vector<double>::Zero(net.num_params());
    const auto gx = net.backward(tape, w, grad, seeds);

    std::function<double()> f = loss;
    std::uniform_int_distribution<long> pick(0, net.num_params() - 1);
    int bad = 0;
    for (int k = 0; k < 20; ++k) {
        const long i = pick(rng);
        const double numeric = oracle::central_difference(f, net.parameters(), i, kStep);
        const double err = std::abs(grad[i] - numeric) / std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
        if (err > 1e-2) {
            ++bad;
            MESSAGE("param " << i << " analytic " << grad[i] << " numeric " << numeric);
        }
    }
    std::uniform_int_distribution<long> pick_x(0, x.size() - 1);
    for (int k = 0; k < 5; ++k) {
        const long i = pick_x(rng);
        const double numeric = oracle::central_difference(f, x.data(), i, kStep);
        const double err = std::abs(gx.data()[i] - numeric) / std::max({std::abs(gx.data()[i]), std::abs(numeric), 1e-6});
        if (err > 1e-2) {
            ++bad;
            MESSAGE("input " << i << " analytic " << gx.data()[i] << " numeric " << numeric);
        }
    }
    CHECK(bad == 0);
}

}  // namespace

TEST_CASE("gradient check: DRN generator at 64") {
    gradient_check(build_drn_generator<double>(64, 21, 8), 2, Mode::eval, {}, 1);
}

TEST_CASE("gradient check: UNET generator at 64") {
    gradient_check(build_unet_generator<double>(64, 22, 8), 2, Mode::eval, {}, 2);
}

TEST_CASE("gradient check: discriminator at 64 with style-layer seeds") {
    gradient_check(build_discriminator<double>(64, 4, 23, 8), 2, Mode::train, {1, 2, 3}, 3);
}

TEST_CASE("gradient check: classifier at 64") {
    gradient_check(build_classifier<double>(64, 24, 8), 2, Mode::eval, {}, 4);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const auto dir = std::filesystem::temp_directory_path() / ("sim2real_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const auto gen = build_drn_generator<float>(64, 7, 8);
    auto disc = build_discriminator<float>(64, 4, 8, 8);
    disc.parameters()[3] = 0.123f;
    Checkpoint ckpt;
    ckpt.meta["step"] = 17;
    ckpt.add("g_st", gen);
    ckpt.add("d_t", disc);
    ckpt.save(dir / "a.ckpt");

    const auto back = Checkpoint::load(dir / "a.ckpt");
    CHECK(back.meta["step"] == 17);
    CHECK(back.names() == std::vector<std::string>{"g_st", "d_t"});
    const auto g2 = back.network<float>("g_st");
    const auto d2 = back.network<float>("d_t");
    CHECK(g2.parameters() == gen.parameters());
    CHECK(d2.parameters() == disc.parameters());
    const auto x = random_images(2, 64, 1);
    CHECK(g2.forward(x, Mode::eval).data() == gen.forward(x, Mode::eval).data());
    CHECK_THROWS_AS(back.network<float>("missing"), IoError);
    CHECK_THROWS_AS(back.network<double>("g_st"), IoError);
    CHECK_THROWS_AS(Checkpoint::load(dir / "nope.ckpt"), IoError);
    std::filesystem::remove_all(dir);
}

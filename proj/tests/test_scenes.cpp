#include <doctest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "sim2real/scenes.hpp"

using namespace sim2real;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("sim2real_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    return dir;
}

SceneSpec spec(std::uint64_t seed, double curvature, Intersection i, Command c, Domain d, int size = 64) {
    SceneSpec s;
    s.seed = seed;
    s.image_size = size;
    s.road_curvature = curvature;
    s.intersection = i;
    s.command = c;
    s.domain = d;
    return s;
}

}  // namespace

TEST_CASE("render labels") {
    const auto straight = render(spec(7, 0.0, Intersection::none, Command::straight, Domain::source));
    CHECK(straight.angular_velocity == 0.0);
    CHECK(straight.has_label);

    const auto curved = render(spec(3, 0.5, Intersection::none, Command::straight, Domain::source));
    CHECK(curved.angular_velocity == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(curved.angular_velocity > 0.0);

    CHECK(steering_label(spec(1, 0.3, Intersection::cross, Command::left, Domain::source)) == 0.9);
    CHECK(steering_label(spec(1, 0.3, Intersection::t_junction, Command::right, Domain::source)) == -0.9);
    CHECK(steering_label(spec(1, -0.3, Intersection::none, Command::right, Domain::source)) == doctest::Approx(-0.42));
    CHECK(steering_label(spec(1, -1.0, Intersection::cross, Command::straight, Domain::source)) == doctest::Approx(-1.4));

    const auto target = render(spec(3, 0.5, Intersection::none, Command::straight, Domain::target));
    CHECK_FALSE(target.has_label);
    CHECK(target.angular_velocity == 0.0);
}

TEST_CASE("render validation") {
    CHECK_THROWS_AS(render(spec(1, 0.0, Intersection::none, Command::straight, Domain::source, 32)), ConfigError);
    CHECK_THROWS_AS(render(spec(1, 1.5, Intersection::none, Command::straight, Domain::source)), ConfigError);
    for (int size : {64, 96, 256}) {
        const auto s = render(spec(2, 0.1, Intersection::cross, Command::left, Domain::target, size));
        CHECK(s.image.shape() == Shape{1, size, size, 3});
        CHECK(s.image.data().maxCoeff() <= 1.0f);
        CHECK(s.image.data().minCoeff() >= -1.0f);
    }
}

TEST_CASE("geometry is aligned across domains") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> curv(-1.0, 1.0);
    for (int i = 0; i < 60; ++i) {
        auto s = spec(rng(), curv(rng), static_cast<Intersection>(i % 3), static_cast<Command>(i % 3), Domain::source);
        const auto a = road_mask(s);
        s.domain = Domain::target;
        const auto b = road_mask(s);
        long inter = 0;
        long uni = 0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            inter += a[k] & b[k];
            uni += a[k] | b[k];
        }
        CHECK(uni > 0);
        CHECK(inter == uni);
    }
}

TEST_CASE("render is deterministic and domains differ") {
    const auto s = spec(7, 0.2, Intersection::t_junction, Command::straight, Domain::target);
    CHECK(render(s).image.data() == render(s).image.data());
    auto src = s;
    src.domain = Domain::source;
    CHECK(render(src).image.data() != render(s).image.data());
}

TEST_CASE("augment") {
    const auto sample = render(spec(5, -0.4, Intersection::none, Command::straight, Domain::source));
    std::uint64_t quiet = 0;
    while (draw_augment(quiet).any()) ++quiet;
    const auto same = augment(sample, quiet);
    CHECK(same.image.data() == sample.image.data());

    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto a = augment(sample, seed);
        const auto b = augment(sample, seed);
        CHECK(a.image.data() == b.image.data());
        CHECK(a.image.shape() == sample.image.shape());
        CHECK(a.image.data().maxCoeff() <= 1.0f);
        CHECK(a.image.data().minCoeff() >= -1.0f);
        CHECK(a.angular_velocity == sample.angular_velocity);
        CHECK(a.command == sample.command);
        const auto d = draw_augment(seed);
        for (double f : {d.contrast_factor, d.brightness_factor, d.saturation_factor}) {
            CHECK(f >= kAugmentFactorLo);
            CHECK(f <= kAugmentFactorHi);
        }
    }
    AugmentDraw noise_only;
    noise_only.noise = true;
    noise_only.noise_seed = 3;
    const auto noisy = augment(sample, noise_only);
    CHECK(noisy.image.data() != sample.image.data());

    int active = 0;
    for (std::uint64_t seed = 0; seed < 4000; ++seed) active += draw_augment(seed).contrast ? 1 : 0;
    CHECK(active / 4000.0 == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("png round trip is exact") {
    const fs::path dir = fresh_dir("png");
    fs::create_directories(dir);
    const auto s = render(spec(9, 0.8, Intersection::cross, Command::right, Domain::target));
    write_png(s.image, dir / "a.png");
    CHECK(read_png(dir / "a.png").data() == s.image.data());
    CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("dataset write and read") {
    const fs::path dir = fresh_dir("dataset");
    auto specs = random_specs(10, 64, Domain::source, 1);
    const auto target = random_specs(10, 64, Domain::target, 1);
    specs.insert(specs.end(), target.begin(), target.end());
    const auto m = write_dataset(specs, dir);
    CHECK(m.n_source == 10);
    CHECK(m.n_target == 10);
    int labeled = 0;
    for (const auto& row : m.rows) labeled += row.angular_velocity.has_value() ? 1 : 0;
    CHECK(labeled == 10);

    const auto back = read_dataset(dir);
    REQUIRE(back.samples.size() == specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto expected = render(specs[i]);
        CHECK(back.samples[i].image.data() == expected.image.data());
        CHECK(back.samples[i].angular_velocity == expected.angular_velocity);
        CHECK(back.samples[i].command == expected.command);
        CHECK(back.samples[i].domain == expected.domain);
        CHECK(back.samples[i].has_label == expected.has_label);
    }
    const auto held_out = read_target_labels(dir);
    REQUIRE(held_out.size() == 10);
    CHECK(held_out[0].second == steering_label(target[0]));

    const fs::path empty = fresh_dir("empty");
    const auto none = write_dataset({}, empty);
    CHECK(none.rows.empty());
    CHECK(read_dataset(empty).samples.empty());

    auto dup = specs;
    dup.push_back(specs.front());
    CHECK_THROWS_AS(write_dataset(dup, fresh_dir("dup")), InvalidInput);
    CHECK_THROWS_AS(write_dataset(specs, "/proc/sim2real_unwritable"), IoError);
    CHECK_THROWS_AS(read_dataset(fresh_dir("missing")), IoError);
    fs::remove_all(dir);
    fs::remove_all(empty);
}

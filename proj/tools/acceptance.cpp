// Acceptance runner: one PASS/FAIL line per criterion, details indented below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arch_tables.hpp"
#include "oracles.hpp"
#include "sim2real/errors.hpp"
#include "sim2real/pipeline.hpp"

using namespace sim2real;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = true;
    std::vector<std::string> details;

    void require(bool ok, const std::string& what) {
        pass = pass && ok;
        details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
    void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// ---- bound chain

Outcome bound_chain() {
    Outcome o;
    const auto start = Clock::now();
    const auto rows = verify_bounds(1000, 1, 16);
    const double elapsed = seconds_since(start);
    double worst = std::numeric_limits<double>::infinity();
    int max_x = 0;
    int held = 0;
    for (const auto& r : rows) {
        worst = std::min(worst, r.slack());
        max_x = std::max(max_x, r.x_outcomes);
        held += r.pass() ? 1 : 0;
    }
    o.require(rows.size() == 1000 && held == 1000, std::to_string(held) + "/1000 instances hold");
    o.require(worst >= -1e-12, "smallest slack " + fmt(worst));
    o.require(max_x <= 16, "largest support " + std::to_string(max_x));
    o.require(elapsed < 10.0, "runtime " + fmt(elapsed) + " s");
    return o;
}

// ---- loss oracles

Outcome loss_oracles() {
    Outcome o;
    constexpr int kTrials = 100;
    constexpr double kTol = 1e-10;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal(0.0, 1.5);
    std::uniform_int_distribution<int> small(1, 4);
    std::uniform_real_distribution<double> unit(0.01, 1.0);
    double worst_phi = 0, worst_omega = 0, worst_cycle = 0, worst_gram = 0, worst_style = 0, worst_task = 0;

    for (int trial = 0; trial < kTrials; ++trial) {
        std::vector<double> real(small(rng) * 3), fake(small(rng) * 2);
        for (auto& v : real) v = normal(rng);
        for (auto& v : fake) v = normal(rng);
        const Eigen::Map<const Eigen::VectorXd> r(real.data(), real.size()), f(fake.data(), fake.size());
        worst_phi = std::max(worst_phi, oracle::relative_error(fisher_phi(r, f), oracle::mean_difference(real, fake)));
        worst_omega =
            std::max(worst_omega, oracle::relative_error(fisher_omega(r, f), oracle::half_second_moment(real, fake)));

        const Shape s{small(rng), small(rng) + 1, small(rng) + 1, small(rng)};
        const auto x = oracle::random_tensor(s, rng);
        const auto y = oracle::random_tensor(s, rng);
        worst_cycle = std::max(worst_cycle, oracle::relative_error(cycle_l1(x, y), oracle::cycle_l1(x, y)));

        const auto g = gram(x).values;
        const auto og = oracle::gram(x);
        for (int a = 0; a < s.c; ++a)
            for (int b = 0; b < s.c; ++b) worst_gram = std::max(worst_gram, oracle::relative_error(g(a, b), og[a][b]));

        std::vector<Tensor<double>> rf, ff;
        for (int l = 0; l < 3; ++l) {
            const Shape ls{s.n, s.h, s.w, small(rng)};
            rf.push_back(oracle::random_tensor(ls, rng));
            ff.push_back(oracle::random_tensor(ls, rng));
        }
        worst_style = std::max(worst_style, oracle::relative_error(style_loss<double>(rf, ff), oracle::style_loss(rf, ff)));

        const int rows = small(rng);
        RowMatrix<double> pred(rows, kSoftLabelSize), target(rows, kSoftLabelSize);
        std::vector<std::vector<double>> op(rows), ot(rows);
        for (int i = 0; i < rows; ++i) {
            for (int k = 0; k < kSoftLabelSize; ++k) {
                pred(i, k) = unit(rng);
                target(i, k) = unit(rng);
            }
            pred.row(i) /= pred.row(i).sum();
            target.row(i) /= target.row(i).sum();
            for (int k = 0; k < kSoftLabelSize; ++k) {
                op[i].push_back(pred(i, k));
                ot[i].push_back(target(i, k));
            }
        }
        worst_task = std::max(worst_task, oracle::relative_error(task_loss(pred, target), oracle::cross_entropy(op, ot)));
    }
    o.require(worst_phi <= kTol, "fisher_phi worst relative error " + fmt(worst_phi));
    o.require(worst_omega <= kTol, "fisher_omega worst relative error " + fmt(worst_omega));
    o.require(worst_cycle <= kTol, "cycle_l1 worst relative error " + fmt(worst_cycle));
    o.require(worst_gram <= kTol, "gram worst relative error " + fmt(worst_gram));
    o.require(worst_style <= kTol, "style_loss worst relative error " + fmt(worst_style));
    o.require(worst_task <= kTol, "task_loss worst relative error " + fmt(worst_task));
    o.note(std::to_string(kTrials) + " random inputs each");
    return o;
}

// ---- gradient checks

constexpr double kFdStep = 1e-3;
constexpr double kFdTol = 1e-2;
constexpr int kFdParams = 20;

double fd_relative(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Counts coordinates whose analytic gradient disagrees with the central difference.
int count_bad(const std::function<double()>& f, Eigen::Ref<Eigen::VectorXd> x, const Eigen::VectorXd& grad,
              std::mt19937_64& rng, double step, int probes = kFdParams) {
    std::uniform_int_distribution<long> pick(0, x.size() - 1);
    int bad = 0;
    for (int k = 0; k < probes; ++k) {
        const long i = pick(rng);
        if (fd_relative(grad[i], oracle::central_difference(f, x, i, step)) > kFdTol) ++bad;
    }
    return bad;
}

Outcome loss_gradients() {
    Outcome o;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 1.0);

    {
        Eigen::VectorXd real(12), fake(8);
        for (auto& v : real) v = normal(rng);
        for (auto& v : fake) v = normal(rng);
        const double wp = 0.7, wo = -1.3;
        const auto g = fisher_score_gradients(real, fake, wp, wo);
        auto f = [&] { return wp * fisher_phi(real, fake) + wo * fisher_omega(real, fake); };
        const int bad = count_bad(f, real, g.real, rng, kFdStep, 10) + count_bad(f, fake, g.fake, rng, kFdStep, 10);
        o.require(bad == 0, "adversarial score gradients: " + std::to_string(bad) + "/20 off");
    }
    {
        const Shape s{2, 4, 4, 3};
        const auto x = oracle::random_tensor(s, rng);
        auto y = oracle::random_tensor(s, rng);
        const auto g = cycle_l1_grad(x, y);
        auto f = [&] { return cycle_l1(x, y); };
        const int bad = count_bad(f, y.data(), g.data(), rng, kFdStep);
        o.require(bad == 0, "cycle_l1: " + std::to_string(bad) + "/20 off");
    }
    {
        std::vector<Tensor<double>> rf, ff;
        for (int c : {3, 5, 4}) {
            rf.push_back(oracle::random_tensor(Shape{2, 3, 3, c}, rng));
            ff.push_back(oracle::random_tensor(Shape{2, 3, 3, c}, rng));
        }
        const auto g = style_loss_grad<double>(rf, ff);
        int bad = 0;
        for (std::size_t l = 0; l < ff.size(); ++l) {
            auto f = [&] { return style_loss<double>(rf, ff); };
            bad += count_bad(f, ff[l].data(), g[l].data(), rng, kFdStep, 7);
        }
        o.require(bad == 0, "style_loss: " + std::to_string(bad) + "/21 off");
    }
    {
        RowMatrix<double> logits(4, kSoftLabelSize), target(4, kSoftLabelSize);
        for (int r = 0; r < 4; ++r) target.row(r) = soften(r % kSoftLabelSize).probs.transpose();
        for (auto& v : logits.reshaped()) v = normal(rng);
        auto softmax = [&] {
            RowMatrix<double> p = logits;
            for (int r = 0; r < p.rows(); ++r) {
                p.row(r) = (p.row(r).array() - p.row(r).maxCoeff()).exp();
                p.row(r) /= p.row(r).sum();
            }
            return p;
        };
        const RowMatrix<double> g = task_loss_logit_grad<double>(softmax(), target);
        Eigen::VectorXd flat = logits.reshaped<Eigen::RowMajor>();
        auto f = [&] {
            logits = flat.reshaped<Eigen::RowMajor>(4, kSoftLabelSize);
            return task_loss(softmax(), target);
        };
        const Eigen::VectorXd gflat = g.reshaped<Eigen::RowMajor>();
        const int bad = count_bad(f, flat, gflat, rng, kFdStep);
        o.require(bad == 0, "task_loss: " + std::to_string(bad) + "/20 off");
    }

    // Networks at size 64 and full width; L = Σ w·output with fixed dropout and noise draws.
    auto check_net = [&](const char* name, Network<double> net, std::uint64_t seed) {
        std::mt19937_64 r(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Tensor<double> x(net.input_shape(1));
        for (auto& v : x.data()) v = u(r);
        const auto w = oracle::random_tensor(net.output_shape(1), r);
        auto loss = [&] {
            std::mt19937_64 noise(seed + 1);
            return net.forward(x, Mode::train, &noise).data().dot(w.data());
        };
        Tape<double> tape;
        std::mt19937_64 noise(seed + 1);
        net.forward(x, Mode::train, &noise, &tape);
        Vector<double> grad = Vector<double>::Zero(net.num_params());
        net.backward(tape, w, grad);
        const Eigen::VectorXd g = grad;
        std::mt19937_64 pick(seed + 2);
        const int bad = count_bad(loss, net.parameters(), g, pick, kFdStep);
        o.require(bad == 0, std::string(name) + ": " + std::to_string(bad) + "/20 off at step " + fmt(kFdStep));
        if (bad != 0) {
            std::mt19937_64 again(seed + 2);
            const int fine = count_bad(loss, net.parameters(), g, again, 1e-6);
            o.note(std::string(name) + " with the same 20 parameters at step 1e-6: " + std::to_string(fine) + "/20 off");
        }
    };
    check_net("DRN generator", build_drn_generator<double>(64, 31), 41);
    check_net("UNET generator", build_unet_generator<double>(64, 32), 42);
    check_net("discriminator", build_discriminator<double>(64, 4, 33), 43);
    check_net("classifier", build_classifier<double>(64, 34), 44);
    return o;
}

// ---- architecture conformance

Outcome architecture() {
    Outcome o;
    auto trace = [&](const char* name, const auto& net, const std::vector<tables::Row>& rows) {
        const auto bad = tables::trace_mismatches(net, rows);
        o.require(bad.empty(), std::string(name) + " trace (" + std::to_string(rows.size()) + " rows)");
        for (const auto& b : bad) o.note(b);
    };
    trace("DRN generator at 96", build_drn_generator<float>(96, 1), tables::drn_generator_96());
    trace("UNET generator at 256", build_unet_generator<float>(256, 1), tables::unet_generator_256());
    trace("discriminator at 96", build_discriminator<float>(96, 4, 1), tables::discriminator_96());
    trace("classifier at 96", build_classifier<float>(96, 1), tables::classifier_96());

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor<float> x(Shape{3, 96, 96, 3});
    for (auto& v : x.data()) v = u(rng);

    const auto cls = build_classifier<float>(96, 2);
    const std::vector<int> commands{0, 1, 2};
    const auto p = branch_probabilities(cls.forward(x, Mode::eval), commands);
    double worst_sum = 0.0;
    for (int r = 0; r < p.rows(); ++r) worst_sum = std::max(worst_sum, std::abs(static_cast<double>(p.row(r).sum()) - 1.0));
    o.require(worst_sum <= 1e-6, "classifier row sums within " + fmt(worst_sum) + " of 1");

    const auto drn = build_drn_generator<float>(96, 3);
    Tape<float> tape;
    drn.forward(x, Mode::eval, nullptr, &tape);
    double worst_norm = 0.0;
    for (std::size_t i = 0; i + 1 < drn.layers().size(); ++i) {
        if (drn.layers()[i].normalization != Normalization::pixel) continue;
        const auto f = tape.features(static_cast<int>(i)).matrix();
        worst_norm = std::max(worst_norm, static_cast<double>((f.rowwise().norm().array() - 1.0f).abs().maxCoeff()));
    }
    o.require(worst_norm <= 1e-5, "pixel-normalized activations within " + fmt(worst_norm) + " of unit norm");
    return o;
}

// ---- desk-scale run shared by the constraint, adaptation and gap criteria

struct DeskRun {
    fs::path data;
    TrainResult adapted;
    double adapted_target = 0, source_only_target = 0, supervised_target = 0;
    double adapted_source = 0;
    double seconds = 0;
    DistributionGap gap;
};

DeskRun desk_run(const TrainConfig& config, const fs::path& out) {
    DeskRun run;
    run.data = out / "data";
    if (!fs::exists(run.data / "manifest.tsv")) {
        generate_dataset(DatagenOptions{}, run.data);
    }
    const Dataset ds = read_dataset(run.data);
    const auto start = Clock::now();
    auto accuracy = [&](const fs::path& ckpt, Domain d) {
        return evaluate_checkpoint(Checkpoint::load(ckpt), ds, run.data, d).overall_accuracy;
    };
    auto progress = [](const char* name) {
        return [name](const TrainSnapshot& s) {
            std::cerr << "  " << name << " step " << s.step << " (" << fmt(s.seconds) << " s)\n";
        };
    };

    run.adapted = train(config, training_data(ds, run.data, false), out / "adapted", progress("adapted"));
    run.adapted_target = accuracy(run.adapted.checkpoint, Domain::target);
    run.adapted_source = accuracy(run.adapted.checkpoint, Domain::source);

    TrainConfig baseline = config;
    baseline.mode = TrainMode::source_only;
    const auto so = train(baseline, training_data(ds, run.data, false), out / "source_only", progress("source_only"));
    run.source_only_target = accuracy(so.checkpoint, Domain::target);

    baseline.mode = TrainMode::target_supervised;
    const auto ts = train(baseline, training_data(ds, run.data, true), out / "target_supervised", progress("target_supervised"));
    run.supervised_target = accuracy(ts.checkpoint, Domain::target);
    run.seconds = seconds_since(start);

    run.gap = distribution_gap(Checkpoint::load(run.adapted.checkpoint), ds);
    return run;
}

Outcome constraint(const DeskRun& run) {
    Outcome o;
    const auto& snaps = run.adapted.snapshots;
    if (snaps.empty()) {
        o.require(false, "no snapshots logged");
        return o;
    }
    const double omega = snaps.back().losses.omega_T;
    o.require(omega >= 0.5 && omega <= 1.5, "final logged omega_T " + fmt(omega) + " at step " + std::to_string(snaps.back().step));
    double worst_gap = 0.0;
    int inside = 0;
    for (const auto& s : snaps) {
        worst_gap = std::max(worst_gap, s.lambda_linearity_gap);
        inside += s.losses.omega_T >= 0.5 && s.losses.omega_T <= 1.5 ? 1 : 0;
    }
    o.require(worst_gap <= 1e-8, "largest multiplier-linearity gap " + fmt(worst_gap) + " over " +
                                     std::to_string(snaps.size()) + " snapshots");
    o.note(std::to_string(inside) + "/" + std::to_string(snaps.size()) + " snapshots with omega_T in [0.5, 1.5]");
    return o;
}

Outcome adaptation(const DeskRun& run) {
    Outcome o;
    o.require(run.source_only_target < run.adapted_target,
              "source-only " + fmt(run.source_only_target) + " < adapted " + fmt(run.adapted_target));
    o.require(run.adapted_target <= run.supervised_target,
              "adapted " + fmt(run.adapted_target) + " <= target-supervised " + fmt(run.supervised_target));
    const double margin = run.adapted_target - run.source_only_target;
    o.require(margin >= 0.05, "margin over source-only " + fmt(100.0 * margin) + " points");
    o.require(run.seconds <= 1800.0, "three training runs took " + fmt(run.seconds) + " s");
    o.note("adapted accuracy on source " + fmt(run.adapted_source));
    // Regression values from the first verified run of configs/desk.ini on the
    // default dataset; floating-point results depend on the build's vector width.
    constexpr double kPinned[] = {0.322, 0.668, 0.892};
    const double got[] = {run.source_only_target, run.adapted_target, run.supervised_target};
    bool same = true;
    for (int i = 0; i < 3; ++i) same = same && std::abs(got[i] - kPinned[i]) < 1e-9;
    o.note(std::string(same ? "matches" : "differs from") + " the pinned regression accuracies 0.322 / 0.668 / 0.892");
    return o;
}

Outcome distribution(const DeskRun& run) {
    Outcome o;
    o.require(run.gap.transferred_to_target < run.gap.source_to_target,
              "chi2(transferred, target) " + fmt(run.gap.transferred_to_target) + " < chi2(source, target) " +
                  fmt(run.gap.source_to_target));
    return o;
}

// ---- ablation

Outcome ablation(const TrainConfig& desk, const fs::path& data, const fs::path& out) {
    Outcome o;
    TrainConfig base = desk;
    base.steps = 20;
    base.snapshot_every = 5;
    base.width_divisor = 16;
    base.classifier_width_divisor = 16;
    base.batch_size = 2;
    const auto rows = run_ablation(base, data, out);
    o.require(rows.size() == 5, std::to_string(rows.size()) + " runs");
    const std::set<std::string> expected{"nocycle_drn_style", "cycle_unet_nostyle", "cycle_unet_style",
                                         "cycle_drn_nostyle", "cycle_drn_style"};
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.config.name);
    o.require(names == expected, "model set: no-cycle DRN+style, cycle with UNET/DRN with and without style");
    for (const auto& r : rows) {
        if (r.config.use_cycle) continue;
        double moved = 0.0;
        const auto logged = read_metrics(out / r.config.name / "metrics.tsv");
        for (const auto& s : logged) moved = std::max({moved, s.delta_g_ts, s.delta_d_s});
        o.require(!logged.empty() && moved == 0.0,
                  r.config.name + ": largest T->S generator / source discriminator change " + fmt(moved) + " over " +
                      std::to_string(logged.size()) + " snapshots");
    }
    return o;
}

// ---- steering round trip

Outcome steering() {
    Outcome o;
    const SteerBins bins;
    int good = 0;
    for (int k = 0; k < bins.n_bins(); ++k) {
        std::vector<double> one_hot(bins.n_bins(), 0.0);
        one_hot[k] = 1.0;
        good += bins.discretize(bins.reconstruct(one_hot)) == k ? 1 : 0;
    }
    o.require(good == bins.n_bins(), std::to_string(good) + "/" + std::to_string(bins.n_bins()) + " one-hot classes round trip");
    const std::vector<double> uniform(bins.n_bins(), 1.0 / bins.n_bins());
    const double r = bins.reconstruct(uniform);
    o.require(r == 0.0, "uniform reconstructs to " + fmt(r));
    return o;
}

std::set<int> parse_selection(const std::string& s) {
    std::set<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const int k = std::stoi(tok);
        if (k < 1 || k > 9) throw ConfigError("criterion " + tok + " out of range 1-9");
        out.insert(k);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line each."};
    std::string only = "1,2,3,4,5,6,7,8,9";
    fs::path config_path = SIM2REAL_DESK_CONFIG;
    fs::path out;
    app.add_option("--only", only, "comma-separated criteria to run")->capture_default_str();
    app.add_option("--config", config_path, "desk run config")->check(CLI::ExistingFile)->capture_default_str();
    app.add_option("--out", out, "working directory (default: $SIM2REAL_OUT_ROOT/acceptance or runs/acceptance)");
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    TrainConfig desk;
    try {
        selected = parse_selection(only);
        desk = load_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "acceptance: " << e.what() << '\n';
        return 2;
    }
    if (out.empty()) {
        const char* root = std::getenv("SIM2REAL_OUT_ROOT");
        out = fs::path(root != nullptr && *root != '\0' ? root : "runs") / "acceptance";
    }
    fs::create_directories(out);

    const char* titles[] = {"",
                            "bound-chain suite",
                            "loss oracle equivalence",
                            "gradient checks",
                            "architecture conformance",
                            "constraint behavior",
                            "adaptation effect",
                            "distribution-gap diagnostic",
                            "ablation grid",
                            "steering round trip"};
    std::optional<DeskRun> run;
    auto get_run = [&]() -> const DeskRun& {
        if (!run) run = desk_run(desk, out / "desk");
        return *run;
    };
    int failures = 0;
    for (int k : selected) {
        const auto start = Clock::now();
        Outcome o;
        try {
            switch (k) {
                case 1: o = bound_chain(); break;
                case 2: o = loss_oracles(); break;
                case 3: o = loss_gradients(); break;
                case 4: o = architecture(); break;
                case 5: o = constraint(get_run()); break;
                case 6: o = adaptation(get_run()); break;
                case 7: o = distribution(get_run()); break;
                case 8: {
                    const fs::path data = out / "desk" / "data";
                    if (!fs::exists(data / "manifest.tsv")) generate_dataset(DatagenOptions{}, data);
                    o = ablation(desk, data, out / "ablation");
                    break;
                }
                case 9: o = steering(); break;
            }
        } catch (const std::exception& e) {
            o.require(false, std::string("error: ") + e.what());
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << "  " << titles[k] << "  (" << fmt(seconds_since(start))
                  << " s)\n";
        for (const auto& d : o.details) std::cout << "        " << d << '\n';
        std::cout.flush();
    }
    std::cout << (selected.size() - failures) << "/" << selected.size() << " criteria passed\n";
    return failures == 0 ? 0 : 1;
}

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sim2real/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sim2real;

namespace {

constexpr const char* kOutRootEnv = "SIM2REAL_OUT_ROOT";

enum Exit { kOk = 0, kValidation = 1, kUsage = 2, kNumerical = 3, kInternal = 4 };

fs::path default_out(const std::string& subcommand) {
    const char* root = std::getenv(kOutRootEnv);
    return fs::path(root != nullptr && *root != '\0' ? root : "runs") / subcommand;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string escape_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') {
            c = ' ';
        }
    }
    return s;
}

// One manifest per run, written into the run's output directory.
struct RunRecord {
    std::string subcommand;
    fs::path manifest_dir;
    json config = json::object();
    json seeds = json::object();
    json inputs = json::object();
    json outputs = json::object();
    json results = json::object();
    std::string started = utc_now();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const std::string& status, const std::string& error = {}) const {
        if (manifest_dir.empty()) {
            return;
        }
        json j = {{"subcommand", subcommand},
                  {"status", status},
                  {"config", config},
                  {"seeds", seeds},
                  {"inputs", inputs},
                  {"outputs", outputs},
                  {"results", results},
                  {"tool_version", SIM2REAL_VERSION},
                  {"started_utc", started},
                  {"wall_clock_seconds",
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
        if (!error.empty()) {
            j["error"] = error;
        }
        std::error_code ec;
        fs::create_directories(manifest_dir, ec);
        std::ofstream out(manifest_dir / "run_manifest.json");
        out << j.dump(2) << '\n';
    }
};

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
}

std::string describe(const EvalReport& r) {
    std::ostringstream os;
    os << "accuracy " << r.overall_accuracy << " over " << r.total << " samples";
    return os.str();
}

// --- subcommands -----------------------------------------------------------

struct DatagenArgs {
    DatagenOptions options;
    fs::path out;
};

void run_datagen(const DatagenArgs& a, RunRecord& rec) {
    rec.config = {{"n_source", a.options.n_source},
                  {"n_target", a.options.n_target},
                  {"size", a.options.image_size},
                  {"seed", a.options.seed}};
    rec.seeds = {{"seed", a.options.seed}};
    rec.outputs = {{"dataset", a.out.string()}};
    const DatasetManifest m = generate_dataset(a.options, a.out);
    rec.results = {{"n_source", m.n_source}, {"n_target", m.n_target}};
    std::cout << "wrote " << m.n_source << " source and " << m.n_target << " target images to " << a.out.string()
              << '\n';
}

struct TrainArgs {
    fs::path config;
    fs::path data;
    fs::path out;
    std::vector<std::string> overrides;
};

TrainConfig resolve_config(const fs::path& config_path, const std::vector<std::string>& overrides) {
    TrainConfig c;
    if (!config_path.empty()) {
        c = load_config(config_path, c);
    }
    if (!overrides.empty()) {
        std::string text;
        for (const std::string& o : overrides) {
            if (o.find('=') == std::string::npos) {
                throw ConfigError("--set expects key=value, got '" + o + "'");
            }
            text += o + '\n';
        }
        c = parse_config(text, c);
    }
    c.validate();
    return c;
}

void run_train(const TrainArgs& a, RunRecord& rec) {
    const TrainConfig config = resolve_config(a.config, a.overrides);
    rec.config = to_json(config);
    rec.seeds = {{"seed", config.seed}};
    rec.inputs = {{"data", a.data.string()}, {"config", a.config.string()}};
    const Dataset dataset = read_dataset(a.data);
    const bool target_labels = config.mode == TrainMode::target_supervised;
    const TrainResult result = train(config, training_data(dataset, a.data, target_labels), a.out,
                                     [](const TrainSnapshot& s) {
                                         std::cerr << "step " << s.step << " task " << s.losses.task << " omega_T "
                                                   << s.losses.omega_T << " cycle " << s.losses.cycle << '\n';
                                     });
    rec.outputs = {{"metrics", result.metrics.string()}, {"checkpoint", result.checkpoint.string()}};
    if (!result.snapshots.empty()) {
        const LossRecord& l = result.snapshots.back().losses;
        rec.results = {{"final_step", result.snapshots.back().step},
                       {"task", l.task},
                       {"omega_T", l.omega_T},
                       {"lambda_T", l.lambda_T},
                       {"cycle", l.cycle}};
    }
    std::cout << "checkpoint " << result.checkpoint.string() << '\n';
}

struct TransferArgs {
    fs::path ckpt;
    fs::path in;
    fs::path out;
    std::string direction = "s2t";
    bool grid = false;
    int limit = 0;
};

void run_transfer(const TransferArgs& a, RunRecord& rec) {
    const Direction direction = parse_direction(a.direction);
    rec.config = {{"direction", a.direction}, {"grid", a.grid}, {"limit", a.limit}};
    rec.inputs = {{"checkpoint", a.ckpt.string()}, {"images", a.in.string()}};
    const Checkpoint ck = Checkpoint::load(a.ckpt);

    std::vector<std::pair<std::string, Image>> inputs;
    if (fs::exists(a.in / "manifest.tsv")) {
        const Dataset ds = read_dataset(a.in);
        const Domain wanted = direction == Direction::s2t ? Domain::source : Domain::target;
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            if (ds.samples[i].domain == wanted) {
                inputs.emplace_back(fs::path(ds.manifest.rows[i].file).filename().string(), ds.samples[i].image);
            }
        }
    } else {
        if (!fs::is_directory(a.in)) {
            throw ConfigError("--in must be a dataset or a directory of PNG images: " + a.in.string());
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a.in)) {
            if (e.path().extension() == ".png") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            inputs.emplace_back(f.filename().string(), read_png(f));
        }
    }
    if (a.limit > 0 && static_cast<int>(inputs.size()) > a.limit) {
        inputs.resize(static_cast<std::size_t>(a.limit));
    }
    if (inputs.empty()) {
        throw ConfigError("no input images in " + a.in.string());
    }

    make_dir(a.out / "images");
    std::vector<Tensor<float>> all_in;
    std::vector<Tensor<float>> all_out;
    for (const auto& [name, image] : inputs) {
        const Tensor<float> y = transfer(ck, image, direction);
        write_png(y, a.out / "images" / name);
        all_in.push_back(image);
        all_out.push_back(y);
    }
    rec.outputs = {{"images", (a.out / "images").string()}};
    if (a.grid) {
        const std::size_t shown = std::min<std::size_t>(all_in.size(), 16);
        const std::vector<Tensor<float>> gin(all_in.begin(), all_in.begin() + static_cast<long>(shown));
        const std::vector<Tensor<float>> gout(all_out.begin(), all_out.begin() + static_cast<long>(shown));
        write_png(image_grid(stack_batch(gin), stack_batch(gout)), a.out / "grid.png");
        rec.outputs["grid"] = (a.out / "grid.png").string();
    }
    rec.results = {{"images", inputs.size()}};
    std::cout << "transferred " << inputs.size() << " images (" << a.direction << ")\n";
}

struct EvaluateArgs {
    fs::path ckpt;
    fs::path data;
    std::string domain = "target";
    fs::path out;
};

void run_evaluate(const EvaluateArgs& a, RunRecord& rec) {
    const Domain domain = parse_domain(a.domain);
    fs::path report_path = a.out;
    if (a.out.extension() == ".tsv") {
        rec.manifest_dir = a.out.parent_path().empty() ? fs::path(".") : a.out.parent_path();
    } else {
        report_path = a.out / "report.tsv";
    }
    rec.config = {{"domain", a.domain}};
    rec.inputs = {{"checkpoint", a.ckpt.string()}, {"data", a.data.string()}};
    const Checkpoint ck = Checkpoint::load(a.ckpt);
    const Dataset ds = read_dataset(a.data);
    const EvalReport report = evaluate_checkpoint(ck, ds, a.data, domain);
    make_dir(rec.manifest_dir);
    write_report_tsv(report, report_path);
    rec.outputs = {{"report", report_path.string()}};
    rec.results = {{"accuracy", report.overall_accuracy},
                   {"samples", report.total},
                   {"dangerous_swap_rate", report.dangerous_swap_rate}};
    std::cout << describe(report) << '\n';
}

struct BoundsArgs {
    int instances = 1000;
    std::uint64_t seed = 1;
    int max_outcomes = 16;
    fs::path out;
};

bool run_verify_bounds(const BoundsArgs& a, RunRecord& rec) {
    rec.config = {{"instances", a.instances}, {"max_outcomes", a.max_outcomes}};
    rec.seeds = {{"seed", a.seed}};
    const auto rows = verify_bounds(a.instances, a.seed, a.max_outcomes);
    make_dir(a.out);
    write_bounds_tsv(rows, a.out / "bounds.tsv");
    const auto failures = std::count_if(rows.begin(), rows.end(), [](const BoundRow& r) { return !r.pass(); });
    double worst = rows.empty() ? 0.0 : rows.front().slack();
    for (const BoundRow& r : rows) {
        worst = std::min(worst, r.slack());
    }
    rec.outputs = {{"table", (a.out / "bounds.tsv").string()}};
    rec.results = {{"instances", rows.size()}, {"failures", failures}, {"min_slack", worst}};
    std::cout << rows.size() - static_cast<std::size_t>(failures) << "/" << rows.size()
              << " instances satisfy the bound chain (min slack " << worst << ")\n";
    return failures == 0;
}

struct AblationArgs {
    fs::path config;
    fs::path data;
    fs::path out;
    std::vector<std::string> overrides;
};

void run_ablation_cmd(const AblationArgs& a, RunRecord& rec) {
    const TrainConfig base = resolve_config(a.config, a.overrides);
    rec.config = to_json(base);
    rec.seeds = {{"seed", base.seed}};
    rec.inputs = {{"data", a.data.string()}, {"config", a.config.string()}};
    const auto rows = run_ablation(base, a.data, a.out);
    rec.outputs = {{"table", (a.out / "ablation.tsv").string()}};
    json runs = json::array();
    for (const AblationRow& r : rows) {
        runs.push_back({{"name", r.config.name},
                        {"checkpoint", r.checkpoint.string()},
                        {"delta_g_ts", r.final.delta_g_ts},
                        {"delta_d_s", r.final.delta_d_s}});
        std::cout << r.config.name << '\n';
    }
    rec.results = {{"runs", runs}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sim-to-real steering: data generation, adversarial adaptation training and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SIM2REAL_VERSION);

    const std::string out_help = std::string("output directory (default: $") + kOutRootEnv + "/<subcommand>, or runs/<subcommand>)";

    DatagenArgs datagen;
    auto* c_datagen = app.add_subcommand("datagen", "render a procedural source/target dataset");
    c_datagen->add_option("--n-source", datagen.options.n_source, "number of source images")->capture_default_str();
    c_datagen->add_option("--n-target", datagen.options.n_target, "number of target images")->capture_default_str();
    c_datagen->add_option("--size", datagen.options.image_size, "image size")
        ->check(CLI::IsMember({64, 96, 256}))
        ->capture_default_str();
    c_datagen->add_option("--seed", datagen.options.seed, "dataset seed")->capture_default_str();
    c_datagen->add_option("--out", datagen.out, out_help);

    TrainArgs trainargs;
    auto* c_train = app.add_subcommand("train", "train generators, discriminators and classifier");
    c_train->add_option("--config", trainargs.config, "INI config file")->check(CLI::ExistingFile);
    c_train->add_option("--data", trainargs.data, "dataset directory")->required();
    c_train->add_option("--set", trainargs.overrides, "override a config key (key=value), repeatable");
    c_train->add_option("--out", trainargs.out, out_help);

    TransferArgs transferargs;
    auto* c_transfer = app.add_subcommand("transfer", "translate images with a trained generator");
    c_transfer->add_option("--ckpt", transferargs.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    c_transfer->add_option("--in", transferargs.in, "dataset directory or directory of PNG images")->required();
    c_transfer->add_option("--direction", transferargs.direction, "s2t or t2s")
        ->check(CLI::IsMember({"s2t", "t2s"}))
        ->capture_default_str();
    c_transfer->add_flag("--grid", transferargs.grid, "also write grid.png (inputs above outputs)");
    c_transfer->add_option("--limit", transferargs.limit, "translate at most this many images (0: all)");
    c_transfer->add_option("--out", transferargs.out, out_help);

    EvaluateArgs evalargs;
    auto* c_eval = app.add_subcommand("evaluate", "classifier accuracy and confusion matrices");
    c_eval->add_option("--ckpt", evalargs.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--data", evalargs.data, "dataset directory")->required();
    c_eval->add_option("--domain", evalargs.domain, "source or target")
        ->check(CLI::IsMember({"source", "target"}))
        ->capture_default_str();
    c_eval->add_option("--out", evalargs.out, "report path (.tsv) or output directory");

    BoundsArgs bounds;
    auto* c_bounds = app.add_subcommand("verify-bounds", "check the divergence bound chain on random instances");
    c_bounds->add_option("--instances", bounds.instances, "number of instances")->capture_default_str();
    c_bounds->add_option("--seed", bounds.seed, "seed")->capture_default_str();
    c_bounds->add_option("--max-outcomes", bounds.max_outcomes, "largest support size")->capture_default_str();
    c_bounds->add_option("--out", bounds.out, out_help);

    AblationArgs ablation;
    auto* c_ablation = app.add_subcommand("ablation", "train the five ablation models and compare them");
    c_ablation->add_option("--config", ablation.config, "INI config file for the shared settings")
        ->check(CLI::ExistingFile);
    c_ablation->add_option("--data", ablation.data, "dataset directory")->required();
    c_ablation->add_option("--set", ablation.overrides, "override a config key (key=value), repeatable");
    c_ablation->add_option("--out", ablation.out, out_help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << '\n';
        std::cerr << "sim2real: error[usage]: " << escape_line(e.what()) << '\n';
        return kUsage;
    }

    RunRecord rec;
    auto* sub = app.get_subcommands().front();
    rec.subcommand = sub->get_name();
    auto resolve = [&](fs::path& out) {
        if (out.empty()) {
            out = default_out(rec.subcommand);
        }
        rec.manifest_dir = out;
    };

    int code = kOk;
    try {
        if (sub == c_datagen) {
            resolve(datagen.out);
            run_datagen(datagen, rec);
        } else if (sub == c_train) {
            resolve(trainargs.out);
            run_train(trainargs, rec);
        } else if (sub == c_transfer) {
            resolve(transferargs.out);
            run_transfer(transferargs, rec);
        } else if (sub == c_eval) {
            resolve(evalargs.out);
            run_evaluate(evalargs, rec);
        } else if (sub == c_bounds) {
            resolve(bounds.out);
            if (!run_verify_bounds(bounds, rec)) {
                rec.write("failed", "bound chain violated");
                std::cerr << "sim2real: error[bounds]: bound chain violated on at least one instance\n";
                return kValidation;
            }
        } else if (sub == c_ablation) {
            resolve(ablation.out);
            run_ablation_cmd(ablation, rec);
        }
        rec.write("ok");
        return code;
    } catch (const NumericalError& e) {
        code = kNumerical;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[numerical]: " << escape_line(e.what()) << '\n';
    } catch (const ConfigError& e) {
        code = kValidation;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[config]: " << escape_line(e.what()) << '\n';
    } catch (const DimensionError& e) {
        code = kValidation;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[dimension]: " << escape_line(e.what()) << '\n';
    } catch (const InvalidInput& e) {
        code = kValidation;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[input]: " << escape_line(e.what()) << '\n';
    } catch (const IoError& e) {
        code = kValidation;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[io]: " << escape_line(e.what()) << '\n';
    } catch (const std::exception& e) {
        code = kInternal;
        rec.write("failed", e.what());
        std::cerr << "sim2real: error[internal]: " << escape_line(e.what()) << '\n';
    }
    return code;
}

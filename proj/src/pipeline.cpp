#include "sim2real/pipeline.hpp"

#include <cmath>
#include <fstream>

namespace sim2real {
namespace {

namespace fs = std::filesystem;

std::vector<SteerSample> of_domain(const Dataset& dataset, Domain domain) {
    std::vector<SteerSample> out;
    for (const SteerSample& s : dataset.samples) {
        if (s.domain == domain) {
            out.push_back(s);
        }
    }
    return out;
}

bool has_target_labels(const fs::path& dataset_dir) { return fs::exists(dataset_dir / "target_labels.tsv"); }

}  // namespace

DatasetManifest generate_dataset(const DatagenOptions& options, const fs::path& dir) {
    if (options.n_source < 0 || options.n_target < 0) {
        throw ConfigError("sample counts must be nonnegative");
    }
    std::vector<SceneSpec> specs = random_specs(options.n_source, options.image_size, Domain::source, options.seed);
    const std::vector<SceneSpec> target =
        random_specs(options.n_target, options.image_size, Domain::target, options.seed);
    specs.insert(specs.end(), target.begin(), target.end());
    return write_dataset(specs, dir);
}

EvalReport evaluate_checkpoint(const Checkpoint& checkpoint, const Dataset& dataset, const fs::path& dataset_dir,
                               Domain domain) {
    const Network<float> classifier = checkpoint.network<float>(kClassifier);
    const std::vector<SteerSample> samples = labeled_samples(dataset, dataset_dir, domain);
    if (samples.empty()) {
        throw ConfigError("dataset has no " + std::string(to_string(domain)) + " samples to evaluate");
    }
    const SteerBins bins;
    return tabulate(predict(classifier, samples, bins), bins);
}

DistributionGap distribution_gap(const Checkpoint& checkpoint, const Dataset& dataset, const HistogramSpec& spec) {
    const std::vector<SteerSample> source = of_domain(dataset, Domain::source);
    const std::vector<SteerSample> target = of_domain(dataset, Domain::target);
    if (source.empty() || target.empty()) {
        throw ConfigError("distribution gap needs both domains");
    }
    const Tensor<float> source_images = stack_images(source);
    const Tensor<float> target_images = stack_images(target);
    std::vector<Tensor<float>> transferred;
    constexpr int kChunk = 16;
    for (int begin = 0; begin < source_images.shape().n; begin += kChunk) {
        std::vector<Tensor<float>> chunk;
        for (int i = begin; i < std::min(source_images.shape().n, begin + kChunk); ++i) {
            chunk.push_back(source_images.slice(i));
        }
        transferred.push_back(transfer(checkpoint, stack_batch(chunk), Direction::s2t));
    }
    DistributionGap gap;
    gap.transferred_to_target = empirical_chi_squared(target_images, stack_batch(transferred), spec);
    gap.source_to_target = empirical_chi_squared(target_images, source_images, spec);
    return gap;
}

std::vector<BoundRow> verify_bounds(int instances, std::uint64_t seed, int max_outcomes) {
    if (instances < 0) {
        throw ConfigError("instance count must be nonnegative");
    }
    std::vector<BoundRow> rows;
    rows.reserve(static_cast<std::size_t>(instances));
    for (int i = 0; i < instances; ++i) {
        const BoundInstance inst = random_bound_instance(derive_seed(seed, static_cast<std::uint64_t>(i)), max_outcomes);
        BoundRow row;
        row.instance = i;
        row.x_outcomes = static_cast<int>(inst.conditional.rows());
        row.y_outcomes = static_cast<int>(inst.conditional.cols());
        row.report = verify_bound_chain(inst.p_target_x, inst.p_transferred_x, inst.conditional, inst.error);
        rows.push_back(row);
    }
    return rows;
}

void write_bounds_tsv(const std::vector<BoundRow>& rows, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(17);
    out << "instance\tx_outcomes\ty_outcomes\ttv\tchi2\te_target\te_transferred\tbound\tslack\tprop1_slack\tprop2_slack\ttheorem_slack\tpass\n";
    for (const BoundRow& r : rows) {
        const BoundReport& b = r.report;
        out << r.instance << '\t' << r.x_outcomes << '\t' << r.y_outcomes << '\t' << b.tv << '\t' << b.chi2 << '\t' << b.e_target << '\t'
            << b.e_transferred << '\t' << r.bound() << '\t' << r.slack() << '\t' << b.prop1.slack << '\t'
            << b.prop2.slack << '\t' << b.theorem.slack << '\t' << (r.pass() ? "true" : "false") << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const fs::path& dataset_dir, const fs::path& out_dir) {
    const Dataset dataset = read_dataset(dataset_dir);
    const bool labels = has_target_labels(dataset_dir);
    std::vector<AblationRow> rows;
    for (const TrainConfig& config : ablation_grid(base)) {
        AblationRow row;
        row.config = config;
        const TrainResult result = train(config, training_data(dataset, dataset_dir, false), out_dir / config.name);
        row.checkpoint = result.checkpoint;
        if (!result.snapshots.empty()) {
            row.final = result.snapshots.back();
        }
        const Checkpoint ck = Checkpoint::load(result.checkpoint);
        if (labels) {
            row.target_accuracy = evaluate_checkpoint(ck, dataset, dataset_dir, Domain::target).overall_accuracy;
        }
        row.gap = distribution_gap(ck, dataset);
        rows.push_back(std::move(row));
    }

    const fs::path path = out_dir / "ablation.tsv";
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(10);
    out << "name\tgenerator\tuse_cycle\tuse_style\tsteps\tadv_T\tadv_S\tcycle\tstyle\ttask\tomega_T\tlambda_T"
           "\tdelta_g_ts\tdelta_d_s\ttarget_accuracy\tchi2_transferred_target\tchi2_source_target\n";
    for (const AblationRow& r : rows) {
        const LossRecord& l = r.final.losses;
        out << r.config.name << '\t' << to_string(r.config.generator_kind) << '\t' << r.config.use_cycle << '\t'
            << r.config.use_style << '\t' << r.config.steps << '\t' << l.adv_T << '\t' << l.adv_S << '\t' << l.cycle
            << '\t' << l.style << '\t' << l.task << '\t' << l.omega_T << '\t' << l.lambda_T << '\t'
            << r.final.delta_g_ts << '\t' << r.final.delta_d_s << '\t';
        if (r.target_accuracy) {
            out << *r.target_accuracy;
        }
        out << '\t' << r.gap.transferred_to_target << '\t' << r.gap.source_to_target << '\n';
    }
    return rows;
}

}  // namespace sim2real

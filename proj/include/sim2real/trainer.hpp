#pragma once

// Alternating constrained min-max training. Each iteration takes one
// discriminator ascent step, one multiplier update λ ← λ + ρ(Ω − 1) per
// discriminator, and one descent step for the generators and the classifier.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sim2real/architectures.hpp"
#include "sim2real/checkpoint.hpp"
#include "sim2real/losses.hpp"
#include "sim2real/optim.hpp"
#include "sim2real/scenes.hpp"
#include "sim2real/steering.hpp"

namespace sim2real {

enum class GeneratorKind { drn, unet };

// adapt: the full objective. source_only / target_supervised: the classifier
// alone on raw source images / labeled target images (baselines).
enum class TrainMode { adapt, source_only, target_supervised };

std::string_view to_string(GeneratorKind k);
std::string_view to_string(TrainMode m);
GeneratorKind parse_generator_kind(std::string_view s);
TrainMode parse_train_mode(std::string_view s);

struct TrainConfig {
    GeneratorKind generator_kind = GeneratorKind::drn;
    bool use_cycle = true;
    bool use_style = true;
    int batch_size = 0;  // 0: 8 for drn, 4 for unet
    double learning_rate = 1e-4;
    int steps = 2000;
    double rho = 1e-6;
    double style_weight = 1.0;
    std::uint64_t seed = 0;
    int image_size = 64;

    TrainMode mode = TrainMode::adapt;
    double task_weight = 1.0;  // task loss weight in the generator objective
    double label_epsilon = 0.1;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int width_divisor = 8;             // generators and discriminators
    int classifier_width_divisor = 4;
    int n_patches = 4;
    bool augment = true;
    int snapshot_every = 100;
    int checkpoint_every = 0;  // 0: final checkpoint only
    std::string name = "run";

    [[nodiscard]] int effective_batch() const;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::json& j);

// INI-style file; keys may sit at top level or in a [train] section.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// The five ablation models: no-cycle DRN with style, then cycle with
// UNET/DRN × without/with style.
std::vector<TrainConfig> ablation_grid(const TrainConfig& base);

struct LossRecord {
    double adv_T = 0.0;
    double adv_S = 0.0;
    double cycle = 0.0;
    double cycle_T = 0.0;  // target → source → target
    double cycle_S = 0.0;  // source → target → source
    double style = 0.0;
    double task = 0.0;
    double phi_T = 0.0;
    double phi_S = 0.0;
    double omega_T = 0.0;
    double omega_S = 0.0;
    double lambda_T = 0.0;
    double lambda_S = 0.0;
};

struct TrainSnapshot {
    int step = 0;
    LossRecord losses;
    // |finite-difference d(adversarial loss)/dλ − (1 − Ω)|, worst of both domains.
    double lambda_linearity_gap = 0.0;
    // Largest absolute change of the T→S generator / source discriminator
    // parameters since initialization.
    double delta_g_ts = 0.0;
    double delta_d_s = 0.0;
    double seconds = 0.0;
    std::filesystem::path checkpoint_ref;
};

inline constexpr const char* kGenST = "g_st";
inline constexpr const char* kGenTS = "g_ts";
inline constexpr const char* kDiscT = "d_t";
inline constexpr const char* kDiscS = "d_s";
inline constexpr const char* kClassifier = "classifier";

struct TrainingData {
    std::vector<SteerSample> source;
    std::vector<SteerSample> target;  // angular_velocity filled only for target_supervised
};

// Splits a dataset by domain; target labels are attached only when requested.
TrainingData training_data(const Dataset& dataset, const std::filesystem::path& dataset_dir, bool with_target_labels);

class Trainer {
public:
    Trainer(TrainConfig config, TrainingData data);

    // Runs one iteration; returns the losses of that iteration.
    LossRecord step();

    [[nodiscard]] int iteration() const { return iteration_; }
    [[nodiscard]] const TrainConfig& config() const { return config_; }
    [[nodiscard]] const FisherState& fisher_target() const { return fisher_t_; }
    [[nodiscard]] const FisherState& fisher_source() const { return fisher_s_; }

    [[nodiscard]] const Network<float>& generator_st() const { return g_st_; }
    [[nodiscard]] const Network<float>& generator_ts() const { return g_ts_; }
    [[nodiscard]] const Network<float>& discriminator_t() const { return d_t_; }
    [[nodiscard]] const Network<float>& discriminator_s() const { return d_s_; }
    [[nodiscard]] const Network<float>& classifier() const { return cls_; }

    [[nodiscard]] double delta_g_ts() const;
    [[nodiscard]] double delta_d_s() const;

    [[nodiscard]] Checkpoint checkpoint() const;

private:
    struct Batch {
        Tensor<float> images;
        std::vector<int> commands;
        RowMatrix<float> soft_labels;
    };

    Batch draw(const std::vector<SteerSample>& pool, std::vector<std::size_t>& order, std::size_t& cursor,
               bool augment_images, bool labeled);
    // Classifier forward/backward on `images`; returns the task loss and
    // accumulates parameter gradients. Fills `grad_images` when non-null.
    double classifier_pass(const Tensor<float>& images, const Batch& batch, Tensor<float>* grad_images);
    LossRecord adapt_step();
    LossRecord classifier_step();

    TrainConfig config_;
    TrainingData data_;
    Network<float> g_st_, g_ts_, d_t_, d_s_, cls_;
    Adam<float> opt_g_st_, opt_g_ts_, opt_d_t_, opt_d_s_, opt_cls_;
    Vector<float> init_g_ts_, init_d_s_;
    FisherState fisher_t_, fisher_s_;
    SteerBins bins_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_s_, order_t_;
    std::size_t cursor_s_ = 0, cursor_t_ = 0;
    int iteration_ = 0;
};

double lambda_linearity_gap(const LossRecord& r, double rho);

using SnapshotCallback = std::function<void(const TrainSnapshot&)>;

struct TrainResult {
    std::vector<TrainSnapshot> snapshots;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
};

// Trains and writes metrics.tsv plus checkpoints under `out_dir`. A non-finite
// loss throws NumericalError after the metrics so far have been flushed; the
// message names the loss and the last good snapshot.
TrainResult train(const TrainConfig& config, TrainingData data, const std::filesystem::path& out_dir,
                  const SnapshotCallback& on_snapshot = {});

std::vector<std::string> metrics_columns();
std::vector<TrainSnapshot> read_metrics(const std::filesystem::path& path);

enum class Direction { s2t, t2s };
std::string_view to_string(Direction d);
Direction parse_direction(std::string_view s);

// Eval-mode translation with the checkpoint's generator for `direction`.
Tensor<float> transfer(const Checkpoint& checkpoint, const Tensor<float>& images, Direction direction);

// Two rows per column block: inputs on top, outputs below, `columns` images wide.
Image image_grid(const Tensor<float>& inputs, const Tensor<float>& outputs, int columns = 8);

// Eval-mode classifier predictions for labeled samples.
std::vector<Prediction> predict(const Network<float>& classifier, const std::vector<SteerSample>& samples,
                                const SteerBins& bins = SteerBins(), int batch = 16);

// Samples of `domain` with labels; target labels come from target_labels.tsv.
std::vector<SteerSample> labeled_samples(const Dataset& dataset, const std::filesystem::path& dataset_dir, Domain domain);

Tensor<float> stack_images(const std::vector<SteerSample>& samples);

}  // namespace sim2real

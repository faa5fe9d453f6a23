#include "sim2real/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sim2real/rng.hpp"

namespace sim2real {
namespace {

namespace fs = std::filesystem;

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::pair<std::string_view, Enum>, N>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (name == s) {
            return value;
        }
    }
    throw ConfigError(std::string("unknown ") + what + ": " + std::string(s));
}

constexpr std::array<std::pair<std::string_view, GeneratorKind>, 2> kGeneratorNames{
    {{"drn", GeneratorKind::drn}, {"unet", GeneratorKind::unet}}};
constexpr std::array<std::pair<std::string_view, TrainMode>, 3> kModeNames{
    {{"adapt", TrainMode::adapt}, {"source_only", TrainMode::source_only}, {"target_supervised", TrainMode::target_supervised}}};
constexpr std::array<std::pair<std::string_view, Direction>, 2> kDirectionNames{
    {{"s2t", Direction::s2t}, {"t2s", Direction::t2s}}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum e, const std::array<std::pair<std::string_view, Enum>, N>& table) {
    for (const auto& [name, value] : table) {
        if (value == e) {
            return name;
        }
    }
    return "?";
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (is.fail() || !(is >> std::ws).eof()) {
        throw ConfigError(key + ": cannot parse '" + v + "'");
    }
    return out;
}

Tensor<float>& operator+=(Tensor<float>& a, const Tensor<float>& b) {
    require_same_shape(a, b, "gradient accumulation");
    a.data() += b.data();
    return a;
}

double max_abs_change(const Vector<float>& now, const Vector<float>& start) {
    return now.size() == 0 ? 0.0 : static_cast<double>((now - start).cwiseAbs().maxCoeff());
}

BuildArgs generator_args(const TrainConfig& c) {
    return BuildArgs{c.generator_kind == GeneratorKind::drn ? NetFamily::drn_generator : NetFamily::unet_generator,
                     c.image_size, c.width_divisor, c.n_patches};
}
BuildArgs discriminator_args(const TrainConfig& c) {
    return BuildArgs{NetFamily::discriminator, c.image_size, c.width_divisor, c.n_patches};
}
BuildArgs classifier_args(const TrainConfig& c) {
    return BuildArgs{NetFamily::classifier, c.image_size, c.classifier_width_divisor, c.n_patches};
}

std::vector<std::pair<const char*, double>> loss_fields(const LossRecord& r) {
    return {{"adv_T", r.adv_T},     {"adv_S", r.adv_S},       {"cycle", r.cycle},       {"cycle_T", r.cycle_T},
            {"cycle_S", r.cycle_S}, {"style", r.style},       {"task", r.task},         {"phi_T", r.phi_T},
            {"phi_S", r.phi_S},     {"omega_T", r.omega_T},   {"omega_S", r.omega_S},   {"lambda_T", r.lambda_T},
            {"lambda_S", r.lambda_S}};
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string_view to_string(GeneratorKind k) { return enum_name(k, kGeneratorNames); }
std::string_view to_string(TrainMode m) { return enum_name(m, kModeNames); }
std::string_view to_string(Direction d) { return enum_name(d, kDirectionNames); }
GeneratorKind parse_generator_kind(std::string_view s) { return parse_enum(s, kGeneratorNames, "generator kind"); }
TrainMode parse_train_mode(std::string_view s) { return parse_enum(s, kModeNames, "training mode"); }
Direction parse_direction(std::string_view s) { return parse_enum(s, kDirectionNames, "direction"); }

int TrainConfig::effective_batch() const {
    if (batch_size > 0) {
        return batch_size;
    }
    return generator_kind == GeneratorKind::drn ? 8 : 4;
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) {
            throw ConfigError(msg);
        }
    };
    require(steps >= 0, "steps must be nonnegative");
    require(batch_size >= 0, "batch_size must be nonnegative (0 selects the default)");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    require(rho > 0.0 && std::isfinite(rho), "rho must be positive");
    require(style_weight >= 0.0 && std::isfinite(style_weight), "style_weight must be nonnegative");
    require(task_weight >= 0.0 && std::isfinite(task_weight), "task_weight must be nonnegative");
    require(label_epsilon >= 0.0 && label_epsilon < 1.0, "label_epsilon must lie in [0, 1)");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
    require(snapshot_every >= 1, "snapshot_every must be at least 1");
    require(checkpoint_every >= 0, "checkpoint_every must be nonnegative");
    require(width_divisor >= 1 && classifier_width_divisor >= 1, "width divisors must be at least 1");
    require(!name.empty(), "name must not be empty");
    // Throws ConfigError for unsupported sizes, widths or patch counts.
    make_architecture(generator_args(*this));
    make_architecture(discriminator_args(*this));
    make_architecture(classifier_args(*this));
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"name", c.name},
            {"mode", to_string(c.mode)},
            {"generator_kind", to_string(c.generator_kind)},
            {"use_cycle", c.use_cycle},
            {"use_style", c.use_style},
            {"batch_size", c.effective_batch()},
            {"learning_rate", c.learning_rate},
            {"steps", c.steps},
            {"rho", c.rho},
            {"style_weight", c.style_weight},
            {"task_weight", c.task_weight},
            {"label_epsilon", c.label_epsilon},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"seed", c.seed},
            {"image_size", c.image_size},
            {"width_divisor", c.width_divisor},
            {"classifier_width_divisor", c.classifier_width_divisor},
            {"n_patches", c.n_patches},
            {"augment", c.augment},
            {"snapshot_every", c.snapshot_every},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.name = j.at("name").get<std::string>();
    c.mode = parse_train_mode(j.at("mode").get<std::string>());
    c.generator_kind = parse_generator_kind(j.at("generator_kind").get<std::string>());
    c.use_cycle = j.at("use_cycle").get<bool>();
    c.use_style = j.at("use_style").get<bool>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.steps = j.at("steps").get<int>();
    c.rho = j.at("rho").get<double>();
    c.style_weight = j.at("style_weight").get<double>();
    c.task_weight = j.at("task_weight").get<double>();
    c.label_epsilon = j.at("label_epsilon").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.image_size = j.at("image_size").get<int>();
    c.width_divisor = j.at("width_divisor").get<int>();
    c.classifier_width_divisor = j.at("classifier_width_divisor").get<int>();
    c.n_patches = j.at("n_patches").get<int>();
    c.augment = j.at("augment").get<bool>();
    c.snapshot_every = j.at("snapshot_every").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    return c;
}

TrainConfig parse_config(std::string_view text, TrainConfig c) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is{std::string(text)};
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
    }
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [key, node] : tree) {
        if (node.empty()) {
            entries.emplace_back(key, node.data());
        } else if (key == "train") {
            for (const auto& [k, v] : node) {
                entries.emplace_back(k, v.data());
            }
        } else {
            throw ConfigError("config: unknown section [" + key + "]");
        }
    }
    for (const auto& [key, v] : entries) {
        if (key == "generator_kind") {
            c.generator_kind = parse_generator_kind(v);
        } else if (key == "use_cycle") {
            c.use_cycle = parse_bool(key, v);
        } else if (key == "use_style") {
            c.use_style = parse_bool(key, v);
        } else if (key == "batch_size") {
            c.batch_size = parse_number<int>(key, v);
        } else if (key == "learning_rate") {
            c.learning_rate = parse_number<double>(key, v);
        } else if (key == "steps") {
            c.steps = parse_number<int>(key, v);
        } else if (key == "rho") {
            c.rho = parse_number<double>(key, v);
        } else if (key == "style_weight") {
            c.style_weight = parse_number<double>(key, v);
        } else if (key == "seed") {
            c.seed = parse_number<std::uint64_t>(key, v);
        } else if (key == "image_size") {
            c.image_size = parse_number<int>(key, v);
        } else if (key == "mode") {
            c.mode = parse_train_mode(v);
        } else if (key == "task_weight") {
            c.task_weight = parse_number<double>(key, v);
        } else if (key == "label_epsilon") {
            c.label_epsilon = parse_number<double>(key, v);
        } else if (key == "adam_beta1") {
            c.adam_beta1 = parse_number<double>(key, v);
        } else if (key == "adam_beta2") {
            c.adam_beta2 = parse_number<double>(key, v);
        } else if (key == "width_divisor") {
            c.width_divisor = parse_number<int>(key, v);
        } else if (key == "classifier_width_divisor") {
            c.classifier_width_divisor = parse_number<int>(key, v);
        } else if (key == "n_patches") {
            c.n_patches = parse_number<int>(key, v);
        } else if (key == "augment") {
            c.augment = parse_bool(key, v);
        } else if (key == "snapshot_every") {
            c.snapshot_every = parse_number<int>(key, v);
        } else if (key == "checkpoint_every") {
            c.checkpoint_every = parse_number<int>(key, v);
        } else if (key == "name") {
            c.name = v;
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

TrainConfig load_config(const fs::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), std::move(base));
}

std::vector<TrainConfig> ablation_grid(const TrainConfig& base) {
    struct Variant {
        const char* name;
        bool cycle;
        GeneratorKind kind;
        bool style;
    };
    constexpr std::array<Variant, 5> variants{{{"nocycle_drn_style", false, GeneratorKind::drn, true},
                                               {"cycle_unet_nostyle", true, GeneratorKind::unet, false},
                                               {"cycle_unet_style", true, GeneratorKind::unet, true},
                                               {"cycle_drn_nostyle", true, GeneratorKind::drn, false},
                                               {"cycle_drn_style", true, GeneratorKind::drn, true}}};
    std::vector<TrainConfig> out;
    for (const Variant& v : variants) {
        TrainConfig c = base;
        c.name = v.name;
        c.mode = TrainMode::adapt;
        c.use_cycle = v.cycle;
        c.generator_kind = v.kind;
        c.use_style = v.style;
        out.push_back(c);
    }
    return out;
}

TrainingData training_data(const Dataset& dataset, const fs::path& dataset_dir, bool with_target_labels) {
    TrainingData data;
    for (const SteerSample& s : dataset.samples) {
        if (s.domain == Domain::source) {
            data.source.push_back(s);
        }
    }
    if (with_target_labels) {
        data.target = labeled_samples(dataset, dataset_dir, Domain::target);
    } else {
        for (const SteerSample& s : dataset.samples) {
            if (s.domain == Domain::target) {
                data.target.push_back(s);
            }
        }
    }
    return data;
}

std::vector<SteerSample> labeled_samples(const Dataset& dataset, const fs::path& dataset_dir, Domain domain) {
    std::map<std::string, double> labels;
    if (domain == Domain::target) {
        for (const auto& [file, v] : read_target_labels(dataset_dir)) {
            labels[file] = v;
        }
    }
    std::vector<SteerSample> out;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const ManifestRow& row = dataset.manifest.rows[i];
        if (row.domain != domain) {
            continue;
        }
        SteerSample s = dataset.samples[i];
        if (domain == Domain::target) {
            const auto it = labels.find(row.file);
            if (it == labels.end()) {
                throw ConfigError("missing label for " + row.file + " (target_labels.tsv)");
            }
            s.angular_velocity = it->second;
            s.has_label = true;
        } else if (!s.has_label) {
            throw ConfigError("missing label for " + row.file);
        }
        out.push_back(std::move(s));
    }
    return out;
}

Tensor<float> stack_images(const std::vector<SteerSample>& samples) {
    std::vector<Tensor<float>> images;
    images.reserve(samples.size());
    for (const SteerSample& s : samples) {
        images.push_back(s.image);
    }
    return stack_batch(images);
}

Trainer::Trainer(TrainConfig config, TrainingData data)
    : config_(std::move(config)), data_(std::move(data)), rng_(derive_seed(config_.seed, 11)) {
    config_.validate();
    const bool needs_source = config_.mode != TrainMode::target_supervised;
    const bool needs_target = config_.mode != TrainMode::source_only;
    if (needs_source && data_.source.empty()) {
        throw ConfigError("training mode " + std::string(to_string(config_.mode)) + " needs source samples");
    }
    if (needs_target && data_.target.empty()) {
        throw ConfigError("training mode " + std::string(to_string(config_.mode)) + " needs target samples");
    }
    for (const auto* pool : {&data_.source, &data_.target}) {
        for (const SteerSample& s : *pool) {
            if (s.image.shape() != Shape{1, config_.image_size, config_.image_size, 3}) {
                throw ConfigError("sample image " + s.image.shape().str() + " does not match image_size " +
                                  std::to_string(config_.image_size));
            }
        }
    }

    g_st_ = Network<float>(make_architecture(generator_args(config_)), derive_seed(config_.seed, 21));
    g_ts_ = Network<float>(make_architecture(generator_args(config_)), derive_seed(config_.seed, 22));
    d_t_ = Network<float>(make_architecture(discriminator_args(config_)), derive_seed(config_.seed, 23));
    d_s_ = Network<float>(make_architecture(discriminator_args(config_)), derive_seed(config_.seed, 24));
    cls_ = Network<float>(make_architecture(classifier_args(config_)), derive_seed(config_.seed, 25));

    const AdamSettings adam{config_.learning_rate, config_.adam_beta1, config_.adam_beta2};
    opt_g_st_ = Adam<float>(g_st_.num_params(), adam);
    opt_g_ts_ = Adam<float>(g_ts_.num_params(), adam);
    opt_d_t_ = Adam<float>(d_t_.num_params(), adam);
    opt_d_s_ = Adam<float>(d_s_.num_params(), adam);
    opt_cls_ = Adam<float>(cls_.num_params(), adam);
    init_g_ts_ = g_ts_.parameters();
    init_d_s_ = d_s_.parameters();

    fisher_t_.rho = config_.rho;
    fisher_s_.rho = config_.rho;

    order_s_.resize(data_.source.size());
    std::iota(order_s_.begin(), order_s_.end(), std::size_t{0});
    cursor_s_ = order_s_.size();
    order_t_.resize(data_.target.size());
    std::iota(order_t_.begin(), order_t_.end(), std::size_t{0});
    cursor_t_ = order_t_.size();
}

Trainer::Batch Trainer::draw(const std::vector<SteerSample>& pool, std::vector<std::size_t>& order,
                             std::size_t& cursor, bool augment_images, bool labeled) {
    const int batch = config_.effective_batch();
    Batch b;
    std::vector<Tensor<float>> images;
    images.reserve(static_cast<std::size_t>(batch));
    b.soft_labels.resize(batch, kSoftLabelSize);
    for (int i = 0; i < batch; ++i) {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng_);
            cursor = 0;
        }
        const SteerSample& s = pool[order[cursor++]];
        images.push_back(augment_images ? augment(s, rng_()).image : s.image);
        b.commands.push_back(static_cast<int>(s.command));
        if (labeled) {
            if (!s.has_label) {
                throw ConfigError("training sample without a steering label");
            }
            b.soft_labels.row(i) =
                soften(bins_.discretize(s.angular_velocity), config_.label_epsilon).probs.cast<float>().transpose();
        }
    }
    b.images = stack_batch(images);
    return b;
}

double Trainer::classifier_pass(const Tensor<float>& images, const Batch& batch, Tensor<float>* grad_images) {
    Tape<float> tape;
    const Tensor<float> logits = cls_.forward(images, Mode::train, &rng_, &tape);
    RowMatrix<float> probs = branch_probabilities(logits, batch.commands);
    // Keep log() finite if a softmax entry underflows.
    probs = probs.cwiseMax(std::numeric_limits<float>::min());
    const double loss = task_loss(probs, batch.soft_labels);
    const RowMatrix<float> g = task_loss_logit_grad(probs, batch.soft_labels);
    Tensor<float> grad_logits(logits.shape());
    for (int b = 0; b < logits.shape().n; ++b) {
        grad_logits.matrix().row(b).segment(batch.commands[static_cast<std::size_t>(b)] * kSteerClasses,
                                            kSteerClasses) = g.row(b);
    }
    Vector<float> grad = Vector<float>::Zero(cls_.num_params());
    Tensor<float> grad_in = cls_.backward(tape, grad_logits, grad);
    opt_cls_.step(cls_.parameters(), grad);
    if (grad_images != nullptr) {
        *grad_images = std::move(grad_in);
    }
    return loss;
}

LossRecord Trainer::adapt_step() {
    LossRecord r;
    const bool cycle = config_.use_cycle;
    const Batch src = draw(data_.source, order_s_, cursor_s_, config_.augment, true);
    const Batch tgt = draw(data_.target, order_t_, cursor_t_, false, false);
    const Tensor<float>& s = src.images;
    const Tensor<float>& t = tgt.images;

    // The generator tapes serve both the discriminator and the generator step.
    Tape<float> tape_st;
    Tape<float> tape_ts;
    const Tensor<float> fake_t = g_st_.forward(s, Mode::train, &rng_, &tape_st);
    Tensor<float> fake_s;
    if (cycle) {
        fake_s = g_ts_.forward(t, Mode::train, &rng_, &tape_ts);
    }

    auto ascend = [&](Network<float>& d, Adam<float>& opt, FisherState& state, const Tensor<float>& real,
                      const Tensor<float>& fake) {
        Tape<float> tr;
        Tape<float> tf;
        const Tensor<float> sr = d.forward(real, Mode::train, &rng_, &tr);
        const Tensor<float> sf = d.forward(fake, Mode::train, &rng_, &tf);
        const float omega = fisher_omega(sr.data(), sf.data());
        if (!std::isfinite(omega)) {
            throw NumericalError("non-finite discriminator score at step " + std::to_string(iteration_ + 1));
        }
        const float domega = adversarial_domega(omega, state);
        const auto g = fisher_score_gradients(sr.data(), sf.data(), -1.0f, -domega);
        Vector<float> grad = Vector<float>::Zero(d.num_params());
        d.backward(tr, Tensor<float>(sr.shape(), g.real), grad);
        d.backward(tf, Tensor<float>(sf.shape(), g.fake), grad);
        opt.step(d.parameters(), grad);
        state.lambda += state.rho * (static_cast<double>(omega) - 1.0);
    };
    ascend(d_t_, opt_d_t_, fisher_t_, t, fake_t);
    if (cycle) {
        ascend(d_s_, opt_d_s_, fisher_s_, s, fake_s);
    }

    // Generator descent: returns d(adversarial + style)/d(fake images).
    auto descend = [&](const Network<float>& d, const FisherState& state, const Tensor<float>& real,
                       const Tensor<float>& fake, bool style, double& phi, double& omega) {
        Tape<float> tr;
        Tape<float> tf;
        const Tensor<float> sr = d.forward(real, Mode::train, &rng_, &tr);
        const Tensor<float> sf = d.forward(fake, Mode::train, &rng_, &tf);
        phi = fisher_phi(sr.data(), sf.data());
        const float om = fisher_omega(sr.data(), sf.data());
        omega = om;
        const auto g = fisher_score_gradients(sr.data(), sf.data(), 1.0f, adversarial_domega(om, state));
        std::vector<Tensor<float>> style_grads;
        std::vector<FeatureSeed<float>> seeds;
        if (style) {
            std::vector<Tensor<float>> real_feats;
            std::vector<Tensor<float>> fake_feats;
            for (const int l : kStyleLayers) {
                real_feats.push_back(tr.features(l));
                fake_feats.push_back(tf.features(l));
            }
            r.style = style_loss<float>(real_feats, fake_feats);
            style_grads = style_loss_grad<float>(real_feats, fake_feats);
            const auto w = static_cast<float>(config_.style_weight);
            for (std::size_t i = 0; i < style_grads.size(); ++i) {
                style_grads[i].data() *= w;
                seeds.push_back({kStyleLayers[i], &style_grads[i]});
            }
        }
        Vector<float> unused = Vector<float>::Zero(d.num_params());
        return d.backward(tf, Tensor<float>(sf.shape(), g.fake), unused, seeds);
    };

    Vector<float> grad_st = Vector<float>::Zero(g_st_.num_params());
    Vector<float> grad_ts = Vector<float>::Zero(g_ts_.num_params());
    Tensor<float> grad_fake_t = descend(d_t_, fisher_t_, t, fake_t, config_.use_style, r.phi_T, r.omega_T);
    Tensor<float> grad_fake_s;
    if (cycle) {
        grad_fake_s = descend(d_s_, fisher_s_, s, fake_s, false, r.phi_S, r.omega_S);

        Tape<float> tape_rec_s;
        const Tensor<float> rec_s = g_ts_.forward(fake_t, Mode::train, &rng_, &tape_rec_s);
        r.cycle_S = cycle_l1(s, rec_s);
        grad_fake_t += g_ts_.backward(tape_rec_s, cycle_l1_grad(s, rec_s), grad_ts);

        Tape<float> tape_rec_t;
        const Tensor<float> rec_t = g_st_.forward(fake_s, Mode::train, &rng_, &tape_rec_t);
        r.cycle_T = cycle_l1(t, rec_t);
        grad_fake_s += g_st_.backward(tape_rec_t, cycle_l1_grad(t, rec_t), grad_st);
    }

    Tensor<float> grad_from_task;
    r.task = classifier_pass(fake_t, src, &grad_from_task);
    grad_from_task.data() *= static_cast<float>(config_.task_weight);
    grad_fake_t += grad_from_task;

    g_st_.backward(tape_st, grad_fake_t, grad_st);
    opt_g_st_.step(g_st_.parameters(), grad_st);
    if (cycle) {
        g_ts_.backward(tape_ts, grad_fake_s, grad_ts);
        opt_g_ts_.step(g_ts_.parameters(), grad_ts);
    }

    r.cycle = r.cycle_T + r.cycle_S;
    r.adv_T = adversarial_loss(r.phi_T, r.omega_T, fisher_t_, r.cycle_T);
    if (cycle) {
        r.adv_S = adversarial_loss(r.phi_S, r.omega_S, fisher_s_, r.cycle_S);
    }
    return r;
}

LossRecord Trainer::classifier_step() {
    LossRecord r;
    const Batch b = config_.mode == TrainMode::target_supervised
                        ? draw(data_.target, order_t_, cursor_t_, config_.augment, true)
                        : draw(data_.source, order_s_, cursor_s_, config_.augment, true);
    r.task = classifier_pass(b.images, b, nullptr);
    return r;
}

LossRecord Trainer::step() {
    ++iteration_;
    LossRecord r = config_.mode == TrainMode::adapt ? adapt_step() : classifier_step();
    r.lambda_T = fisher_t_.lambda;
    r.lambda_S = fisher_s_.lambda;
    return r;
}

double Trainer::delta_g_ts() const { return max_abs_change(g_ts_.parameters(), init_g_ts_); }
double Trainer::delta_d_s() const { return max_abs_change(d_s_.parameters(), init_d_s_); }

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.meta = {{"config", to_json(config_)},
               {"iteration", iteration_},
               {"lambda_T", fisher_t_.lambda},
               {"lambda_S", fisher_s_.lambda}};
    ck.add(kGenST, g_st_);
    ck.add(kGenTS, g_ts_);
    ck.add(kDiscT, d_t_);
    ck.add(kDiscS, d_s_);
    ck.add(kClassifier, cls_);
    return ck;
}

double lambda_linearity_gap(const LossRecord& r, double rho) {
    constexpr double h = 1.0;
    auto gap = [&](double phi, double omega, double lambda, double cycle) {
        const double up = adversarial_loss(phi, omega, FisherState{lambda + h, rho}, cycle);
        const double down = adversarial_loss(phi, omega, FisherState{lambda - h, rho}, cycle);
        return std::abs((up - down) / (2.0 * h) - (1.0 - omega));
    };
    return std::max(gap(r.phi_T, r.omega_T, r.lambda_T, r.cycle_T), gap(r.phi_S, r.omega_S, r.lambda_S, r.cycle_S));
}

std::vector<std::string> metrics_columns() {
    std::vector<std::string> cols{"step"};
    for (const auto& [name, value] : loss_fields(LossRecord{})) {
        cols.emplace_back(name);
    }
    for (const char* extra : {"lambda_linearity_gap", "delta_g_ts", "delta_d_s", "seconds", "checkpoint"}) {
        cols.emplace_back(extra);
    }
    return cols;
}

TrainResult train(const TrainConfig& config, TrainingData data, const fs::path& out_dir,
                  const SnapshotCallback& on_snapshot) {
    Trainer trainer(config, std::move(data));
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    TrainResult result;
    result.metrics = out_dir / "metrics.tsv";
    std::ofstream metrics(result.metrics);
    if (!metrics) {
        throw IoError("cannot write " + result.metrics.string());
    }
    const auto columns = metrics_columns();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        metrics << (i ? "\t" : "") << columns[i];
    }
    metrics << '\n' << std::flush;

    const auto start = std::chrono::steady_clock::now();
    fs::path latest_checkpoint;
    for (int i = 1; i <= config.steps; ++i) {
        const auto last_snapshot = [&] {
            metrics.flush();
            return "; last snapshot at step " + std::to_string(result.snapshots.empty() ? 0 : result.snapshots.back().step);
        };
        LossRecord r;
        try {
            r = trainer.step();
        } catch (const NumericalError& e) {
            throw NumericalError(e.what() + last_snapshot());
        }
        for (const auto& [name, value] : loss_fields(r)) {
            if (!std::isfinite(value)) {
                throw NumericalError("non-finite " + std::string(name) + " at step " + std::to_string(i) + last_snapshot());
            }
        }
        if (config.checkpoint_every > 0 && i % config.checkpoint_every == 0) {
            fs::create_directories(out_dir / "checkpoints");
            latest_checkpoint = out_dir / "checkpoints" / ("step_" + std::to_string(i) + ".ckpt");
            trainer.checkpoint().save(latest_checkpoint);
        }
        if (i % config.snapshot_every != 0 && i != config.steps) {
            continue;
        }
        TrainSnapshot snap;
        snap.step = i;
        snap.losses = r;
        snap.lambda_linearity_gap = lambda_linearity_gap(r, config.rho);
        snap.delta_g_ts = trainer.delta_g_ts();
        snap.delta_d_s = trainer.delta_d_s();
        snap.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        snap.checkpoint_ref = latest_checkpoint;
        metrics << snap.step;
        for (const auto& [name, value] : loss_fields(r)) {
            metrics << '\t' << format_double(value);
        }
        metrics << '\t' << format_double(snap.lambda_linearity_gap) << '\t' << format_double(snap.delta_g_ts) << '\t'
                << format_double(snap.delta_d_s) << '\t' << format_double(snap.seconds) << '\t'
                << snap.checkpoint_ref.string() << '\n'
                << std::flush;
        if (on_snapshot) {
            on_snapshot(snap);
        }
        result.snapshots.push_back(std::move(snap));
    }
    result.checkpoint = out_dir / "model.ckpt";
    trainer.checkpoint().save(result.checkpoint);
    return result;
}

std::vector<TrainSnapshot> read_metrics(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError(path.string() + ": empty metrics file");
    }
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, '\t')) {
            header.push_back(cell);
        }
    }
    if (header != metrics_columns()) {
        throw IoError(path.string() + ": unexpected metrics header");
    }
    std::vector<TrainSnapshot> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t pos = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', pos);
            cells.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
            if (tab == std::string::npos) {
                break;
            }
            pos = tab + 1;
        }
        if (cells.size() != header.size()) {
            throw IoError(path.string() + ": row has " + std::to_string(cells.size()) + " cells");
        }
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            row[header[i]] = cells[i];
        }
        auto num = [&](const char* key) { return std::stod(row.at(key)); };
        TrainSnapshot s;
        s.step = std::stoi(row.at("step"));
        LossRecord& r = s.losses;
        r.adv_T = num("adv_T");
        r.adv_S = num("adv_S");
        r.cycle = num("cycle");
        r.cycle_T = num("cycle_T");
        r.cycle_S = num("cycle_S");
        r.style = num("style");
        r.task = num("task");
        r.phi_T = num("phi_T");
        r.phi_S = num("phi_S");
        r.omega_T = num("omega_T");
        r.omega_S = num("omega_S");
        r.lambda_T = num("lambda_T");
        r.lambda_S = num("lambda_S");
        s.lambda_linearity_gap = num("lambda_linearity_gap");
        s.delta_g_ts = num("delta_g_ts");
        s.delta_d_s = num("delta_d_s");
        s.seconds = num("seconds");
        s.checkpoint_ref = row.at("checkpoint");
        out.push_back(std::move(s));
    }
    return out;
}

Tensor<float> transfer(const Checkpoint& checkpoint, const Tensor<float>& images, Direction direction) {
    const nlohmann::json config = checkpoint.meta.value("config", nlohmann::json::object());
    if (config.value("mode", std::string("adapt")) != "adapt") {
        throw ConfigError("checkpoint was trained without generators (mode " + config.value("mode", std::string()) + ")");
    }
    if (direction == Direction::t2s && !config.value("use_cycle", false)) {
        throw ConfigError("direction t2s is unavailable: the model was trained without a cycle");
    }
    const Network<float> gen = checkpoint.network<float>(direction == Direction::s2t ? kGenST : kGenTS);
    Tensor<float> out = gen.forward(images, Mode::eval);
    out.data() = out.data().cwiseMax(-1.0f).cwiseMin(1.0f);
    return out;
}

Image image_grid(const Tensor<float>& inputs, const Tensor<float>& outputs, int columns) {
    require_same_shape(inputs, outputs, "image_grid");
    if (columns < 1) {
        throw InvalidInput("image_grid: columns must be positive");
    }
    const Shape& s = inputs.shape();
    const int n = s.n;
    const int cols = std::max(1, std::min(n, columns));
    const int blocks = (n + cols - 1) / cols;
    Image grid = Image::constant(Shape{1, 2 * blocks * s.h, cols * s.w, s.c}, -1.0f);
    for (int i = 0; i < n; ++i) {
        const int by = (i / cols) * 2 * s.h;
        const int bx = (i % cols) * s.w;
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                for (int c = 0; c < s.c; ++c) {
                    grid(0, by + y, bx + x, c) = std::clamp(inputs(i, y, x, c), -1.0f, 1.0f);
                    grid(0, by + s.h + y, bx + x, c) = std::clamp(outputs(i, y, x, c), -1.0f, 1.0f);
                }
            }
        }
    }
    return grid;
}

std::vector<Prediction> predict(const Network<float>& classifier, const std::vector<SteerSample>& samples,
                                const SteerBins& bins, int batch) {
    if (batch < 1) {
        throw InvalidInput("predict: batch must be positive");
    }
    std::vector<Prediction> out;
    out.reserve(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch));
        std::vector<Tensor<float>> images;
        std::vector<int> commands;
        for (std::size_t i = begin; i < end; ++i) {
            if (!samples[i].has_label) {
                throw ConfigError("predict: sample without a label");
            }
            images.push_back(samples[i].image);
            commands.push_back(static_cast<int>(samples[i].command));
        }
        const RowMatrix<float> probs = branch_probabilities(classifier.forward(stack_batch(images), Mode::eval), commands);
        for (std::size_t i = begin; i < end; ++i) {
            Prediction p;
            p.command = samples[i].command;
            p.true_velocity = samples[i].angular_velocity;
            p.true_class = bins.discretize(p.true_velocity);
            const auto row = probs.row(static_cast<Eigen::Index>(i - begin));
            p.probs.assign(row.data(), row.data() + row.size());
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace sim2real

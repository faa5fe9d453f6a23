#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sim2real/layer_spec.hpp"
#include "sim2real/ops.hpp"
#include "sim2real/rng.hpp"

namespace sim2real {

// Where each layer's parameters live inside the flat parameter vector.
struct ParamSlot {
    std::int64_t offset = -1;
    int rows = 0;
    int cols = 0;

    [[nodiscard]] bool present() const { return offset >= 0; }
    [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(rows) * cols; }
};

struct LayerLayout {
    Shape in_shape;
    Shape linear_shape;  // after the conv/pool op
    Shape out_shape;     // after concat
    ConvGeometry geometry;
    ParamSlot weight;
    ParamSlot bias;
    ParamSlot gamma;
    ParamSlot beta;
    ParamSlot projection;  // residual 1×1 projection when channels differ
};

template <typename Scalar>
struct LayerRecord {
    Tensor<Scalar> normalized;  // norm output before the affine transform
    Tensor<Scalar> features;    // after normalization (+affine), before residual/activation
    Tensor<Scalar> pre_activation;
    Tensor<Scalar> dropout_mask;
    Tensor<Scalar> out;
    PixelNormCache<Scalar> pixel_cache;
    GroupNormCache<Scalar> group_cache;
    std::vector<std::int64_t> argmax;
};

template <typename Scalar>
struct Tape {
    Mode mode = Mode::eval;
    Tensor<Scalar> input;
    std::vector<LayerRecord<Scalar>> layers;

    [[nodiscard]] const Tensor<Scalar>& output() const { return layers.back().out; }
    // Normalized pre-activation features of layer `index` (read-only).
    [[nodiscard]] const Tensor<Scalar>& features(int index) const {
        return layers.at(static_cast<std::size_t>(index)).features;
    }
};

// Extra upstream gradient injected at a layer's `features` during backward.
template <typename Scalar>
struct FeatureSeed {
    int layer = 0;
    const Tensor<Scalar>* grad = nullptr;
};

template <typename Scalar>
class Network {
public:
    Network() = default;

    Network(Architecture arch, std::uint64_t init_seed) : arch_(std::move(arch)), init_seed_(init_seed) {
        plan();
        initialize();
    }

    [[nodiscard]] const Architecture& architecture() const { return arch_; }
    [[nodiscard]] const std::vector<LayerSpec>& layers() const { return arch_.layers; }
    [[nodiscard]] const std::vector<LayerLayout>& layouts() const { return layouts_; }
    [[nodiscard]] std::uint64_t init_seed() const { return init_seed_; }
    [[nodiscard]] std::int64_t num_params() const { return params_.size(); }

    Vector<Scalar>& parameters() { return params_; }
    [[nodiscard]] const Vector<Scalar>& parameters() const { return params_; }

    [[nodiscard]] Shape input_shape(int batch) const {
        return Shape{batch, arch_.input.h, arch_.input.w, arch_.input.c};
    }
    [[nodiscard]] Shape output_shape(int batch) const {
        Shape s = layouts_.back().out_shape;
        s.n = batch;
        return s;
    }

    [[nodiscard]] int layer_index(std::string_view name) const {
        for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
            if (arch_.layers[i].name == name) {
                return static_cast<int>(i);
            }
        }
        throw ConfigError("no layer named " + std::string(name));
    }

    // Train mode draws dropout masks and additive noise from `rng`; eval mode
    // disables both and ignores `rng`.
    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, std::mt19937_64* rng = nullptr,
                           Tape<Scalar>* tape = nullptr) const {
        Tape<Scalar> local;
        Tape<Scalar>& t = tape != nullptr ? *tape : local;
        run_forward(x, mode, rng, t);
        return t.layers.back().out;
    }

    // Reverse pass. Accumulates dLoss/dθ into `param_grad` (sized num_params)
    // and returns dLoss/dInput.
    Tensor<Scalar> backward(const Tape<Scalar>& tape, const Tensor<Scalar>& grad_output,
                            Vector<Scalar>& param_grad,
                            std::span<const FeatureSeed<Scalar>> seeds = {}) const;

private:
    void plan();
    void initialize();
    void run_forward(const Tensor<Scalar>& x, Mode mode, std::mt19937_64* rng, Tape<Scalar>& t) const;

    [[nodiscard]] int resolve(int ref, int self) const { return ref == kPrevious ? self - 1 : ref; }

    [[nodiscard]] const Shape& shape_of(int ref) const {
        return ref == kNetworkInput ? arch_.input : layouts_[static_cast<std::size_t>(ref)].out_shape;
    }

    [[nodiscard]] Eigen::Map<const RowMatrix<Scalar>> view(const ParamSlot& s) const {
        return Eigen::Map<const RowMatrix<Scalar>>(params_.data() + s.offset, s.rows, s.cols);
    }
    static Eigen::Map<RowMatrix<Scalar>> view(Vector<Scalar>& v, const ParamSlot& s) {
        return Eigen::Map<RowMatrix<Scalar>>(v.data() + s.offset, s.rows, s.cols);
    }

    Architecture arch_;
    std::uint64_t init_seed_ = 0;
    std::vector<LayerLayout> layouts_;
    Vector<Scalar> params_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
void Network<Scalar>::plan() {
    layouts_.clear();
    std::int64_t offset = 0;
    auto take = [&offset](int rows, int cols) {
        ParamSlot s{offset, rows, cols};
        offset += s.size();
        return s;
    };
    const int count = static_cast<int>(arch_.layers.size());
    for (int i = 0; i < count; ++i) {
        const LayerSpec& L = arch_.layers[static_cast<std::size_t>(i)];
        LayerLayout lay;
        const int in_ref = resolve(L.input_from, i);
        if (in_ref >= i || in_ref < kNetworkInput) {
            throw ConfigError(L.name + ": input must reference an earlier layer");
        }
        lay.in_shape = shape_of(in_ref);
        const Shape& in = lay.in_shape;
        lay.geometry = ConvGeometry{L.filter, L.stride, L.dilation, L.pad_before, L.pad_after};
        Shape z{1, 0, 0, L.channels};
        switch (L.kind) {
            case LayerKind::conv: {
                z.h = lay.geometry.out_extent(in.h);
                z.w = lay.geometry.out_extent(in.w);
                lay.weight = take(L.filter * L.filter * in.c, L.channels);
                lay.bias = take(1, L.channels);
                break;
            }
            case LayerKind::fully_connected: {
                if (in.h != 1 || in.w != 1) {
                    throw ConfigError(L.name + ": fully connected layer expects a 1x1 input map");
                }
                z.h = 1;
                z.w = 1;
                lay.geometry = ConvGeometry{1, 1, 1, 0, 0};
                lay.weight = take(in.c, L.channels);
                lay.bias = take(1, L.channels);
                break;
            }
            case LayerKind::deconv: {
                // The transposed conv inverts a conv with the same geometry that
                // maps the (stride×) upsampled grid back onto the input grid.
                z.h = in.h * L.stride;
                z.w = in.w * L.stride;
                if (lay.geometry.out_extent(z.h) != in.h || lay.geometry.out_extent(z.w) != in.w) {
                    throw ConfigError(L.name + ": deconv padding does not invert to the input grid");
                }
                lay.weight = take(in.c, L.filter * L.filter * L.channels);
                lay.bias = take(1, L.channels);
                break;
            }
            case LayerKind::maxpool:
                z = Shape{1, in.h / 2, in.w / 2, in.c};
                break;
            case LayerKind::global_avg_pool:
                z = Shape{1, 1, 1, in.c};
                break;
            case LayerKind::patch_pool:
                if (L.patch_grid <= 0 || in.h % L.patch_grid != 0 || in.w % L.patch_grid != 0) {
                    throw ConfigError(L.name + ": " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                                      " score map cannot be split into a " + std::to_string(L.patch_grid) +
                                      "x" + std::to_string(L.patch_grid) + " patch grid");
                }
                z = Shape{1, 1, 1, L.patch_grid * L.patch_grid * in.c};
                break;
        }
        if (z.h <= 0 || z.w <= 0) {
            throw ConfigError(L.name + ": input " + in.str() + " too small for the layer window");
        }
        lay.linear_shape = z;
        if (L.normalization == Normalization::instance || L.normalization == Normalization::group) {
            lay.gamma = take(1, z.c);
            lay.beta = take(1, z.c);
        }
        if (L.residual) {
            const int src = resolve(L.residual_from, i);
            const Shape& rs = shape_of(src);
            if (rs.h != z.h || rs.w != z.w) {
                throw ConfigError(L.name + ": residual source has a different spatial size");
            }
            if (rs.c != z.c) {
                lay.projection = take(rs.c, z.c);
            }
        }
        lay.out_shape = z;
        if (L.concat_from != kNoSource) {
            const Shape& cs = shape_of(resolve(L.concat_from, i));
            if (cs.h != z.h || cs.w != z.w) {
                throw ConfigError(L.name + ": concat source " + cs.str() + " does not match " + z.str());
            }
            lay.out_shape.c += cs.c;
        }
        layouts_.push_back(lay);
    }
    params_ = Vector<Scalar>::Zero(offset);
}

template <typename Scalar>
void Network<Scalar>::initialize() {
    std::mt19937_64 rng(init_seed_);
    for (const LayerLayout& lay : layouts_) {
        for (const ParamSlot* slot : {&lay.weight, &lay.projection}) {
            if (slot->present()) {
                for (std::int64_t k = 0; k < slot->size(); ++k) {
                    params_[slot->offset + k] = static_cast<Scalar>(truncated_normal(rng, 0.02));
                }
            }
        }
        if (lay.gamma.present()) {
            params_.segment(lay.gamma.offset, lay.gamma.size()).setOnes();
        }
    }
}

template <typename Scalar>
void Network<Scalar>::run_forward(const Tensor<Scalar>& x, Mode mode, std::mt19937_64* rng,
                                  Tape<Scalar>& t) const {
    const Shape& expect = arch_.input;
    if (x.shape().h != expect.h || x.shape().w != expect.w || x.shape().c != expect.c || x.shape().n <= 0) {
        const std::string first = arch_.layers.empty() ? "input" : arch_.layers.front().name;
        throw DimensionError("layer " + first + ": expected input (B," + std::to_string(expect.h) + "," +
                             std::to_string(expect.w) + "," + std::to_string(expect.c) + "), got " +
                             x.shape().str());
    }
    if (mode == Mode::train && rng == nullptr) {
        for (const LayerSpec& L : arch_.layers) {
            if (L.dropout_p > 0.0 || L.noise_sigma > 0.0) {
                throw ConfigError("train-mode forward needs an RNG for dropout/noise");
            }
        }
    }
    const int batch = x.shape().n;
    t.mode = mode;
    t.input = x;
    t.layers.assign(arch_.layers.size(), LayerRecord<Scalar>{});
    auto source = [&](int ref) -> const Tensor<Scalar>& {
        return ref == kNetworkInput ? t.input : t.layers[static_cast<std::size_t>(ref)].out;
    };

    const int count = static_cast<int>(arch_.layers.size());
    for (int i = 0; i < count; ++i) {
        const LayerSpec& L = arch_.layers[static_cast<std::size_t>(i)];
        const LayerLayout& lay = layouts_[static_cast<std::size_t>(i)];
        LayerRecord<Scalar>& rec = t.layers[static_cast<std::size_t>(i)];
        const Tensor<Scalar>& in = source(resolve(L.input_from, i));
        Shape zs = lay.linear_shape;
        zs.n = batch;

        Tensor<Scalar> z;
        switch (L.kind) {
            case LayerKind::conv:
            case LayerKind::fully_connected: {
                z = Tensor<Scalar>(zs);
                const auto w = view(lay.weight);
                const Eigen::Index rows = zs.positions();
                const Eigen::Index tile = conv_tile_rows(w.rows(), sizeof(Scalar));
                RowMatrix<Scalar> cols;
                auto zm = z.matrix();
                for (Eigen::Index r = 0; r < rows; r += tile) {
                    const Eigen::Index end = std::min(rows, r + tile);
                    im2col_rows(in, lay.geometry, r, end, cols);
                    zm.middleRows(r, end - r).noalias() = cols * w;
                }
                zm.rowwise() += view(lay.bias).row(0);
                break;
            }
            case LayerKind::deconv: {
                z = Tensor<Scalar>(zs);
                const auto w = view(lay.weight);
                const auto xm = in.matrix();
                const Eigen::Index rows = xm.rows();
                const Eigen::Index tile = conv_tile_rows(w.cols(), sizeof(Scalar));
                RowMatrix<Scalar> cols;
                for (Eigen::Index r = 0; r < rows; r += tile) {
                    const Eigen::Index end = std::min(rows, r + tile);
                    cols.noalias() = xm.middleRows(r, end - r) * w;
                    col2im_rows(cols, lay.geometry, r, z);
                }
                z.matrix().rowwise() += view(lay.bias).row(0);
                break;
            }
            case LayerKind::maxpool:
                z = maxpool2_forward(in, rec.argmax);
                break;
            case LayerKind::global_avg_pool:
                z = global_avg_pool_forward(in);
                break;
            case LayerKind::patch_pool:
                z = patch_pool_forward(in, L.patch_grid);
                break;
        }

        switch (L.normalization) {
            case Normalization::pixel:
                rec.normalized = pixel_norm_forward(z, rec.pixel_cache);
                rec.features = rec.normalized;
                break;
            case Normalization::instance:
            case Normalization::group: {
                const int groups = L.normalization == Normalization::instance ? zs.c : L.groups;
                rec.normalized = group_norm_forward(z, groups, rec.group_cache);
                rec.features = Tensor<Scalar>(zs);
                rec.features.matrix() = (rec.normalized.matrix().array().rowwise() *
                                         view(lay.gamma).row(0).array())
                                            .matrix();
                rec.features.matrix().rowwise() += view(lay.beta).row(0);
                break;
            }
            case Normalization::none:
                rec.features = std::move(z);
                break;
        }

        rec.pre_activation = rec.features;
        if (L.residual) {
            const Tensor<Scalar>& rsrc = source(resolve(L.residual_from, i));
            if (lay.projection.present()) {
                rec.pre_activation.matrix().noalias() += rsrc.matrix() * view(lay.projection);
            } else {
                rec.pre_activation.data() += rsrc.data();
            }
        }

        Tensor<Scalar> act = rec.pre_activation;
        if (L.activation == Activation::relu) {
            act.data() = act.data().cwiseMax(Scalar(0));
        } else if (L.activation == Activation::leaky_relu) {
            act.data() = act.data().unaryExpr(
                [](Scalar v) { return v > Scalar(0) ? v : static_cast<Scalar>(kLeakySlope) * v; });
        }

        if (mode == Mode::train && L.dropout_p > 0.0) {
            std::bernoulli_distribution keep(1.0 - L.dropout_p);
            const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - L.dropout_p));
            rec.dropout_mask = Tensor<Scalar>(act.shape());
            for (std::int64_t k = 0; k < act.size(); ++k) {
                rec.dropout_mask.data()[k] = keep(*rng) ? scale : Scalar(0);
            }
            act.data().array() *= rec.dropout_mask.data().array();
        }
        if (mode == Mode::train && L.noise_sigma > 0.0) {
            std::normal_distribution<double> noise(0.0, L.noise_sigma);
            for (std::int64_t k = 0; k < act.size(); ++k) {
                act.data()[k] += static_cast<Scalar>(noise(*rng));
            }
        }

        if (L.concat_from != kNoSource) {
            rec.out = concat_channels(act, source(resolve(L.concat_from, i)));
        } else {
            rec.out = std::move(act);
        }
        // Pixel norm backward reads `features`; the duplicate is not needed.
        if (L.normalization == Normalization::pixel) {
            rec.normalized = Tensor<Scalar>();
        }
    }
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::backward(const Tape<Scalar>& tape, const Tensor<Scalar>& grad_output,
                                         Vector<Scalar>& param_grad,
                                         std::span<const FeatureSeed<Scalar>> seeds) const {
    if (param_grad.size() != params_.size()) {
        param_grad = Vector<Scalar>::Zero(params_.size());
    }
    const int count = static_cast<int>(arch_.layers.size());
    if (static_cast<int>(tape.layers.size()) != count) {
        throw DimensionError("backward: tape does not belong to this network");
    }
    require_same_shape(grad_output, tape.output(), "backward output gradient");

    std::vector<Tensor<Scalar>> grads(static_cast<std::size_t>(count));
    Tensor<Scalar> grad_input(tape.input.shape());
    auto accumulate = [&](int ref, const Tensor<Scalar>& g) {
        Tensor<Scalar>& dst = ref == kNetworkInput ? grad_input : grads[static_cast<std::size_t>(ref)];
        if (dst.empty()) {
            dst = g;
        } else {
            dst.data() += g.data();
        }
    };
    auto source = [&](int ref) -> const Tensor<Scalar>& {
        return ref == kNetworkInput ? tape.input : tape.layers[static_cast<std::size_t>(ref)].out;
    };
    grads.back() = grad_output;

    for (int i = count - 1; i >= 0; --i) {
        const LayerSpec& L = arch_.layers[static_cast<std::size_t>(i)];
        const LayerLayout& lay = layouts_[static_cast<std::size_t>(i)];
        const LayerRecord<Scalar>& rec = tape.layers[static_cast<std::size_t>(i)];
        Tensor<Scalar> g = std::move(grads[static_cast<std::size_t>(i)]);
        bool have_grad = !g.empty();
        for (const auto& seed : seeds) {
            if (seed.layer == i) {
                have_grad = true;
            }
        }
        if (!have_grad) {
            continue;
        }
        const Shape act_shape = rec.pre_activation.shape();
        if (g.empty()) {
            g = Tensor<Scalar>(rec.out.shape());
        }

        if (L.concat_from != kNoSource) {
            const int own = act_shape.c;
            const Shape& cs = source(resolve(L.concat_from, i)).shape();
            Tensor<Scalar> gsrc(cs);
            gsrc.matrix() = g.matrix().rightCols(cs.c);
            accumulate(resolve(L.concat_from, i), gsrc);
            Tensor<Scalar> gown(act_shape);
            gown.matrix() = g.matrix().leftCols(own);
            g = std::move(gown);
        }

        if (!rec.dropout_mask.empty()) {
            g.data().array() *= rec.dropout_mask.data().array();
        }
        if (L.activation == Activation::relu) {
            g.data() = (rec.pre_activation.data().array() > Scalar(0)).select(g.data(), Scalar(0));
        } else if (L.activation == Activation::leaky_relu) {
            g.data() = (rec.pre_activation.data().array() > Scalar(0))
                           .select(g.data(), g.data() * static_cast<Scalar>(kLeakySlope));
        }

        if (L.residual) {
            const int src = resolve(L.residual_from, i);
            if (lay.projection.present()) {
                const Tensor<Scalar>& x = source(src);
                view(param_grad, lay.projection).noalias() += x.matrix().transpose() * g.matrix();
                Tensor<Scalar> gs(x.shape());
                gs.matrix().noalias() = g.matrix() * view(lay.projection).transpose();
                accumulate(src, gs);
            } else {
                accumulate(src, g);
            }
        }

        for (const auto& seed : seeds) {
            if (seed.layer == i) {
                require_same_shape(*seed.grad, g, L.name + " feature seed");
                g.data() += seed.grad->data();
            }
        }

        Tensor<Scalar> gz;
        switch (L.normalization) {
            case Normalization::pixel: {
                // y is recovered from the stored features (identical for pixel norm).
                gz = pixel_norm_backward(rec.features, g, rec.pixel_cache);
                break;
            }
            case Normalization::instance:
            case Normalization::group: {
                view(param_grad, lay.gamma).row(0) +=
                    (g.matrix().array() * rec.normalized.matrix().array()).colwise().sum().matrix();
                view(param_grad, lay.beta).row(0) += g.matrix().colwise().sum();
                g.matrix() = (g.matrix().array().rowwise() * view(lay.gamma).row(0).array()).matrix();
                gz = group_norm_backward(rec.normalized, g, rec.group_cache);
                break;
            }
            case Normalization::none:
                gz = std::move(g);
                break;
        }

        const int in_ref = resolve(L.input_from, i);
        const Tensor<Scalar>& x = source(in_ref);
        switch (L.kind) {
            case LayerKind::conv:
            case LayerKind::fully_connected: {
                const auto w = view(lay.weight);
                auto dw = view(param_grad, lay.weight);
                const auto gm = gz.matrix();
                const Eigen::Index rows = gm.rows();
                const Eigen::Index tile = conv_tile_rows(w.rows(), sizeof(Scalar));
                Tensor<Scalar> dx(x.shape());
                RowMatrix<Scalar> cols;
                RowMatrix<Scalar> dcols;
                for (Eigen::Index r = 0; r < rows; r += tile) {
                    const Eigen::Index end = std::min(rows, r + tile);
                    im2col_rows(x, lay.geometry, r, end, cols);
                    dw.noalias() += cols.transpose() * gm.middleRows(r, end - r);
                    dcols.noalias() = gm.middleRows(r, end - r) * w.transpose();
                    col2im_rows(dcols, lay.geometry, r, dx);
                }
                view(param_grad, lay.bias).row(0) += gm.colwise().sum();
                accumulate(in_ref, dx);
                break;
            }
            case LayerKind::deconv: {
                const auto w = view(lay.weight);
                auto dw = view(param_grad, lay.weight);
                const auto xm = x.matrix();
                const Eigen::Index rows = xm.rows();
                const Eigen::Index tile = conv_tile_rows(w.cols(), sizeof(Scalar));
                Tensor<Scalar> dx(x.shape());
                RowMatrix<Scalar> dcols;
                for (Eigen::Index r = 0; r < rows; r += tile) {
                    const Eigen::Index end = std::min(rows, r + tile);
                    im2col_rows(gz, lay.geometry, r, end, dcols);
                    dw.noalias() += xm.middleRows(r, end - r).transpose() * dcols;
                    dx.matrix().middleRows(r, end - r).noalias() = dcols * w.transpose();
                }
                view(param_grad, lay.bias).row(0) += gz.matrix().colwise().sum();
                accumulate(in_ref, dx);
                break;
            }
            case LayerKind::maxpool:
                accumulate(in_ref, maxpool2_backward(x.shape(), gz, rec.argmax));
                break;
            case LayerKind::global_avg_pool:
                accumulate(in_ref, global_avg_pool_backward(x.shape(), gz));
                break;
            case LayerKind::patch_pool:
                accumulate(in_ref, patch_pool_backward(x.shape(), gz, L.patch_grid));
                break;
        }
    }
    return grad_input;
}

}  // namespace sim2real

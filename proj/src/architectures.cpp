#include "sim2real/architectures.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

namespace sim2real {
namespace {

void check_width(int width_divisor) {
    if (width_divisor < 1 || width_divisor > 16 || !std::has_single_bit(static_cast<unsigned>(width_divisor))) {
        throw ConfigError("width divisor must be a power of two in [1, 16], got " + std::to_string(width_divisor));
    }
}

// Tracks the running spatial extent so stride-2 layers get TF-style "same"
// padding (output = ceil(input / stride)).
class StackBuilder {
public:
    StackBuilder(int size, int width_divisor) : extent_(size), divisor_(width_divisor) {}

    [[nodiscard]] int hidden(int channels) const { return std::max(1, channels / divisor_); }
    [[nodiscard]] int last() const { return static_cast<int>(layers_.size()) - 1; }
    [[nodiscard]] int extent() const { return extent_; }

    int conv(std::string name, int filter, int stride, int channels, int dilation, Activation act,
             Normalization norm) {
        LayerSpec L;
        L.kind = LayerKind::conv;
        L.filter = filter;
        L.stride = stride;
        L.channels = channels;
        L.dilation = dilation;
        set_same_padding(L, extent_);
        L.activation = act;
        L.normalization = norm;
        if (norm == Normalization::group) {
            L.groups = std::min(kMaxGroups, channels);
        }
        L.name = std::move(name);
        extent_ = (extent_ + stride - 1) / stride;
        return push(std::move(L));
    }

    int deconv(std::string name, int filter, int stride, int channels, Activation act, Normalization norm) {
        LayerSpec L;
        L.kind = LayerKind::deconv;
        L.filter = filter;
        L.stride = stride;
        L.channels = channels;
        // Padding of the forward conv that maps the upsampled grid back to this one.
        set_same_padding(L, extent_ * stride);
        L.activation = act;
        L.normalization = norm;
        L.name = std::move(name);
        extent_ *= stride;
        return push(std::move(L));
    }

    int maxpool(std::string name) {
        LayerSpec L;
        L.kind = LayerKind::maxpool;
        L.filter = 2;
        L.stride = 2;
        L.name = std::move(name);
        extent_ /= 2;
        return push(std::move(L));
    }

    // Two conv rows whose sum with the block input goes through the activation.
    int residual_block(const std::string& name, int channels, int dilation_a, int dilation_b, Activation act,
                       Normalization norm) {
        const int block_input = last();
        conv(name + "a", 3, 1, channels, dilation_a, act, norm);
        const int b = conv(name + "b", 3, 1, channels, dilation_b, act, norm);
        layers_[static_cast<std::size_t>(b)].residual = true;
        layers_[static_cast<std::size_t>(b)].residual_from = block_input;
        return b;
    }

    int push(LayerSpec L) {
        layers_.push_back(std::move(L));
        return last();
    }

    LayerSpec& at(int i) { return layers_.at(static_cast<std::size_t>(i)); }

    Architecture finish(BuildArgs args, int size) {
        return Architecture{args, Shape{1, size, size, 3}, std::move(layers_)};
    }

private:
    static void set_same_padding(LayerSpec& L, int in) {
        const int span = L.dilation * (L.filter - 1) + 1;
        const int out = (in + L.stride - 1) / L.stride;
        const int total = std::max((out - 1) * L.stride + span - in, 0);
        L.pad_before = total / 2;
        L.pad_after = total - total / 2;
    }

    int extent_;
    int divisor_;
    std::vector<LayerSpec> layers_;
};

constexpr auto kRelu = Activation::relu;
constexpr auto kPixel = Normalization::pixel;
constexpr auto kGroup = Normalization::group;

}  // namespace

Architecture drn_generator_architecture(int size, int width_divisor) {
    if (size != 64 && size != 96) {
        throw ConfigError("DRN generator supports sizes 64 and 96, got " + std::to_string(size));
    }
    check_width(width_divisor);
    StackBuilder b(size, width_divisor);
    b.conv("L1", 7, 1, b.hidden(64), 1, kRelu, kPixel);
    b.residual_block("L2", b.hidden(64), 1, 1, kRelu, kPixel);
    b.maxpool("L3");
    b.residual_block("L4", b.hidden(128), 1, 1, kRelu, kPixel);
    b.residual_block("L5", b.hidden(128), 1, 1, kRelu, kPixel);
    b.residual_block("L6", b.hidden(256), 1, 2, kRelu, kPixel);
    b.conv("L7", 3, 1, b.hidden(128), 1, kRelu, kPixel);
    b.conv("L8", 3, 1, b.hidden(128), 1, kRelu, kPixel);
    b.deconv("L9", 3, 2, b.hidden(64), kRelu, kPixel);
    b.deconv("L10", 7, 1, 3, Activation::none, Normalization::none);
    return b.finish(BuildArgs{NetFamily::drn_generator, size, width_divisor, 0}, size);
}

Architecture unet_generator_architecture(int size, int width_divisor) {
    if (size < 32 || size > 256 || !std::has_single_bit(static_cast<unsigned>(size))) {
        throw ConfigError("UNET size must be a power-of-two multiple of the bottleneck in [32, 256], got " +
                          std::to_string(size));
    }
    check_width(width_divisor);
    // Full depth (1×1 bottleneck) at 256; smaller inputs stop at a 2×2 bottleneck.
    const int levels = size == 256 ? 8 : std::bit_width(static_cast<unsigned>(size)) - 2;
    constexpr std::array<int, 8> kEncoder = {64, 128, 256, 512, 512, 512, 512, 512};
    constexpr std::array<int, 8> kDecoder = {512, 512, 512, 512, 256, 128, 128, 3};

    StackBuilder b(size, width_divisor);
    std::vector<int> encoder;
    for (int i = 0; i < levels; ++i) {
        encoder.push_back(b.conv("enc" + std::to_string(i + 1), 4, 2, b.hidden(kEncoder[static_cast<std::size_t>(i)]),
                                 1, kRelu, kPixel));
    }
    for (int j = 0; j < levels; ++j) {
        const int channels = kDecoder[static_cast<std::size_t>(8 - levels + j)];
        const bool last = j == levels - 1;
        const int d = b.deconv("dec" + std::to_string(j + 1), 4, 2, last ? channels : b.hidden(channels),
                               last ? Activation::none : kRelu, last ? Normalization::none : kPixel);
        if (!last) {
            b.at(d).concat_from = encoder[static_cast<std::size_t>(levels - 2 - j)];
        }
    }
    return b.finish(BuildArgs{NetFamily::unet_generator, size, width_divisor, 0}, size);
}

Architecture discriminator_architecture(int size, int n_patches, int width_divisor) {
    check_width(width_divisor);
    const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(n_patches, 0)))));
    if (n_patches <= 0 || grid * grid != n_patches) {
        throw ConfigError("discriminator patch count must be a perfect square, got " + std::to_string(n_patches));
    }
    if (size < 32 || size % 16 != 0) {
        throw ConfigError("discriminator size must be a multiple of 16 (>= 32), got " + std::to_string(size));
    }
    const int score_extent = size / 16;
    if (score_extent % grid != 0) {
        throw ConfigError("a " + std::to_string(score_extent) + "x" + std::to_string(score_extent) +
                          " score map cannot be split into " + std::to_string(n_patches) + " patches");
    }
    StackBuilder b(size, width_divisor);
    const std::array<int, 4> channels = {64, 128, 256, 512};
    for (int i = 0; i < 4; ++i) {
        const int l = b.conv("L" + std::to_string(i + 1), 4, i == 0 ? 1 : 2, b.hidden(channels[static_cast<std::size_t>(i)]),
                             1, Activation::leaky_relu, Normalization::instance);
        b.at(l).dropout_p = 0.5;
        b.at(l).noise_sigma = 0.2;
    }
    b.conv("L5", 4, 2, b.hidden(1024), 1, Activation::leaky_relu, Normalization::instance);
    b.conv("L6", 1, 1, 1, 1, Activation::none, Normalization::none);
    LayerSpec pool;
    pool.kind = LayerKind::patch_pool;
    pool.patch_grid = grid;
    pool.name = "patches";
    b.push(pool);
    return b.finish(BuildArgs{NetFamily::discriminator, size, width_divisor, n_patches}, size);
}

Architecture classifier_architecture(int size, int width_divisor) {
    if (size != 64 && size != 96) {
        throw ConfigError("classifier supports sizes 64 and 96, got " + std::to_string(size));
    }
    check_width(width_divisor);
    StackBuilder b(size, width_divisor);
    b.conv("L1", 7, 2, b.hidden(64), 1, kRelu, kGroup);
    b.residual_block("L2", b.hidden(64), 1, 1, kRelu, kGroup);
    b.residual_block("L3", b.hidden(64), 1, 1, kRelu, kGroup);
    b.maxpool("pool");
    b.residual_block("L4", b.hidden(128), 1, 1, kRelu, kGroup);
    b.residual_block("L5", b.hidden(128), 1, 1, kRelu, kGroup);
    b.residual_block("L6", b.hidden(256), 1, 2, kRelu, kGroup);
    b.residual_block("L7", b.hidden(256), 2, 2, kRelu, kGroup);
    b.residual_block("L8", b.hidden(512), 2, 4, kRelu, kGroup);
    b.residual_block("L9", b.hidden(512), 4, 4, kRelu, kGroup);
    b.conv("L10", 3, 1, b.hidden(512), 2, kRelu, kGroup);
    b.conv("L11", 3, 1, b.hidden(512), 2, kRelu, kGroup);
    b.conv("L12", 3, 1, b.hidden(512), 1, kRelu, kGroup);
    b.conv("L13", 3, 1, b.hidden(512), 1, kRelu, kGroup);
    LayerSpec gap;
    gap.kind = LayerKind::global_avg_pool;
    gap.name = "L14";
    b.push(gap);
    // One 5-way head per command; head k owns logits [5k, 5k+5).
    LayerSpec fc;
    fc.kind = LayerKind::fully_connected;
    fc.channels = kCommands * kSteerClasses;
    fc.name = "L15";
    b.push(fc);
    return b.finish(BuildArgs{NetFamily::classifier, size, width_divisor, 0}, size);
}

Architecture make_architecture(const BuildArgs& args) {
    switch (args.family) {
        case NetFamily::drn_generator:
            return drn_generator_architecture(args.size, args.width_divisor);
        case NetFamily::unet_generator:
            return unet_generator_architecture(args.size, args.width_divisor);
        case NetFamily::discriminator:
            return discriminator_architecture(args.size, args.n_patches, args.width_divisor);
        case NetFamily::classifier:
            return classifier_architecture(args.size, args.width_divisor);
    }
    throw ConfigError("unknown network family");
}

int unet_skip_count(const Architecture& arch) {
    return static_cast<int>(std::count_if(arch.layers.begin(), arch.layers.end(),
                                          [](const LayerSpec& L) { return L.concat_from != kNoSource; }));
}

}  // namespace sim2real

#pragma once

// The four network families: DRN generator, UNET generator, patch
// discriminator and the command-branched dilated classifier.

#include <cstdint>

#include "sim2real/network.hpp"

namespace sim2real {

inline constexpr int kSteerClasses = 5;
inline constexpr int kCommands = 3;
inline constexpr int kMaxGroups = 32;

// Discriminator layers whose normalized features feed the style loss
// (second to fourth hidden layers).
inline constexpr int kStyleLayers[] = {1, 2, 3};

Architecture drn_generator_architecture(int size, int width_divisor = 1);
Architecture unet_generator_architecture(int size, int width_divisor = 1);
Architecture discriminator_architecture(int size, int n_patches = 4, int width_divisor = 1);
Architecture classifier_architecture(int size, int width_divisor = 1);

Architecture make_architecture(const BuildArgs& args);

// Number of skip concatenations in a UNET architecture.
int unet_skip_count(const Architecture& arch);

template <typename Scalar>
Network<Scalar> build_drn_generator(int size, std::uint64_t init_seed, int width_divisor = 1) {
    return Network<Scalar>(drn_generator_architecture(size, width_divisor), init_seed);
}

template <typename Scalar>
Network<Scalar> build_unet_generator(int size, std::uint64_t init_seed, int width_divisor = 1) {
    return Network<Scalar>(unet_generator_architecture(size, width_divisor), init_seed);
}

template <typename Scalar>
Network<Scalar> build_discriminator(int size, int n_patches, std::uint64_t init_seed, int width_divisor = 1) {
    return Network<Scalar>(discriminator_architecture(size, n_patches, width_divisor), init_seed);
}

template <typename Scalar>
Network<Scalar> build_classifier(int size, std::uint64_t init_seed, int width_divisor = 1) {
    return Network<Scalar>(classifier_architecture(size, width_divisor), init_seed);
}

template <typename Scalar>
Network<Scalar> build_network(const BuildArgs& args, std::uint64_t init_seed) {
    return Network<Scalar>(make_architecture(args), init_seed);
}

// Softmax over the 5 logits of the selected command branch, one row per sample.
template <typename Scalar>
RowMatrix<Scalar> branch_probabilities(const Tensor<Scalar>& logits, std::span<const int> commands) {
    const int batch = logits.shape().n;
    if (static_cast<int>(commands.size()) != batch || logits.shape().c != kCommands * kSteerClasses) {
        throw DimensionError("branch_probabilities: expected one command per row and 15 logits");
    }
    RowMatrix<Scalar> probs(batch, kSteerClasses);
    for (int b = 0; b < batch; ++b) {
        const int cmd = commands[static_cast<std::size_t>(b)];
        if (cmd < 0 || cmd >= kCommands) {
            throw InvalidInput("command index out of range");
        }
        const auto row = logits.matrix().row(b).segment(cmd * kSteerClasses, kSteerClasses);
        const Scalar mx = row.maxCoeff();
        const auto e = (row.array() - mx).exp();
        probs.row(b) = (e / e.sum()).matrix();
    }
    return probs;
}

}  // namespace sim2real

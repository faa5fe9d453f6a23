#pragma once

// Procedural road scenes. A scene's geometry (horizon, road centerline and
// width, intersection band, lane dashes) depends only on (seed, curvature,
// intersection); the domain only changes how the regions are painted:
//
//   source  flat colors, sharp edges
//   target  value-noise textures, a light road on dark soil, global hue
//           rotation and per-pixel noise
//
// Steering label: 1.4·curvature rad/s, except turn commands at an
// intersection, which get +0.9 (left) or −0.9 (right). Positive is a left turn.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sim2real/steering.hpp"
#include "sim2real/tensor.hpp"

namespace sim2real {

// One image per tensor: shape (1, size, size, 3), values in [−1, 1].
using Image = Tensor<float>;

enum class Intersection { none, t_junction, cross };
enum class Domain { source, target };

std::string_view to_string(Intersection i);
std::string_view to_string(Domain d);
Intersection parse_intersection(std::string_view s);
Domain parse_domain(std::string_view s);

inline constexpr double kCurvatureGain = 1.4;
inline constexpr double kTurnVelocity = 0.9;

struct SceneSpec {
    std::uint64_t seed = 0;
    int image_size = 64;
    double road_curvature = 0.0;
    Intersection intersection = Intersection::none;
    Command command = Command::straight;
    Domain domain = Domain::source;

    void validate() const;
};

struct SteerSample {
    Image image;
    double angular_velocity = 0.0;
    Command command = Command::straight;
    Domain domain = Domain::source;
    bool has_label = false;
};

double steering_label(const SceneSpec& spec);

// Mask of road pixels (row-major, size×size), identical for both domains.
std::vector<std::uint8_t> road_mask(const SceneSpec& spec);

SteerSample render(const SceneSpec& spec);

// Random scene parameters for dataset generation; the seed of spec i is
// derived from (seed, i) and the domain is fixed by the caller.
std::vector<SceneSpec> random_specs(int count, int image_size, Domain domain, std::uint64_t seed);

struct AugmentDraw {
    bool contrast = false;
    bool brightness = false;
    bool saturation = false;
    bool noise = false;
    double contrast_factor = 1.0;
    double brightness_factor = 1.0;
    double saturation_factor = 1.0;
    std::uint64_t noise_seed = 0;

    [[nodiscard]] bool any() const { return contrast || brightness || saturation || noise; }
};

inline constexpr double kAugmentProbability = 0.5;
inline constexpr double kAugmentFactorLo = 0.7;
inline constexpr double kAugmentFactorHi = 1.3;
inline constexpr double kAugmentNoiseSigma = 0.05;

AugmentDraw draw_augment(std::uint64_t rng_seed);
// Contrast, brightness, saturation, then noise; result clipped to [−1, 1].
SteerSample augment(const SteerSample& sample, const AugmentDraw& draw);
SteerSample augment(const SteerSample& sample, std::uint64_t rng_seed);

// 8-bit RGB PNG; pixel q ∈ [0, 255] ↔ value q/127.5 − 1.
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
// Snap values to the 8-bit lattice used by PNG files.
void quantize(Image& image);

struct ManifestRow {
    std::string file;
    std::optional<double> angular_velocity;
    Command command = Command::straight;
    Domain domain = Domain::source;
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;
    int n_source = 0;
    int n_target = 0;
};

// Writes images/<domain>_<seed>.png, manifest.tsv (target velocities left
// blank), target_labels.tsv (held-out target velocities, for evaluation only)
// and counts.tsv.
DatasetManifest write_dataset(const std::vector<SceneSpec>& specs, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& dir);

struct Dataset {
    DatasetManifest manifest;
    std::vector<SteerSample> samples;  // manifest order
};

Dataset read_dataset(const std::filesystem::path& dir);

// file → angular velocity for target rows; empty if the file is absent.
std::vector<std::pair<std::string, double>> read_target_labels(const std::filesystem::path& dir);

}  // namespace sim2real

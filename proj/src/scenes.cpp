#include "sim2real/scenes.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "sim2real/rng.hpp"

namespace sim2real {
namespace {

using Rgb = std::array<double, 3>;

enum class Region : std::uint8_t { sky, ground, road, marking };

struct Geometry {
    double horizon;       // fraction of image height
    double half_width;    // road half width at the bottom edge, fraction of width
    double offset;        // lateral road offset at the bottom edge
    double junction;      // depth of the intersection band
    double band;          // half thickness of the band, in depth units
    double dash_phase;
};

Geometry draw_geometry(const SceneSpec& spec) {
    std::mt19937_64 rng(derive_seed(spec.seed, 1));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Geometry g{};
    g.horizon = 0.36 + 0.04 * u(rng);
    g.half_width = 0.32 + 0.04 * u(rng);
    g.offset = 0.04 * u(rng);
    g.junction = 0.45 + 0.06 * u(rng);
    g.band = 0.07;
    g.dash_phase = 0.5 + 0.5 * u(rng);
    return g;
}

std::vector<Region> regions(const SceneSpec& spec) {
    const Geometry g = draw_geometry(spec);
    const int n = spec.image_size;
    std::vector<Region> out(static_cast<std::size_t>(n) * n, Region::sky);
    for (int y = 0; y < n; ++y) {
        const double v = (y + 0.5) / n;
        if (v <= g.horizon) {
            continue;
        }
        const double t = (1.0 - v) / (1.0 - g.horizon);
        const double half = g.half_width * (1.0 - 0.8 * t);
        const double center = 0.5 + g.offset * (1.0 - t) - 0.42 * spec.road_curvature * t * t;
        const bool in_band = spec.intersection != Intersection::none && std::abs(t - g.junction) <= g.band;
        const bool past_end = spec.intersection == Intersection::t_junction && t > g.junction + g.band;
        const bool dash_on = std::fmod(t * 7.0 + g.dash_phase, 1.0) < 0.5;
        for (int x = 0; x < n; ++x) {
            const double u = (x + 0.5) / n;
            const double d = std::abs(u - center);
            Region r = Region::ground;
            if (in_band || (!past_end && d <= half)) {
                r = Region::road;
            }
            if (!in_band && !past_end && dash_on && d <= 0.015 * (1.0 - 0.7 * t) + 0.5 / n) {
                r = Region::marking;
            }
            out[static_cast<std::size_t>(y) * n + x] = r;
        }
    }
    return out;
}

// Deterministic lattice value in [0, 1).
double lattice(std::uint64_t seed, int ix, int iy) {
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) |
                     static_cast<std::uint32_t>(iy);
    return static_cast<double>(derive_seed(seed, key) >> 11) * 0x1.0p-53;
}

// Smoothly interpolated value noise in [0, 1).
double value_noise(std::uint64_t seed, double x, double y) {
    const int ix = static_cast<int>(std::floor(x));
    const int iy = static_cast<int>(std::floor(y));
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double fx = fade(x - ix);
    const double fy = fade(y - iy);
    const double a = lattice(seed, ix, iy) + fx * (lattice(seed, ix + 1, iy) - lattice(seed, ix, iy));
    const double b = lattice(seed, ix, iy + 1) + fx * (lattice(seed, ix + 1, iy + 1) - lattice(seed, ix, iy + 1));
    return a + fy * (b - a);
}

double texture(std::uint64_t seed, double u, double v) {
    return 0.6 * value_noise(seed, u * 8.0, v * 8.0) + 0.4 * value_noise(seed ^ 0xa5a5ULL, u * 22.0, v * 22.0) - 0.5;
}

constexpr Rgb kSourceSky{0.55, 0.75, 0.95};
constexpr Rgb kSourceGround{0.30, 0.62, 0.25};
constexpr Rgb kSourceRoad{0.42, 0.42, 0.45};
constexpr Rgb kSourceMarking{0.95, 0.95, 0.85};

constexpr Rgb kTargetSky{0.80, 0.82, 0.85};
constexpr Rgb kTargetGround{0.33, 0.27, 0.18};
constexpr Rgb kTargetRoad{0.70, 0.66, 0.60};
constexpr Rgb kTargetMarking{0.95, 0.85, 0.30};
constexpr double kTargetHueDegrees = 40.0;
constexpr double kTargetNoiseSigma = 0.03;

// Rotation about the gray axis of RGB space.
std::array<Rgb, 3> hue_rotation(double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a) / std::sqrt(3.0);
    const double k = (1.0 - c) / 3.0;
    return {{{c + k, k - s, k + s}, {k + s, c + k, k - s}, {k - s, k + s, c + k}}};
}

float to_unit_range(double v01) { return static_cast<float>(std::clamp(v01, 0.0, 1.0) * 2.0 - 1.0); }

}  // namespace

std::string_view to_string(Intersection i) {
    switch (i) {
        case Intersection::none:
            return "none";
        case Intersection::t_junction:
            return "T";
        case Intersection::cross:
            return "cross";
    }
    return "?";
}

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Intersection parse_intersection(std::string_view s) {
    for (const Intersection i : {Intersection::none, Intersection::t_junction, Intersection::cross}) {
        if (to_string(i) == s) {
            return i;
        }
    }
    throw ConfigError("unknown intersection: " + std::string(s));
}

Domain parse_domain(std::string_view s) {
    if (s == "source") {
        return Domain::source;
    }
    if (s == "target") {
        return Domain::target;
    }
    throw ConfigError("unknown domain: " + std::string(s));
}

void SceneSpec::validate() const {
    if (image_size != 64 && image_size != 96 && image_size != 256) {
        throw ConfigError("image_size must be 64, 96 or 256, got " + std::to_string(image_size));
    }
    if (!(road_curvature >= -1.0 && road_curvature <= 1.0)) {
        throw ConfigError("road_curvature must lie in [-1, 1]");
    }
}

double steering_label(const SceneSpec& spec) {
    if (spec.intersection != Intersection::none && spec.command != Command::straight) {
        return spec.command == Command::left ? kTurnVelocity : -kTurnVelocity;
    }
    return kCurvatureGain * spec.road_curvature;
}

std::vector<std::uint8_t> road_mask(const SceneSpec& spec) {
    spec.validate();
    const auto r = regions(spec);
    std::vector<std::uint8_t> mask(r.size());
    std::transform(r.begin(), r.end(), mask.begin(), [](Region x) {
        return static_cast<std::uint8_t>(x == Region::road || x == Region::marking);
    });
    return mask;
}

SteerSample render(const SceneSpec& spec) {
    spec.validate();
    const int n = spec.image_size;
    const auto r = regions(spec);
    Image img(Shape{1, n, n, 3});
    const bool target = spec.domain == Domain::target;
    const auto hue = hue_rotation(kTargetHueDegrees);
    const std::uint64_t tex_seed = derive_seed(spec.seed, 2);
    std::mt19937_64 noise_rng(derive_seed(spec.seed, 3));
    std::normal_distribution<double> noise(0.0, kTargetNoiseSigma);

    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const Region region = r[static_cast<std::size_t>(y) * n + x];
            Rgb c{};
            if (!target) {
                c = region == Region::sky      ? kSourceSky
                    : region == Region::ground ? kSourceGround
                    : region == Region::road   ? kSourceRoad
                                               : kSourceMarking;
            } else {
                const double u = (x + 0.5) / n;
                const double v = (y + 0.5) / n;
                double amplitude = 0.0;
                switch (region) {
                    case Region::sky:
                        c = kTargetSky;
                        amplitude = 0.10;
                        break;
                    case Region::ground:
                        c = kTargetGround;
                        amplitude = 0.30;
                        break;
                    case Region::road:
                        c = kTargetRoad;
                        amplitude = 0.14;
                        break;
                    case Region::marking:
                        c = kTargetMarking;
                        amplitude = 0.05;
                        break;
                }
                const double tex = amplitude * texture(tex_seed + static_cast<std::uint64_t>(region), u, v);
                Rgb shaded{};
                for (int k = 0; k < 3; ++k) {
                    shaded[k] = c[k] + tex;
                }
                for (int k = 0; k < 3; ++k) {
                    c[k] = hue[k][0] * shaded[0] + hue[k][1] * shaded[1] + hue[k][2] * shaded[2] + noise(noise_rng);
                }
            }
            for (int k = 0; k < 3; ++k) {
                img(0, y, x, k) = to_unit_range(c[k]);
            }
        }
    }
    quantize(img);

    SteerSample s;
    s.image = std::move(img);
    s.command = spec.command;
    s.domain = spec.domain;
    s.has_label = spec.domain == Domain::source;
    s.angular_velocity = s.has_label ? steering_label(spec) : 0.0;
    return s;
}

std::vector<SceneSpec> random_specs(int count, int image_size, Domain domain, std::uint64_t seed) {
    std::vector<SceneSpec> specs;
    std::mt19937_64 rng(derive_seed(seed, domain == Domain::source ? 11 : 12));
    std::uniform_real_distribution<double> curvature(-1.0, 1.0);
    std::discrete_distribution<int> intersection({2.0, 1.0, 1.0});
    std::uniform_int_distribution<int> command(0, kCommandCount - 1);
    for (int i = 0; i < count; ++i) {
        SceneSpec s;
        s.seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(i) * 2 + (domain == Domain::source ? 0 : 1)) >> 20;
        s.image_size = image_size;
        s.road_curvature = curvature(rng);
        s.intersection = static_cast<Intersection>(intersection(rng));
        s.command = static_cast<Command>(command(rng));
        s.domain = domain;
        specs.push_back(s);
    }
    return specs;
}

AugmentDraw draw_augment(std::uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    std::bernoulli_distribution active(kAugmentProbability);
    std::uniform_real_distribution<double> factor(kAugmentFactorLo, kAugmentFactorHi);
    AugmentDraw d;
    d.contrast = active(rng);
    d.contrast_factor = factor(rng);
    d.brightness = active(rng);
    d.brightness_factor = factor(rng);
    d.saturation = active(rng);
    d.saturation_factor = factor(rng);
    d.noise = active(rng);
    d.noise_seed = rng();
    return d;
}

SteerSample augment(const SteerSample& sample, const AugmentDraw& draw) {
    SteerSample out = sample;
    if (!draw.any()) {
        return out;
    }
    auto px = out.image.matrix();
    if (draw.contrast) {
        const float mean = px.mean();
        px.array() = (px.array() - mean) * static_cast<float>(draw.contrast_factor) + mean;
    }
    if (draw.brightness) {
        px.array() = (px.array() + 1.0f) * static_cast<float>(draw.brightness_factor) - 1.0f;
    }
    if (draw.saturation) {
        const Eigen::Vector3f weights(0.299f, 0.587f, 0.114f);
        const Eigen::VectorXf luma = px * weights;
        const float f = static_cast<float>(draw.saturation_factor);
        px = (luma.replicate(1, 3) + f * (px - luma.replicate(1, 3))).eval();
    }
    if (draw.noise) {
        std::mt19937_64 rng(draw.noise_seed);
        std::normal_distribution<float> noise(0.0f, static_cast<float>(kAugmentNoiseSigma));
        for (auto& v : out.image.data()) {
            v += noise(rng);
        }
    }
    out.image.data() = out.image.data().cwiseMax(-1.0f).cwiseMin(1.0f);
    return out;
}

SteerSample augment(const SteerSample& sample, std::uint64_t rng_seed) {
    return augment(sample, draw_augment(rng_seed));
}

void quantize(Image& image) {
    for (auto& v : image.data()) {
        const float q = std::round(std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f));
        v = q / 127.5f - 1.0f;
    }
}

void write_png(const Image& image, const std::filesystem::path& path) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) {
        throw DimensionError("write_png expects a single RGB image, got " + s.str());
    }
    std::vector<png_byte> bytes(static_cast<std::size_t>(s.size()));
    for (std::int64_t i = 0; i < s.size(); ++i) {
        bytes[i] = static_cast<png_byte>(std::lround(std::clamp((image.data()[i] + 1.0f) * 127.5f, 0.0f, 255.0f)));
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(s.w);
    png.height = static_cast<png_uint_32>(s.h);
    png.format = PNG_FORMAT_RGB;
    if (png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr) == 0) {
        throw IoError("cannot write " + path.string() + ": " + png.message);
    }
}

Image read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
        throw IoError("cannot read " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
    if (png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr) == 0) {
        throw IoError("cannot decode " + path.string() + ": " + png.message);
    }
    Image img(Shape{1, static_cast<int>(png.height), static_cast<int>(png.width), 3});
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data()[static_cast<Eigen::Index>(i)] = static_cast<float>(bytes[i]) / 127.5f - 1.0f;
    }
    return img;
}

namespace {

const char* kManifestHeader = "file\tangular_velocity\tcommand\tdomain";

std::string image_name(const SceneSpec& spec) {
    return "images/" + std::string(to_string(spec.domain)) + "_" + std::to_string(spec.seed) + ".png";
}

std::string format_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, '\t')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == '\t') {
        out.emplace_back();
    }
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

}  // namespace

DatasetManifest write_dataset(const std::vector<SceneSpec>& specs, const std::filesystem::path& dir) {
    std::set<std::string> names;
    for (const SceneSpec& s : specs) {
        s.validate();
        if (!names.insert(image_name(s)).second) {
            throw InvalidInput("duplicate dataset filename " + image_name(s));
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (ec) {
        throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
    }

    DatasetManifest manifest;
    std::ofstream out = open_out(dir / "manifest.tsv");
    std::ofstream held_out = open_out(dir / "target_labels.tsv");
    out << kManifestHeader << "\n";
    held_out << "file\tangular_velocity\n";
    for (const SceneSpec& s : specs) {
        const SteerSample sample = render(s);
        ManifestRow row{image_name(s), std::nullopt, s.command, s.domain};
        if (s.domain == Domain::source) {
            row.angular_velocity = sample.angular_velocity;
            ++manifest.n_source;
        } else {
            held_out << row.file << "\t" << format_real(steering_label(s)) << "\n";
            ++manifest.n_target;
        }
        write_png(sample.image, dir / row.file);
        out << row.file << "\t" << (row.angular_velocity ? format_real(*row.angular_velocity) : "") << "\t"
            << to_string(row.command) << "\t" << to_string(row.domain) << "\n";
        manifest.rows.push_back(std::move(row));
    }
    std::ofstream counts = open_out(dir / "counts.tsv");
    counts << "domain\tcount\nsource\t" << manifest.n_source << "\ntarget\t" << manifest.n_target << "\n";
    if (!out || !held_out || !counts) {
        throw IoError("failed writing dataset files in " + dir.string());
    }
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.tsv");
    if (!in) {
        throw IoError("cannot read " + (dir / "manifest.tsv").string());
    }
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
        throw IoError("manifest.tsv has an unexpected header");
    }
    DatasetManifest m;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto cells = split_tabs(line);
        if (cells.size() != 4) {
            throw IoError("manifest.tsv line " + std::to_string(line_no) + ": expected 4 columns");
        }
        ManifestRow row;
        row.file = cells[0];
        if (!cells[1].empty()) {
            row.angular_velocity = std::stod(cells[1]);
        }
        row.command = parse_command(cells[2]);
        row.domain = parse_domain(cells[3]);
        if (row.domain == Domain::source && !row.angular_velocity) {
            throw IoError("manifest.tsv line " + std::to_string(line_no) + ": source row without a label");
        }
        (row.domain == Domain::source ? m.n_source : m.n_target) += 1;
        m.rows.push_back(std::move(row));
    }
    return m;
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset d;
    d.manifest = read_manifest(dir);
    for (const ManifestRow& row : d.manifest.rows) {
        SteerSample s;
        s.image = read_png(dir / row.file);
        s.command = row.command;
        s.domain = row.domain;
        s.has_label = row.domain == Domain::source;
        s.angular_velocity = s.has_label ? *row.angular_velocity : 0.0;
        d.samples.push_back(std::move(s));
    }
    return d;
}

std::vector<std::pair<std::string, double>> read_target_labels(const std::filesystem::path& dir) {
    std::vector<std::pair<std::string, double>> labels;
    std::ifstream in(dir / "target_labels.tsv");
    if (!in) {
        return labels;
    }
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto cells = split_tabs(line);
        if (cells.size() == 2 && !cells[1].empty()) {
            labels.emplace_back(cells[0], std::stod(cells[1]));
        }
    }
    return labels;
}

}  // namespace sim2real

#pragma once

// Simulated SKE/BKS imaging: Gaussian collimator blur applied in closed form
// to a Gaussian signal and a lumpy background, plus i.i.d. Gaussian noise.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daobs/random.hpp"

namespace daobs {

using Image = std::vector<float>;

/// Pixel lattice. Pixel (col, row) sits at coordinates (col, row) with unit pitch;
/// arrays are stored row-major.
struct GridSpec {
    int width = 64;
    int height = 64;

    [[nodiscard]] std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Imaging system: height h and blur width w (pixels) of the collimator response.
struct SystemParams {
    double height = 50.0;
    double blur = 4.0;
    friend bool operator==(const SystemParams&, const SystemParams&) = default;
};

struct SignalParams {
    double amplitude = 0.2;
    Point center{32.0, 32.0};
    double width = 3.0;
    friend bool operator==(const SignalParams&, const SignalParams&) = default;
};

struct LumpyParams {
    double mean_count = 5.0;
    double amplitude = 1.0;
    double lump_width = 7.0;
    friend bool operator==(const LumpyParams&, const LumpyParams&) = default;
};

struct NoiseParams {
    double sigma = 10.0;
    friend bool operator==(const NoiseParams&, const NoiseParams&) = default;
};

struct LumpSet {
    std::vector<Point> centers;
    [[nodiscard]] std::size_t count() const { return centers.size(); }
};

/// Everything needed to draw images from one domain.
struct GenerationConfig {
    std::string domain_tag = "source";
    GridSpec grid;
    SystemParams system;
    SignalParams signal;
    LumpyParams lumpy;
    NoiseParams noise;
    /// When false the H1 image of a pair gets its own background realization.
    bool shared_background = true;
    friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

struct ImageSample {
    Image pixels;
    std::uint8_t label = 0;
    std::string domain_tag;
    std::int64_t pair_id = 0;
};

struct DatasetMeta {
    GenerationConfig config;
    std::uint64_t seed = 0;
    std::int64_t n_pairs = 0;
    /// Free-form provenance, e.g. which size reduction produced this set.
    std::string note;
};

struct Dataset {
    std::vector<ImageSample> samples;
    DatasetMeta meta;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
};

/// Throws ConfigError if any parameter is outside its valid range.
void validate(const GenerationConfig& config);

/// Collimator point response at `r` for a detector element at `r_m`.
double psf_value(Point r, Point r_m, const SystemParams& sys);

/// Poisson lump count with centers uniform on [0, width) x [0, height).
LumpSet sample_lumps(const LumpyParams& p, const GridSpec& grid, Rng& rng);

/// Closed-form blurred lumpy background (Gaussian lumps convolved with the PSF).
Image render_background(const LumpSet& lumps, const LumpyParams& lp, const SystemParams& sys, const GridSpec& grid);

/// Closed-form blurred signal.
Image render_signal(const SignalParams& sp, const SystemParams& sys, const GridSpec& grid);

/// Returns img + n with n_m ~ N(0, sigma^2) i.i.d.
Image add_noise(std::span<const float> img, const NoiseParams& np, Rng& rng);

/// Signal-absent and signal-present images sharing one background draw.
std::pair<ImageSample, ImageSample> generate_pair(const GenerationConfig& config, std::int64_t pair_id, Rng& rng);

/// Per-pair engine used by generate_dataset; exposed so callers can regenerate a single pair.
Rng pair_rng(std::uint64_t seed, std::int64_t pair_id);

/// 2*n_pairs samples ordered by pair_id, H0 before H1. Each pair draws from its own
/// substream so the result does not depend on `threads`.
Dataset generate_dataset(const GenerationConfig& config, std::int64_t n_pairs, std::uint64_t seed,
                         unsigned threads = 1);

/// Noise-free background realizations, used for training with noise drawn on the fly.
std::vector<Image> generate_backgrounds(const GenerationConfig& config, std::int64_t count, std::uint64_t seed,
                                        unsigned threads = 1);

/// Throws InputError unless every pair_id appears exactly once per label with H0/H1 ordering.
void check_pairing(const Dataset& ds);

}  // namespace daobs

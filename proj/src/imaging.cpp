#include "daobs/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "daobs/errors.hpp"

namespace daobs {

namespace {

constexpr std::uint64_t kPairStream = 0x70616972;        // "pair"
constexpr std::uint64_t kBackgroundStream = 0x626b6764;  // "bkgd"

// Adds amplitude * exp(-|r_m - c|^2 / (2 var)) to every pixel.
void accumulate_gaussian(std::vector<double>& acc, const GridSpec& grid, Point c, double amplitude, double var) {
    const double inv = 1.0 / (2.0 * var);
    // Separable: exp(-(dx^2 + dy^2)/2v) = exp(-dx^2/2v) * exp(-dy^2/2v).
    std::vector<double> ex(static_cast<std::size_t>(grid.width));
    for (int col = 0; col < grid.width; ++col) {
        const double dx = col - c.x;
        ex[static_cast<std::size_t>(col)] = std::exp(-dx * dx * inv);
    }
    for (int row = 0; row < grid.height; ++row) {
        const double dy = row - c.y;
        const double ey = amplitude * std::exp(-dy * dy * inv);
        double* line = acc.data() + static_cast<std::size_t>(row) * static_cast<std::size_t>(grid.width);
        for (int col = 0; col < grid.width; ++col) line[col] += ey * ex[static_cast<std::size_t>(col)];
    }
}

Image to_float(const std::vector<double>& v) {
    Image out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
    return out;
}

void add_noise_inplace(Image& img, double sigma, Rng& rng) {
    if (sigma == 0.0) return;
    std::normal_distribution<double> normal(0.0, sigma);
    for (float& px : img) px = static_cast<float>(px + normal(rng));
}

template <typename Fn>
void parallel_ranges(std::int64_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::int64_t>(n, 1))));
    if (threads == 1) {
        fn(std::int64_t{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
}

}  // namespace

void validate(const GenerationConfig& c) {
    if (c.grid.width <= 0 || c.grid.height <= 0) throw ConfigError("grid dimensions must be positive");
    if (!(c.system.height > 0.0)) throw ConfigError("system height h must be positive");
    if (!(c.system.blur > 0.0)) throw ConfigError("system blur w must be positive");
    if (!(c.signal.amplitude > 0.0)) throw ConfigError("signal amplitude A must be positive");
    if (!(c.signal.width > 0.0)) throw ConfigError("signal width w_s must be positive");
    if (!(c.signal.center.x >= 0.0 && c.signal.center.x <= c.grid.width - 1 && c.signal.center.y >= 0.0 &&
          c.signal.center.y <= c.grid.height - 1))
        throw ConfigError("signal center r_c lies outside the grid");
    if (!(c.lumpy.mean_count >= 0.0)) throw ConfigError("mean lump count must be nonnegative");
    if (!(c.lumpy.amplitude > 0.0)) throw ConfigError("lump amplitude must be positive");
    if (!(c.lumpy.lump_width > 0.0)) throw ConfigError("lump width must be positive");
    if (!(c.noise.sigma >= 0.0)) throw ConfigError("noise sigma must be nonnegative");
}

double psf_value(Point r, Point r_m, const SystemParams& sys) {
    const double dx = r.x - r_m.x;
    const double dy = r.y - r_m.y;
    const double w2 = sys.blur * sys.blur;
    return sys.height / (2.0 * std::numbers::pi * w2) * std::exp(-(dx * dx + dy * dy) / (2.0 * w2));
}

LumpSet sample_lumps(const LumpyParams& p, const GridSpec& grid, Rng& rng) {
    LumpSet lumps;
    if (p.mean_count <= 0.0) return lumps;
    std::poisson_distribution<int> count(p.mean_count);
    const int n = count(rng);
    lumps.centers.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double x = uniform01(rng) * grid.width;
        const double y = uniform01(rng) * grid.height;
        lumps.centers.push_back({x, y});
    }
    return lumps;
}

Image render_background(const LumpSet& lumps, const LumpyParams& lp, const SystemParams& sys, const GridSpec& grid) {
    std::vector<double> acc(grid.pixel_count(), 0.0);
    const double var = sys.blur * sys.blur + lp.lump_width * lp.lump_width;
    const double amp = lp.amplitude * sys.height * lp.lump_width * lp.lump_width / var;
    for (const Point& c : lumps.centers) accumulate_gaussian(acc, grid, c, amp, var);
    return to_float(acc);
}

Image render_signal(const SignalParams& sp, const SystemParams& sys, const GridSpec& grid) {
    std::vector<double> acc(grid.pixel_count(), 0.0);
    const double var = sys.blur * sys.blur + sp.width * sp.width;
    const double amp = sp.amplitude * sys.height * sp.width * sp.width / var;
    accumulate_gaussian(acc, grid, sp.center, amp, var);
    return to_float(acc);
}

Image add_noise(std::span<const float> img, const NoiseParams& np, Rng& rng) {
    Image out(img.begin(), img.end());
    add_noise_inplace(out, np.sigma, rng);
    return out;
}

std::pair<ImageSample, ImageSample> generate_pair(const GenerationConfig& config, std::int64_t pair_id, Rng& rng) {
    const Image signal = render_signal(config.signal, config.system, config.grid);
    const Image bg0 = render_background(sample_lumps(config.lumpy, config.grid, rng), config.lumpy, config.system,
                                        config.grid);
    const Image bg1 = config.shared_background
                          ? bg0
                          : render_background(sample_lumps(config.lumpy, config.grid, rng), config.lumpy,
                                              config.system, config.grid);

    ImageSample h0{bg0, 0, config.domain_tag, pair_id};
    ImageSample h1{bg1, 1, config.domain_tag, pair_id};
    for (std::size_t m = 0; m < h1.pixels.size(); ++m) h1.pixels[m] += signal[m];
    add_noise_inplace(h0.pixels, config.noise.sigma, rng);
    add_noise_inplace(h1.pixels, config.noise.sigma, rng);
    return {std::move(h0), std::move(h1)};
}

Rng pair_rng(std::uint64_t seed, std::int64_t pair_id) {
    return make_rng(seed, {kPairStream, static_cast<std::uint64_t>(pair_id)});
}

Dataset generate_dataset(const GenerationConfig& config, std::int64_t n_pairs, std::uint64_t seed, unsigned threads) {
    validate(config);
    if (n_pairs < 1) throw ConfigError("dataset needs at least one pair");
    Dataset ds;
    ds.meta = DatasetMeta{config, seed, n_pairs, {}};
    ds.samples.resize(static_cast<std::size_t>(2 * n_pairs));
    parallel_ranges(n_pairs, threads, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t id = begin; id < end; ++id) {
            Rng rng = pair_rng(seed, id);
            auto [h0, h1] = generate_pair(config, id, rng);
            ds.samples[static_cast<std::size_t>(2 * id)] = std::move(h0);
            ds.samples[static_cast<std::size_t>(2 * id + 1)] = std::move(h1);
        }
    });
    return ds;
}

std::vector<Image> generate_backgrounds(const GenerationConfig& config, std::int64_t count, std::uint64_t seed,
                                        unsigned threads) {
    validate(config);
    if (count < 1) throw ConfigError("background ensemble needs at least one image");
    std::vector<Image> out(static_cast<std::size_t>(count));
    parallel_ranges(count, threads, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) {
            Rng rng = make_rng(seed, {kBackgroundStream, static_cast<std::uint64_t>(i)});
            out[static_cast<std::size_t>(i)] =
                render_background(sample_lumps(config.lumpy, config.grid, rng), config.lumpy, config.system,
                                  config.grid);
        }
    });
    return out;
}

void check_pairing(const Dataset& ds) {
    if (ds.samples.size() % 2 != 0) throw InputError("dataset has an odd number of samples");
    for (std::size_t i = 0; i < ds.samples.size(); i += 2) {
        const ImageSample& a = ds.samples[i];
        const ImageSample& b = ds.samples[i + 1];
        if (a.pair_id != b.pair_id || a.label != 0 || b.label != 1)
            throw InputError("pair " + std::to_string(a.pair_id) + " is not an (H0, H1) pair");
        if (i > 0 && ds.samples[i - 2].pair_id >= a.pair_id) throw InputError("pair ids are not ascending");
    }
}

}  // namespace daobs

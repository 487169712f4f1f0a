#pragma once

#include "flsim/binary_io.hpp"
#include "flsim/nn.hpp"
#include "flsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

/// Global example pool. All feature vectors share one length and every label
/// is below class_count.
struct Dataset {
    std::size_t feature_dim = 0;
    std::size_t class_count = 0;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }

    void validate() const
    {
        for (std::size_t h = 0; h < examples.size(); ++h) {
            if (examples[h].x.size() != feature_dim)
                throw ShapeError("example " + std::to_string(h) + " has wrong feature length");
            if (examples[h].y >= class_count)
                throw ShapeError("example " + std::to_string(h) + " has label out of range");
        }
    }

    std::vector<std::size_t> class_histogram() const
    {
        std::vector<std::size_t> h(class_count, 0);
        for (const auto& e : examples) ++h[e.y];
        return h;
    }
};

// ---------------------------------------------------------------------------
// Native FLDS container
//   "FLDS" | u16 version=1 | u32 count | u32 feature_dim | u16 class_count |
//   count*feature_dim f32 (row-major) | count u16 labels       (little-endian)
// ---------------------------------------------------------------------------

inline std::vector<char> encode_native(const Dataset& ds)
{
    ds.validate();
    ByteWriter w;
    w.put_bytes("FLDS", 4);
    w.put(std::uint16_t{1});
    w.put(static_cast<std::uint32_t>(ds.size()));
    w.put(static_cast<std::uint32_t>(ds.feature_dim));
    w.put(static_cast<std::uint16_t>(ds.class_count));
    for (const auto& e : ds.examples)
        for (double v : e.x) w.put(static_cast<float>(v));
    for (const auto& e : ds.examples) w.put(static_cast<std::uint16_t>(e.y));
    return std::move(w.bytes());
}

inline Dataset decode_native(const std::vector<char>& bytes)
{
    ByteReader r(bytes);
    if (r.remaining() < 4 || r.get_string(4) != "FLDS") throw FormatError("bad dataset magic", 0);
    const std::size_t version_at = r.offset();
    if (const auto v = r.get<std::uint16_t>(); v != 1)
        throw FormatError("unsupported dataset version " + std::to_string(v), version_at);
    const std::size_t count_at = r.offset();
    const auto count = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    const auto classes = r.get<std::uint16_t>();
    if (count == 0) throw FormatError("empty dataset", count_at);
    if (dim == 0 || classes == 0) throw FormatError("zero feature_dim or class_count", count_at);

    Dataset ds;
    ds.feature_dim = dim;
    ds.class_count = classes;
    const std::size_t n_feat = static_cast<std::size_t>(count) * dim;
    r.require(n_feat * sizeof(float), "truncated feature block");
    ds.examples.resize(count);
    for (auto& e : ds.examples) {
        e.x.resize(dim);
        for (auto& v : e.x) v = r.get<float>();
    }
    r.require(static_cast<std::size_t>(count) * sizeof(std::uint16_t), "truncated label block");
    for (auto& e : ds.examples) {
        const std::size_t at = r.offset();
        e.y = r.get<std::uint16_t>();
        if (e.y >= classes) throw FormatError("label " + std::to_string(e.y) + " out of range", at);
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after dataset", r.offset());
    return ds;
}

inline void save_native(const std::string& path, const Dataset& ds)
{
    write_file(path, encode_native(ds));
}

inline Dataset load_native(const std::string& path)
{
    return decode_native(read_file(path));
}

// ---------------------------------------------------------------------------
// IDX (MNIST) image/label pair, big-endian. Pixels are scaled to [0,1].
// ---------------------------------------------------------------------------

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 10)
{
    const auto img_bytes = read_file(images_path);
    const auto lbl_bytes = read_file(labels_path);
    ByteReader ri(img_bytes);
    ByteReader rl(lbl_bytes);
    if (ri.get<std::uint32_t>(std::endian::big) != 0x00000803) throw FormatError("bad IDX3 magic", 0);
    if (rl.get<std::uint32_t>(std::endian::big) != 0x00000801) throw FormatError("bad IDX1 magic", 0);
    const auto n = ri.get<std::uint32_t>(std::endian::big);
    const auto rows = ri.get<std::uint32_t>(std::endian::big);
    const auto cols = ri.get<std::uint32_t>(std::endian::big);
    const std::size_t label_count_at = rl.offset();
    if (rl.get<std::uint32_t>(std::endian::big) != n) throw FormatError("IDX image/label counts differ", label_count_at);
    if (n == 0) throw FormatError("empty dataset", 4);

    Dataset ds;
    ds.feature_dim = static_cast<std::size_t>(rows) * cols;
    ds.class_count = classes;
    ri.require(static_cast<std::size_t>(n) * ds.feature_dim, "truncated IDX images");
    rl.require(n, "truncated IDX labels");
    ds.examples.resize(n);
    for (auto& e : ds.examples) {
        e.x.resize(ds.feature_dim);
        for (auto& v : e.x) v = static_cast<double>(ri.get<std::uint8_t>()) / 255.0;
        const std::size_t at = rl.offset();
        e.y = rl.get<std::uint8_t>();
        if (e.y >= classes) throw FormatError("IDX label out of range", at);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

namespace detail {

/// Labels 0..C-1 repeated, then shuffled: every class gets floor or ceil of n/C.
inline std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes, Rng& rng)
{
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

} // namespace detail

/// Radar-like range spectra. Class c puts a narrow peak inside the c-th of C
/// contiguous bin bands over a weak decaying background. `noise` scales both
/// additive per-bin noise and a clutter peak at a random position; with
/// noise = 0 the classes are linearly separable.
inline Dataset synth_radar(std::uint64_t seed, std::size_t n, std::size_t classes = 8, std::size_t dim = 512,
                           double noise = 0.25)
{
    if (classes < 2) throw std::invalid_argument("synth_radar: need at least 2 classes");
    if (n < classes) throw std::invalid_argument("synth_radar: n must be at least the class count");
    if (dim < classes * 8) throw std::invalid_argument("synth_radar: too few bins per class band");
    if (noise < 0.0) throw std::invalid_argument("synth_radar: negative noise");

    Rng rng = make_rng(seed, {stream::synth, 0x7261646172ULL});
    Dataset ds;
    ds.feature_dim = dim;
    ds.class_count = classes;
    const auto labels = detail::balanced_labels(n, classes, rng);
    const double band = static_cast<double>(dim) / static_cast<double>(classes);
    const double margin = band / 8.0;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ds.examples.resize(n);
    for (std::size_t h = 0; h < n; ++h) {
        const std::size_t c = labels[h];
        const double center = static_cast<double>(c) * band + margin + unit(rng) * (band - 2.0 * margin);
        const double width = 1.5 + 1.5 * unit(rng);
        const double amp = 1.0 + unit(rng);
        const double gain = 0.8 + 0.4 * unit(rng);
        const double clutter_pos = unit(rng) * static_cast<double>(dim);
        const double clutter_amp = 2.0 * noise * unit(rng);
        auto& x = ds.examples[h].x;
        x.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            const double bin = static_cast<double>(j);
            const double peak = amp * std::exp(-0.5 * std::pow((bin - center) / width, 2.0));
            const double clutter = clutter_amp * std::exp(-0.5 * std::pow((bin - clutter_pos) / 2.0, 2.0));
            const double background = 0.05 * gain * std::exp(-bin / 100.0);
            x[j] = peak + clutter + background + noise * gauss(rng);
        }
        ds.examples[h].y = c;
    }
    return ds;
}

/// Digit-like images: each class owns a few "styles", each a smooth blob
/// pattern on a square grid (28x28 when dim = 784). Examples are a style with
/// random intensity plus Gaussian pixel noise, clipped to [0,1].
/// The class prototypes depend only on `task_seed`, so training and validation
/// sets drawn with different `seed`s describe the same task.
inline Dataset synth_digits(std::uint64_t seed, std::size_t n, std::size_t classes = 10, std::size_t dim = 784,
                            double noise = 0.3, std::size_t styles_per_class = 3, std::uint64_t task_seed = 2019)
{
    if (classes < 2) throw std::invalid_argument("synth_digits: need at least 2 classes");
    if (n < classes) throw std::invalid_argument("synth_digits: n must be at least the class count");
    if (noise < 0.0) throw std::invalid_argument("synth_digits: negative noise");
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (side * side != dim) throw std::invalid_argument("synth_digits: dim must be a perfect square");

    Rng rng = make_rng(task_seed, {stream::synth, 0x646967697473ULL});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double s = static_cast<double>(side);

    struct Blob {
        double r, c, sigma;
    };
    auto random_blob = [&] { return Blob{0.2 * s + 0.6 * s * unit(rng), 0.2 * s + 0.6 * s * unit(rng), 0.06 * s + 0.05 * s * unit(rng)}; };
    auto render = [&](const std::vector<Blob>& blobs) {
        std::vector<double> img(dim, 0.0);
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
                double v = 0.0;
                for (const auto& b : blobs) {
                    const double dr = (static_cast<double>(r) - b.r) / b.sigma;
                    const double dc = (static_cast<double>(c) - b.c) / b.sigma;
                    v += std::exp(-0.5 * (dr * dr + dc * dc));
                }
                img[r * side + c] = std::min(v, 1.0);
            }
        return img;
    };

    // prototypes[c][style]
    std::vector<std::vector<std::vector<double>>> prototypes(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<Blob> base;
        for (int b = 0; b < 4; ++b) base.push_back(random_blob());
        for (std::size_t st = 0; st < styles_per_class; ++st) {
            std::vector<Blob> blobs = base;
            const double dr = (unit(rng) - 0.5) * 0.1 * s;
            const double dc = (unit(rng) - 0.5) * 0.1 * s;
            for (auto& b : blobs) {
                b.r += dr;
                b.c += dc;
            }
            blobs.push_back(random_blob());
            prototypes[c].push_back(render(blobs));
        }
    }

    rng.seed(derive_seed(seed, {stream::synth, 0x73616d706c65ULL}));
    Dataset ds;
    ds.feature_dim = dim;
    ds.class_count = classes;
    const auto labels = detail::balanced_labels(n, classes, rng);
    ds.examples.resize(n);
    for (std::size_t h = 0; h < n; ++h) {
        const std::size_t c = labels[h];
        const auto style = static_cast<std::size_t>(unit(rng) * static_cast<double>(styles_per_class)) % styles_per_class;
        const double intensity = 0.7 + 0.3 * unit(rng);
        const auto& proto = prototypes[c][style];
        auto& x = ds.examples[h].x;
        x.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) x[j] = std::clamp(intensity * proto[j] + noise * gauss(rng), 0.0, 1.0);
        ds.examples[h].y = c;
    }
    return ds;
}

} // namespace flsim

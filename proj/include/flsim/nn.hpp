#pragma once

#include "flsim/rng.hpp"
#include "flsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace flsim {

/// One labelled example (x_h, y_h).
struct Example {
    std::vector<double> x;
    std::size_t y = 0;

    friend bool operator==(const Example&, const Example&) = default;
};

using Batch = std::vector<const Example*>;

enum class LayerKind { dense, conv1d, maxpool1d, relu, softmax };
enum class Padding { same, valid };

/// Geometry of one layer. Activations are flat vectors; conv1d and maxpool1d
/// interpret them as (position, channel) in position-major order, so the
/// flatten before a dense layer is the identity.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    std::size_t length = 0;   // input positions (conv1d, maxpool1d)
    std::size_t channels = 1; // input channels (maxpool1d); conv1d takes one
    std::size_t taps = 0;
    std::size_t filters = 0;
    std::size_t pool = 0;
    std::size_t stride = 0;
    Padding padding = Padding::valid;

    static LayerSpec dense(std::size_t d1, std::size_t d2)
    {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in_dim = d1;
        s.out_dim = d2;
        return s;
    }

    /// Single input channel, stride 1.
    static LayerSpec conv1d(std::size_t length, std::size_t taps, std::size_t filters, Padding pad = Padding::same)
    {
        if (taps == 0 || filters == 0 || length == 0) throw ShapeError("conv1d: zero dimension");
        if (pad == Padding::valid && taps > length) throw ShapeError("conv1d: kernel longer than input");
        LayerSpec s;
        s.kind = LayerKind::conv1d;
        s.length = length;
        s.taps = taps;
        s.filters = filters;
        s.padding = pad;
        s.in_dim = length;
        s.out_dim = s.output_length() * filters;
        return s;
    }

    static LayerSpec maxpool1d(std::size_t length, std::size_t channels, std::size_t pool, std::size_t stride,
                               Padding pad = Padding::valid)
    {
        if (pool == 0 || stride == 0 || length == 0 || channels == 0) throw ShapeError("maxpool1d: zero dimension");
        if (pad == Padding::valid && pool > length) throw ShapeError("maxpool1d: window longer than input");
        LayerSpec s;
        s.kind = LayerKind::maxpool1d;
        s.length = length;
        s.channels = channels;
        s.pool = pool;
        s.stride = stride;
        s.padding = pad;
        s.in_dim = length * channels;
        s.out_dim = s.output_length() * channels;
        return s;
    }

    static LayerSpec relu(std::size_t dim)
    {
        LayerSpec s;
        s.kind = LayerKind::relu;
        s.in_dim = s.out_dim = dim;
        return s;
    }

    static LayerSpec softmax(std::size_t dim)
    {
        LayerSpec s;
        s.kind = LayerKind::softmax;
        s.in_dim = s.out_dim = dim;
        return s;
    }

    bool trainable() const { return kind == LayerKind::dense || kind == LayerKind::conv1d; }

    std::size_t output_length() const
    {
        switch (kind) {
        case LayerKind::conv1d:
            return padding == Padding::same ? length : length - taps + 1;
        case LayerKind::maxpool1d:
            return padding == Padding::same ? (length + stride - 1) / stride : (length - pool) / stride + 1;
        default:
            return out_dim;
        }
    }

    /// Zero padding inserted before position 0 (TensorFlow SAME convention).
    std::size_t pad_left() const
    {
        if (padding == Padding::valid) return 0;
        if (kind == LayerKind::conv1d) return (taps - 1) / 2;
        if (kind == LayerKind::maxpool1d) {
            const std::size_t out = output_length();
            const std::size_t need = (out - 1) * stride + pool;
            return need > length ? (need - length) / 2 : 0;
        }
        return 0;
    }

    std::size_t weight_rows() const { return kind == LayerKind::dense ? in_dim : taps; }
    std::size_t weight_cols() const { return kind == LayerKind::dense ? out_dim : filters; }
};

class Architecture {
public:
    Architecture() = default;

    explicit Architecture(std::vector<LayerSpec> layers, std::string name = "custom")
        : layers_(std::move(layers)), name_(std::move(name))
    {
        if (layers_.empty()) throw ShapeError("architecture: no layers");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& s = layers_[l];
            if (l > 0 && layers_[l - 1].out_dim != s.in_dim) {
                throw ShapeError("architecture: layer " + std::to_string(l) + " expects input " +
                                 std::to_string(s.in_dim) + " but previous layer outputs " +
                                 std::to_string(layers_[l - 1].out_dim));
            }
            if (s.kind == LayerKind::softmax && l + 1 != layers_.size()) {
                throw ShapeError("architecture: softmax must be the last layer");
            }
            if (s.kind == LayerKind::conv1d && l > 0) {
                throw ShapeError("architecture: conv1d takes a single-channel input and must come first");
            }
            param_index_.push_back(s.trainable() ? static_cast<int>(trainable_count_++) : -1);
        }
        if (layers_.back().kind != LayerKind::softmax) throw ShapeError("architecture: last layer must be softmax");
    }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::string& name() const { return name_; }
    std::size_t input_dim() const { return layers_.front().in_dim; }
    std::size_t class_count() const { return layers_.back().out_dim; }
    std::size_t trainable_layers() const { return trainable_count_; }

    /// Index into ModelParams::layers for layer l, or -1.
    int param_index(std::size_t l) const { return param_index_[l]; }

    ModelParams zeros() const
    {
        ModelParams p;
        for (const auto& s : layers_) {
            if (!s.trainable()) continue;
            p.layers.push_back({Matrix(s.weight_rows(), s.weight_cols()), std::vector<double>(s.weight_cols(), 0.0)});
        }
        return p;
    }

    /// Uniform(-scale, scale) on every parameter. Devices built from the same
    /// seed start from the identical model.
    ModelParams initialize(std::uint64_t seed, double scale = 0.05) const
    {
        ModelParams p = zeros();
        Rng rng = make_rng(seed, {stream::init});
        std::uniform_real_distribution<double> u(-scale, scale);
        for_each_value(p, [&](std::size_t, double& v) { v = u(rng); });
        return p;
    }

    std::size_t parameter_count() const { return zeros().parameter_count(); }

    void check(const ModelParams& p) const
    {
        if (p.layers.size() != trainable_count_) {
            throw ShapeError("model has " + std::to_string(p.layers.size()) + " trainable layers, architecture " +
                             name_ + " expects " + std::to_string(trainable_count_));
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const int q = param_index_[l];
            if (q < 0) continue;
            const auto& t = p.layers[static_cast<std::size_t>(q)];
            const auto& s = layers_[l];
            if (t.weights.rows != s.weight_rows() || t.weights.cols != s.weight_cols() ||
                t.weights.values.size() != s.weight_rows() * s.weight_cols() || t.bias.size() != s.weight_cols()) {
                throw ShapeError("layer " + std::to_string(l) + ": parameter shape mismatch");
            }
        }
    }

private:
    std::vector<LayerSpec> layers_;
    std::vector<int> param_index_;
    std::size_t trainable_count_ = 0;
    std::string name_;
};

/// Single fully connected layer + softmax.
inline Architecture mnist_1fc(std::size_t input_dim = 784, std::size_t classes = 10)
{
    return Architecture({LayerSpec::dense(input_dim, classes), LayerSpec::softmax(classes)}, "mnist-1fc");
}

/// 8 conv1d filters of 16 taps (SAME) -> ReLU -> max-pool 24/24 (VALID) -> FC -> softmax.
/// On a length-512 input the pooled feature map is 21 x 8 = 168.
inline Architecture cnn(std::size_t input_len = 512, std::size_t classes = 8)
{
    constexpr std::size_t taps = 16, filters = 8, pool = 24;
    auto conv = LayerSpec::conv1d(input_len, taps, filters, Padding::same);
    auto relu = LayerSpec::relu(conv.out_dim);
    auto mp = LayerSpec::maxpool1d(conv.output_length(), filters, pool, pool, Padding::valid);
    return Architecture({conv, relu, mp, LayerSpec::dense(mp.out_dim, classes), LayerSpec::softmax(classes)}, "cnn");
}

/// FC 512x32 -> ReLU -> FC 32xC -> softmax.
inline Architecture two_nn(std::size_t input_dim = 512, std::size_t classes = 8, std::size_t hidden = 32)
{
    return Architecture({LayerSpec::dense(input_dim, hidden), LayerSpec::relu(hidden),
                         LayerSpec::dense(hidden, classes), LayerSpec::softmax(classes)},
                        "2nn");
}

/// Dense stack with ReLU between layers, e.g. {6, 4, 3}.
inline Architecture toy_dense(const std::vector<std::size_t>& widths)
{
    if (widths.size() < 2) throw ShapeError("toy_dense: need at least input and output width");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers.push_back(LayerSpec::dense(widths[i], widths[i + 1]));
        if (i + 2 < widths.size()) layers.push_back(LayerSpec::relu(widths[i + 1]));
    }
    layers.push_back(LayerSpec::softmax(widths.back()));
    return Architecture(std::move(layers), "toy");
}

inline Architecture make_architecture(std::string_view id, std::size_t input_dim, std::size_t classes)
{
    if (id == "mnist-1fc") return mnist_1fc(input_dim, classes);
    if (id == "cnn") return cnn(input_dim, classes);
    if (id == "2nn") return two_nn(input_dim, classes);
    if (id == "toy") return toy_dense({input_dim, 16, classes});
    throw std::invalid_argument("unknown model id '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Activations of every layer for one input, plus max-pool routing.
struct ForwardTrace {
    std::vector<std::vector<double>> acts; // acts[0] = x, acts[l+1] = output of layer l
    std::vector<std::vector<std::size_t>> argmax;
};

namespace detail {

inline void softmax_inplace(std::vector<double>& z)
{
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : z) v /= s;
}

inline void layer_forward(const LayerSpec& s, const LayerTensors* t, const std::vector<double>& in,
                          std::vector<double>& out, std::vector<std::size_t>& argmax)
{
    out.assign(s.out_dim, 0.0);
    switch (s.kind) {
    case LayerKind::dense: {
        const std::size_t d2 = s.out_dim;
        for (std::size_t o = 0; o < d2; ++o) out[o] = t->bias[o];
        for (std::size_t i = 0; i < s.in_dim; ++i) {
            const double h = in[i];
            if (h == 0.0) continue;
            const double* w = &t->weights.values[i * d2];
            for (std::size_t o = 0; o < d2; ++o) out[o] += h * w[o];
        }
        break;
    }
    case LayerKind::conv1d: {
        const std::size_t F = s.filters, L = s.length, len_out = s.output_length();
        const auto pl = static_cast<std::ptrdiff_t>(s.pad_left());
        for (std::size_t p = 0; p < len_out; ++p) {
            double* o = &out[p * F];
            for (std::size_t f = 0; f < F; ++f) o[f] = t->bias[f];
            for (std::size_t j = 0; j < s.taps; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p + j) - pl;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                const double xv = in[static_cast<std::size_t>(src)];
                const double* w = &t->weights.values[j * F];
                for (std::size_t f = 0; f < F; ++f) o[f] += xv * w[f];
            }
        }
        break;
    }
    case LayerKind::maxpool1d: {
        const std::size_t C = s.channels, len_out = s.output_length();
        const auto pl = static_cast<std::ptrdiff_t>(s.pad_left());
        argmax.assign(s.out_dim, 0);
        for (std::size_t p = 0; p < len_out; ++p) {
            for (std::size_t c = 0; c < C; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t at = 0;
                for (std::size_t j = 0; j < s.pool; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p * s.stride + j) - pl;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(s.length)) continue;
                    const std::size_t idx = static_cast<std::size_t>(src) * C + c;
                    if (in[idx] > best) {
                        best = in[idx];
                        at = idx;
                    }
                }
                out[p * C + c] = best;
                argmax[p * C + c] = at;
            }
        }
        break;
    }
    case LayerKind::relu:
        for (std::size_t i = 0; i < s.in_dim; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
    case LayerKind::softmax:
        out = in;
        softmax_inplace(out);
        break;
    }
}

/// Propagates delta_out (gradient w.r.t. the layer output) back to delta_in
/// and accumulates parameter gradients into g.
inline void layer_backward(const LayerSpec& s, const LayerTensors* t, const std::vector<double>& in,
                           const std::vector<std::size_t>& argmax, const std::vector<double>& delta_out,
                           std::vector<double>& delta_in, LayerTensors* g, bool need_delta_in)
{
    if (need_delta_in) delta_in.assign(s.in_dim, 0.0);
    switch (s.kind) {
    case LayerKind::dense: {
        const std::size_t d2 = s.out_dim;
        for (std::size_t o = 0; o < d2; ++o) g->bias[o] += delta_out[o];
        for (std::size_t i = 0; i < s.in_dim; ++i) {
            const double h = in[i];
            double* gw = &g->weights.values[i * d2];
            const double* w = &t->weights.values[i * d2];
            double acc = 0.0;
            for (std::size_t o = 0; o < d2; ++o) {
                gw[o] += h * delta_out[o];
                acc += w[o] * delta_out[o];
            }
            if (need_delta_in) delta_in[i] = acc;
        }
        break;
    }
    case LayerKind::conv1d: {
        const std::size_t F = s.filters, L = s.length, len_out = s.output_length();
        const auto pl = static_cast<std::ptrdiff_t>(s.pad_left());
        for (std::size_t p = 0; p < len_out; ++p) {
            const double* d = &delta_out[p * F];
            for (std::size_t f = 0; f < F; ++f) g->bias[f] += d[f];
            for (std::size_t j = 0; j < s.taps; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p + j) - pl;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                const auto si = static_cast<std::size_t>(src);
                const double xv = in[si];
                double* gw = &g->weights.values[j * F];
                const double* w = &t->weights.values[j * F];
                double acc = 0.0;
                for (std::size_t f = 0; f < F; ++f) {
                    gw[f] += xv * d[f];
                    acc += w[f] * d[f];
                }
                if (need_delta_in) delta_in[si] += acc;
            }
        }
        break;
    }
    case LayerKind::maxpool1d:
        if (need_delta_in)
            for (std::size_t o = 0; o < s.out_dim; ++o) delta_in[argmax[o]] += delta_out[o];
        break;
    case LayerKind::relu:
        if (need_delta_in)
            for (std::size_t i = 0; i < s.in_dim; ++i) delta_in[i] = in[i] > 0.0 ? delta_out[i] : 0.0;
        break;
    case LayerKind::softmax:
        throw std::logic_error("softmax backward is fused with cross-entropy");
    }
}

} // namespace detail

inline void forward_trace(const Architecture& arch, const ModelParams& params, std::span<const double> x,
                          ForwardTrace& trace)
{
    const auto& layers = arch.layers();
    if (x.size() != arch.input_dim()) {
        throw ShapeError("layer 0: input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(arch.input_dim()));
    }
    trace.acts.resize(layers.size() + 1);
    trace.argmax.resize(layers.size());
    trace.acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const int q = arch.param_index(l);
        const LayerTensors* t = q >= 0 ? &params.layers[static_cast<std::size_t>(q)] : nullptr;
        detail::layer_forward(layers[l], t, trace.acts[l], trace.acts[l + 1], trace.argmax[l]);
    }
}

/// Class probabilities for one input.
inline std::vector<double> forward(const Architecture& arch, const ModelParams& params, std::span<const double> x)
{
    arch.check(params);
    ForwardTrace trace;
    forward_trace(arch, params, x, trace);
    return std::move(trace.acts.back());
}

inline constexpr double kLogFloor = 1e-12;

/// -log(probs[y]); probabilities below 1e-12 are clamped so the loss stays finite.
inline double cross_entropy(std::span<const double> probs, std::size_t y)
{
    if (y >= probs.size()) throw ShapeError("cross_entropy: label out of range");
    return -std::log(std::max(probs[y], kLogFloor));
}

struct LossAndGradient {
    double loss = 0.0;
    GradientSet grad;
};

/// Mean cross-entropy over the batch and its gradient w.r.t. every trainable tensor.
inline LossAndGradient backward(const Architecture& arch, const ModelParams& params, const Batch& batch)
{
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    arch.check(params);
    const auto& layers = arch.layers();
    LossAndGradient out{0.0, zeros_like<GradientTag>(params)};
    ForwardTrace trace;
    std::vector<double> delta, delta_prev;
    for (const Example* ex : batch) {
        forward_trace(arch, params, ex->x, trace);
        const auto& probs = trace.acts.back();
        if (ex->y >= probs.size()) throw ShapeError("backward: label out of range");
        out.loss += cross_entropy(probs, ex->y);
        // d(-log p_y)/d logits = p - onehot(y)
        delta = probs;
        delta[ex->y] -= 1.0;
        for (std::size_t l = layers.size() - 1; l-- > 0;) {
            const int q = arch.param_index(l);
            const LayerTensors* t = q >= 0 ? &params.layers[static_cast<std::size_t>(q)] : nullptr;
            LayerTensors* g = q >= 0 ? &out.grad.layers[static_cast<std::size_t>(q)] : nullptr;
            detail::layer_backward(layers[l], t, trace.acts[l], trace.argmax[l], delta, delta_prev, g, l > 0);
            std::swap(delta, delta_prev);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    scale(out.grad, inv);
    return out;
}

inline Batch batch_of(const std::vector<Example>& examples)
{
    Batch b;
    b.reserve(examples.size());
    for (const auto& e : examples) b.push_back(&e);
    return b;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy on a set of examples.
inline Evaluation evaluate(const Architecture& arch, const ModelParams& params, const std::vector<Example>& examples)
{
    if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
    arch.check(params);
    ForwardTrace trace;
    Evaluation ev;
    std::size_t correct = 0;
    for (const auto& ex : examples) {
        forward_trace(arch, params, ex.x, trace);
        const auto& p = trace.acts.back();
        ev.loss += cross_entropy(p, ex.y);
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        correct += best == ex.y ? 1 : 0;
    }
    ev.loss /= static_cast<double>(examples.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return ev;
}

// ---------------------------------------------------------------------------
// Update rules
// ---------------------------------------------------------------------------

/// model <- model - mu * grad
inline ModelParams sgd_step(ModelParams model, const GradientSet& grad, double mu)
{
    if (mu < 0.0) throw std::invalid_argument("sgd_step: negative step size");
    axpy(model, -mu, grad);
    return model;
}

/// velocity <- decay * velocity - mu * grad; model <- model + velocity
inline std::pair<ModelParams, GradientSet> momentum_step(ModelParams model, GradientSet velocity,
                                                         const GradientSet& grad, double mu, double decay)
{
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("momentum_step: decay must lie in [0,1)");
    if (mu < 0.0) throw std::invalid_argument("momentum_step: negative step size");
    require_congruent(velocity, grad, "momentum_step");
    scale(velocity, decay);
    axpy(velocity, -mu, grad);
    axpy(model, 1.0, velocity);
    return {std::move(model), std::move(velocity)};
}

} // namespace flsim

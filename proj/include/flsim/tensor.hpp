#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Weights (d1 x d2) and biases (d2) of one trainable layer.
struct LayerTensors {
    Matrix weights;
    std::vector<double> bias;

    friend bool operator==(const LayerTensors&, const LayerTensors&) = default;
};

/// Ordered per-layer tensors. The tag separates model parameters from
/// gradients and velocities so they cannot be mixed up by accident; the
/// arithmetic helpers below accept any combination explicitly.
template <class Tag>
struct ParamSet {
    std::vector<LayerTensors> layers;

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.values.size() + l.bias.size();
        return n;
    }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

struct ModelTag {};
struct GradientTag {};

using ModelParams = ParamSet<ModelTag>;
using GradientSet = ParamSet<GradientTag>;

template <class A, class B>
bool congruent(const ParamSet<A>& a, const ParamSet<B>& b)
{
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t q = 0; q < a.layers.size(); ++q) {
        const auto& x = a.layers[q];
        const auto& y = b.layers[q];
        if (x.weights.rows != y.weights.rows || x.weights.cols != y.weights.cols) return false;
        if (x.bias.size() != y.bias.size()) return false;
        if (x.weights.values.size() != y.weights.values.size()) return false;
    }
    return true;
}

template <class A, class B>
void require_congruent(const ParamSet<A>& a, const ParamSet<B>& b, const char* what)
{
    if (!congruent(a, b)) throw ShapeError(std::string(what) + ": parameter shapes differ");
}

/// Zero-filled set with the same shape as `like`.
template <class Out, class In>
ParamSet<Out> zeros_like(const ParamSet<In>& like)
{
    ParamSet<Out> out;
    out.layers.reserve(like.layers.size());
    for (const auto& l : like.layers) {
        out.layers.push_back({Matrix(l.weights.rows, l.weights.cols), std::vector<double>(l.bias.size(), 0.0)});
    }
    return out;
}

/// Calls fn(q, dst_span_value&, src_value) for every scalar, layer by layer.
template <class A, class B, class Fn>
void for_each_pair(ParamSet<A>& dst, const ParamSet<B>& src, Fn&& fn)
{
    for (std::size_t q = 0; q < dst.layers.size(); ++q) {
        auto& d = dst.layers[q];
        const auto& s = src.layers[q];
        for (std::size_t j = 0; j < d.weights.values.size(); ++j) fn(q, d.weights.values[j], s.weights.values[j]);
        for (std::size_t j = 0; j < d.bias.size(); ++j) fn(q, d.bias[j], s.bias[j]);
    }
}

template <class A, class Fn>
void for_each_value(ParamSet<A>& p, Fn&& fn)
{
    for (std::size_t q = 0; q < p.layers.size(); ++q) {
        for (auto& v : p.layers[q].weights.values) fn(q, v);
        for (auto& v : p.layers[q].bias) fn(q, v);
    }
}

template <class A, class Fn>
void for_each_value(const ParamSet<A>& p, Fn&& fn)
{
    for (std::size_t q = 0; q < p.layers.size(); ++q) {
        for (double v : p.layers[q].weights.values) fn(q, v);
        for (double v : p.layers[q].bias) fn(q, v);
    }
}

/// y += a * x
template <class A, class B>
void axpy(ParamSet<A>& y, double a, const ParamSet<B>& x)
{
    require_congruent(y, x, "axpy");
    for_each_pair(y, x, [a](std::size_t, double& yv, double xv) { yv += a * xv; });
}

/// y += rate[q] * x, one rate per trainable layer.
template <class A, class B>
void axpy_per_layer(ParamSet<A>& y, const std::vector<double>& rates, const ParamSet<B>& x)
{
    require_congruent(y, x, "axpy_per_layer");
    if (rates.size() < y.layers.size()) throw ShapeError("axpy_per_layer: fewer rates than layers");
    for_each_pair(y, x, [&rates](std::size_t q, double& yv, double xv) { yv += rates[q] * xv; });
}

template <class A>
void scale(ParamSet<A>& y, double a)
{
    for_each_value(y, [a](std::size_t, double& v) { v *= a; });
}

template <class A, class B>
ParamSet<A> difference(const ParamSet<A>& a, const ParamSet<B>& b)
{
    ParamSet<A> out = a;
    axpy(out, -1.0, b);
    return out;
}

template <class A>
double squared_norm(const ParamSet<A>& p)
{
    double s = 0.0;
    for_each_value(p, [&s](std::size_t, double v) { s += v * v; });
    return s;
}

template <class A>
double norm(const ParamSet<A>& p)
{
    return std::sqrt(squared_norm(p));
}

template <class A, class B>
double distance(const ParamSet<A>& a, const ParamSet<B>& b)
{
    require_congruent(a, b, "distance");
    double s = 0.0;
    for (std::size_t q = 0; q < a.layers.size(); ++q) {
        const auto& x = a.layers[q];
        const auto& y = b.layers[q];
        for (std::size_t j = 0; j < x.weights.values.size(); ++j) {
            const double d = x.weights.values[j] - y.weights.values[j];
            s += d * d;
        }
        for (std::size_t j = 0; j < x.bias.size(); ++j) {
            const double d = x.bias[j] - y.bias[j];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

template <class A, class B>
double max_abs_difference(const ParamSet<A>& a, const ParamSet<B>& b)
{
    require_congruent(a, b, "max_abs_difference");
    double m = 0.0;
    ParamSet<A> d = a;
    for_each_pair(d, b, [&m](std::size_t, double& x, double y) { m = std::max(m, std::abs(x - y)); });
    return m;
}

template <class A>
bool all_finite(const ParamSet<A>& p)
{
    bool ok = true;
    for_each_value(p, [&ok](std::size_t, double v) { ok = ok && std::isfinite(v); });
    return ok;
}

/// Concatenation of every layer's weights then biases.
template <class A>
std::vector<double> flatten(const ParamSet<A>& p)
{
    std::vector<double> out;
    out.reserve(p.parameter_count());
    for (const auto& l : p.layers) {
        out.insert(out.end(), l.weights.values.begin(), l.weights.values.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

/// Reinterprets a set under a different tag (same values).
template <class Out, class In>
ParamSet<Out> retag(ParamSet<In> p)
{
    return ParamSet<Out>{std::move(p.layers)};
}

/// Maximum of the largest pairwise distance among a set of models.
template <class A>
double max_pairwise_distance(const std::vector<ParamSet<A>>& models)
{
    double m = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j) m = std::max(m, distance(models[i], models[j]));
    return m;
}

} // namespace flsim

#pragma once

#include "flsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace flsim {

inline void check_bits(unsigned bits)
{
    if (bits != 8 && bits != 16 && bits != 32)
        throw std::invalid_argument("quantize: bits must be 8, 16 or 32 (got " + std::to_string(bits) + ")");
}

/// Symmetric uniform quantize/dequantize of one tensor in place.
/// Grid: 2^bits - 1 levels spanning [-m, m], m = max|x|, so the per-entry
/// error is at most m / (2^bits - 1). bits = 32 and all-zero tensors pass
/// through unchanged.
inline void quantize_inplace(std::span<double> x, unsigned bits)
{
    check_bits(bits);
    if (bits == 32 || x.empty()) return;
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    if (m == 0.0 || !std::isfinite(m)) return;
    const double levels = std::ldexp(1.0, static_cast<int>(bits)) - 1.0;
    const double step = 2.0 * m / levels;
    const double qmax = (levels - 1.0) / 2.0;
    for (double& v : x) v = std::clamp(std::round(v / step), -qmax, qmax) * step;
}

/// Per-tensor quantization of every weight matrix and bias vector.
template <class Tag>
ParamSet<Tag> quantize(ParamSet<Tag> p, unsigned bits = 16)
{
    for (auto& l : p.layers) {
        quantize_inplace(l.weights.values, bits);
        quantize_inplace(l.bias, bits);
    }
    return p;
}

} // namespace flsim

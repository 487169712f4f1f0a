#pragma once

// FLW1 model checkpoints: "FLW1", u16 layer count, then per trainable layer
// u32 rows, u32 cols, rows*cols f64 weights (row-major), cols f64 biases.
// All little-endian.

#include "flsim/binary_io.hpp"
#include "flsim/tensor.hpp"

#include <limits>
#include <string>
#include <vector>

namespace flsim {

inline std::vector<char> encode_checkpoint(const ModelParams& model)
{
    if (model.layers.size() > std::numeric_limits<std::uint16_t>::max()) throw ShapeError("too many layers");
    ByteWriter w;
    w.put_bytes("FLW1", 4);
    w.put(static_cast<std::uint16_t>(model.layers.size()));
    for (const auto& l : model.layers) {
        if (l.bias.size() != l.weights.cols) throw ShapeError("checkpoint: bias length must equal weight columns");
        w.put(static_cast<std::uint32_t>(l.weights.rows));
        w.put(static_cast<std::uint32_t>(l.weights.cols));
        for (double v : l.weights.values) w.put(v);
        for (double v : l.bias) w.put(v);
    }
    return std::move(w.bytes());
}

inline ModelParams decode_checkpoint(const std::vector<char>& bytes)
{
    ByteReader r(bytes);
    if (r.remaining() < 4 || r.get_string(4) != "FLW1") throw FormatError("bad checkpoint magic", 0);
    const auto count = r.get<std::uint16_t>();
    ModelParams model;
    for (std::uint16_t q = 0; q < count; ++q) {
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        r.require((n + cols) * sizeof(double), "truncated layer data");
        LayerTensors t{Matrix(rows, cols), std::vector<double>(cols)};
        for (auto& v : t.weights.values) v = r.get<double>();
        for (auto& v : t.bias) v = r.get<double>();
        model.layers.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
    return model;
}

inline void save_checkpoint(const std::string& path, const ModelParams& model)
{
    write_file(path, encode_checkpoint(model));
}

inline ModelParams load_checkpoint(const std::string& path)
{
    return decode_checkpoint(read_file(path));
}

} // namespace flsim

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/tensor.hpp"

namespace tinyadapt {

/// 16-level NormalFloat grid: 8 positive and 7 negative standard-normal
/// quantiles taken at evenly spaced probabilities between 0.5 and
/// offset = (1 - 1/30 + 1 - 1/32) / 2, plus an exact zero, scaled so the
/// extremes are -1 and +1. The test suite regenerates these from an
/// inverse-CDF routine.
using Nf4Codebook = std::array<float, 16>;

inline constexpr double kNf4Offset = 0.5 * ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0));
inline constexpr const char* kNf4CodebookId = "nf4";
inline constexpr std::uint8_t kNf4ZeroCode = 7;

inline const Nf4Codebook& build_nf4_codebook() {
    static constexpr Nf4Codebook kCodebook{
        -1.0f,
        -0.696192805632343f,
        -0.5250729594465005f,
        -0.3949174259199071f,
        -0.28444130892108205f,
        -0.1847734028004556f,
        -0.09104997598578049f,
        0.0f,
        0.07958031495840909f,
        0.1609301443802907f,
        0.2461122513474594f,
        0.3379151367131279f,
        0.44070973186421625f,
        0.5626168879699849f,
        0.7229566441594734f,
        1.0f,
    };
    return kCodebook;
}

/// Largest distance between neighbouring codebook levels.
inline double nf4_max_gap() {
    const auto& cb = build_nf4_codebook();
    double g = 0.0;
    for (std::size_t i = 1; i < cb.size(); ++i) g = std::max(g, static_cast<double>(cb[i]) - cb[i - 1]);
    return g;
}

/// Blockwise absmax-scaled 4-bit codes over the row-major flattening of a
/// matrix. Code i lives in byte i/2, low nibble for even i. When the element
/// count is odd the final high nibble is zero padding; the last block may be
/// shorter than block_size.
struct QuantizedMatrix {
    Shape shape;
    std::size_t block_size = 64;
    std::vector<float> scales;
    std::vector<std::uint8_t> codes;
    std::string codebook = kNf4CodebookId;

    std::size_t numel() const { return shape_numel(shape); }
    std::size_t block_count() const { return (numel() + block_size - 1) / block_size; }

    std::uint8_t code(std::size_t i) const { return (codes[i / 2] >> (4 * (i % 2))) & 0xF; }

    bool operator==(const QuantizedMatrix&) const = default;
};

/// Index of the nearest codebook level; ties resolve to the lower index.
inline std::uint8_t nearest_nf4_code(double normalized) {
    const auto& cb = build_nf4_codebook();
    std::uint8_t best = 0;
    double best_dist = std::abs(normalized - cb[0]);
    for (std::uint8_t i = 1; i < cb.size(); ++i) {
        const double dist = std::abs(normalized - cb[i]);
        if (dist < best_dist) {
            best = i;
            best_dist = dist;
        }
    }
    return best;
}

inline QuantizedMatrix quantize_nf4(const Tensor& m, std::size_t block_size = 64) {
    if (block_size < 2) throw ConfigError("quantize_nf4: block_size must be >= 2");
    check_finite<float>(m.data(), "quantize_nf4 input");
    QuantizedMatrix q;
    q.shape = m.shape();
    q.block_size = block_size;
    const auto values = m.data();
    const std::size_t n = values.size();
    q.scales.resize(q.block_count());
    q.codes.assign((n + 1) / 2, 0);
    for (std::size_t b = 0; b < q.scales.size(); ++b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(n, begin + block_size);
        float absmax = 0.0f;
        for (std::size_t i = begin; i < end; ++i) absmax = std::max(absmax, std::abs(values[i]));
        q.scales[b] = absmax;
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint8_t c =
                absmax == 0.0f ? kNf4ZeroCode
                               : nearest_nf4_code(static_cast<double>(values[i]) / static_cast<double>(absmax));
            q.codes[i / 2] |= static_cast<std::uint8_t>(c << (4 * (i % 2)));
        }
    }
    return q;
}

inline Tensor dequantize_nf4(const QuantizedMatrix& q) {
    if (q.codebook != kNf4CodebookId) throw FormatError("unknown codebook '" + q.codebook + "'");
    if (q.block_size < 2) throw FormatError("block_size must be >= 2");
    if (q.shape.empty()) throw FormatError("quantized matrix has no shape");
    const std::size_t n = q.numel();
    if (q.codes.size() != (n + 1) / 2) {
        throw FormatError("expected " + std::to_string((n + 1) / 2) + " code bytes, found " +
                          std::to_string(q.codes.size()));
    }
    if (q.scales.size() != q.block_count()) {
        throw FormatError("expected " + std::to_string(q.block_count()) + " block scales, found " +
                          std::to_string(q.scales.size()));
    }
    if (n % 2 == 1 && (q.codes.back() >> 4) != 0) throw FormatError("non-zero padding nibble");
    for (const float s : q.scales) {
        if (!(s >= 0.0f) || !std::isfinite(s)) throw FormatError("block scale must be finite and >= 0");
    }
    const auto& cb = build_nf4_codebook();
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = cb[q.code(i)] * q.scales[i / q.block_size];
    return Tensor(q.shape, std::move(out));
}

}  // namespace tinyadapt

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmd/autodiff.hpp"
#include "lmd/tensor.hpp"

namespace lmd::mx {

inline constexpr std::size_t kBlockSize = 32;
inline constexpr int kScaleExpMin = -127;
inline constexpr int kScaleExpMax = 127;

enum class ElementFormat { e2m3, e2m1 };

struct FormatInfo {
    std::string_view name;
    int exponent_bits;
    int mantissa_bits;
    int bias;
    int max_unbiased_exp;  // exponent of the largest normal binade
    double max_value;
    int code_count;
};

const FormatInfo& format_info(ElementFormat fmt) noexcept;
ElementFormat parse_format(std::string_view name);  // "mxfp6" | "mxfp4" | "e2m3" | "e2m1"

// Element codes: sign bit above exponent bits above mantissa bits.
//   e > 0: (-1)^s * 2^(e - bias) * (1 + m / 2^M)
//   e = 0: (-1)^s * 2^(1 - bias) * (m / 2^M)
double decode_element(std::uint8_t code, ElementFormat fmt);

// Nearest representable value, ties to even mantissa, saturating at the
// format maximum. NaN throws.
std::uint8_t encode_element(double x, ElementFormat fmt);

// Nearest bfloat16 value (8 significant bits, float32 exponent range), ties
// to even. Overflow returns +/-infinity; signed zeros are preserved.
double round_bf16(double x);

struct MxBlock {
    ElementFormat format = ElementFormat::e2m3;
    std::int8_t scale_exp = 0;
    std::size_t length = kBlockSize;  // < 32 only for a ragged tail block
    std::array<std::uint8_t, kBlockSize> codes{};
};

// Shared exponent floor(log2 max|v|) - max_unbiased_exp, clamped to
// [kScaleExpMin, kScaleExpMax]; each element encodes v / 2^scale_exp.
// Accepts 1..32 finite values; shorter inputs are zero padded.
MxBlock quantize_block(std::span<const double> values, ElementFormat fmt);
std::vector<double> dequantize_block(const MxBlock& block);

// Blocks a contiguous vector into 32-element chunks (last chunk ragged) and
// returns the dequantized values.
std::vector<double> quantize_dequantize(std::span<const double> values, ElementFormat fmt);

// bf16 -> MX -> dequantize for the row-major matrix `t`, blocking along rows
// (each row is a contraction vector) or along columns.
enum class BlockAxis { rows, columns };
Tensor quantize_matrix(const Tensor& t, ElementFormat fmt, BlockAxis axis);

// Forward transform for Tape::matmul: lhs blocked along its rows, rhs along
// its columns (both the contraction axis), output cast to bf16.
MatmulHook mx_matmul_hook(ElementFormat fmt);

// One line per element: "index, 0xCC, decoded".
std::string inspect_block(const MxBlock& block, std::size_t first_index = 0);

} // namespace lmd::mx

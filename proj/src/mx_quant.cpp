#include "lmd/mx_quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lmd::mx {

namespace {

constexpr FormatInfo kE2M3{"mxfp6-e2m3", 2, 3, 1, 2, 7.5, 64};
constexpr FormatInfo kE2M1{"mxfp4-e2m1", 2, 1, 1, 2, 6.0, 16};

// Largest finite bfloat16: (2 - 2^-7) * 2^127.
constexpr double kBf16Max = 0x1.FEp127;

double round_half_even(double v) {
    const double lo = std::floor(v);
    const double diff = v - lo;
    if (diff > 0.5) return lo + 1.0;
    if (diff < 0.5) return lo;
    return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

} // namespace

const FormatInfo& format_info(ElementFormat fmt) noexcept { return fmt == ElementFormat::e2m3 ? kE2M3 : kE2M1; }

ElementFormat parse_format(std::string_view name) {
    if (name == "mxfp6" || name == "e2m3" || name == "mxfp6-e2m3") return ElementFormat::e2m3;
    if (name == "mxfp4" || name == "e2m1" || name == "mxfp4-e2m1") return ElementFormat::e2m1;
    throw std::invalid_argument("unknown MX element format '" + std::string(name) + "' (expected mxfp6 or mxfp4)");
}

double decode_element(std::uint8_t code, ElementFormat fmt) {
    const auto& f = format_info(fmt);
    if (code >= f.code_count) throw std::out_of_range("element code out of range for " + std::string(f.name));
    const int sign = (code >> (f.exponent_bits + f.mantissa_bits)) & 1;
    const int exp = (code >> f.mantissa_bits) & ((1 << f.exponent_bits) - 1);
    const int mant = code & ((1 << f.mantissa_bits) - 1);
    const double frac = static_cast<double>(mant) / static_cast<double>(1 << f.mantissa_bits);
    const double mag = exp == 0 ? std::ldexp(frac, 1 - f.bias) : std::ldexp(1.0 + frac, exp - f.bias);
    return sign ? -mag : mag;
}

std::uint8_t encode_element(double x, ElementFormat fmt) {
    if (std::isnan(x)) throw std::invalid_argument("cannot encode NaN as an MX element");
    const auto& f = format_info(fmt);
    const int m_bits = f.mantissa_bits;
    const std::uint8_t sign = std::signbit(x) ? static_cast<std::uint8_t>(1u << (f.exponent_bits + m_bits)) : 0;

    double mag = std::abs(x);
    const double min_normal = std::ldexp(1.0, 1 - f.bias);
    if (mag >= f.max_value) {
        mag = f.max_value;
    } else if (mag > 0.0) {
        const int e = mag < min_normal ? 1 - f.bias : std::ilogb(mag);
        const double ulp = std::ldexp(1.0, e - m_bits);
        mag = std::min(round_half_even(mag / ulp) * ulp, f.max_value);
    }

    int exp_field = 0;
    int mant_field = 0;
    if (mag >= min_normal) {
        const int e = std::ilogb(mag);
        exp_field = e + f.bias;
        mant_field = static_cast<int>(std::ldexp(mag, -e) * (1 << m_bits)) - (1 << m_bits);
    } else {
        mant_field = static_cast<int>(std::ldexp(mag, m_bits - (1 - f.bias)));
    }
    return static_cast<std::uint8_t>(sign | (exp_field << m_bits) | mant_field);
}

double round_bf16(double x) {
    if (x == 0.0 || !std::isfinite(x)) return x;
    const double mag = std::abs(x);
    // bf16 keeps 8 significant bits; below 2^-126 the spacing is fixed at 2^-133.
    const int e = std::max(std::ilogb(mag), -126);
    const double ulp = std::ldexp(1.0, e - 7);
    double rounded = round_half_even(mag / ulp) * ulp;
    if (rounded > kBf16Max) rounded = std::numeric_limits<double>::infinity();
    return std::copysign(rounded, x);
}

MxBlock quantize_block(std::span<const double> values, ElementFormat fmt) {
    if (values.empty() || values.size() > kBlockSize)
        throw std::invalid_argument("an MX block holds 1 to 32 values, got " + std::to_string(values.size()));
    double max_abs = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("MX block input must be finite");
        max_abs = std::max(max_abs, std::abs(v));
    }
    MxBlock block;
    block.format = fmt;
    block.length = values.size();
    int scale = 0;
    if (max_abs > 0.0) {
        scale = std::clamp(std::ilogb(max_abs) - format_info(fmt).max_unbiased_exp, kScaleExpMin, kScaleExpMax);
    }
    block.scale_exp = static_cast<std::int8_t>(scale);
    for (std::size_t i = 0; i < values.size(); ++i) block.codes[i] = encode_element(std::ldexp(values[i], -scale), fmt);
    return block;
}

std::vector<double> dequantize_block(const MxBlock& block) {
    std::vector<double> out(block.length);
    for (std::size_t i = 0; i < block.length; ++i)
        out[i] = std::ldexp(decode_element(block.codes[i], block.format), block.scale_exp);
    return out;
}

std::vector<double> quantize_dequantize(std::span<const double> values, ElementFormat fmt) {
    std::vector<double> out;
    out.reserve(values.size());
    for (std::size_t start = 0; start < values.size(); start += kBlockSize) {
        const auto chunk = values.subspan(start, std::min(kBlockSize, values.size() - start));
        const auto deq = dequantize_block(quantize_block(chunk, fmt));
        out.insert(out.end(), deq.begin(), deq.end());
    }
    return out;
}

Tensor quantize_matrix(const Tensor& t, ElementFormat fmt, BlockAxis axis) {
    if (t.rank() != 2) throw ShapeError("quantize_matrix: rank-2 tensor required, got " + shape_string(t.shape()));
    const std::size_t rows = t.rows(), cols = t.cols();
    Tensor out(t.shape());
    std::vector<double> line;
    if (axis == BlockAxis::rows) {
        line.resize(cols);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) line[c] = round_bf16(t.at(r, c));
            const auto q = quantize_dequantize(line, fmt);
            std::copy(q.begin(), q.end(), &out[r * cols]);
        }
    } else {
        line.resize(rows);
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t r = 0; r < rows; ++r) line[r] = round_bf16(t.at(r, c));
            const auto q = quantize_dequantize(line, fmt);
            for (std::size_t r = 0; r < rows; ++r) out.at(r, c) = q[r];
        }
    }
    return out;
}

MatmulHook mx_matmul_hook(ElementFormat fmt) {
    MatmulHook hook;
    hook.lhs = [fmt](const Tensor& a) { return quantize_matrix(a, fmt, BlockAxis::rows); };
    hook.rhs = [fmt](const Tensor& b) { return quantize_matrix(b, fmt, BlockAxis::columns); };
    hook.output = [](const Tensor& c) {
        Tensor out = c;
        for (double& v : out.values()) v = round_bf16(v);
        return out;
    };
    return hook;
}

std::string inspect_block(const MxBlock& block, std::size_t first_index) {
    const auto decoded = dequantize_block(block);
    std::ostringstream out;
    char buf[96];
    for (std::size_t i = 0; i < block.length; ++i) {
        std::snprintf(buf, sizeof buf, "%zu, 0x%02X, %.17g\n", first_index + i, static_cast<unsigned>(block.codes[i]),
                      decoded[i]);
        out << buf;
    }
    return out.str();
}

} // namespace lmd::mx

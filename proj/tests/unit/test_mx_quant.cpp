#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <set>

#include "lmd/lognormal.hpp"
#include "lmd/mx_quant.hpp"

using namespace lmd;
using namespace lmd::mx;

namespace {

// Independent grid: every value a format can hold, built from the value
// description rather than the codec.
std::vector<double> enumerate_grid(ElementFormat fmt) {
    const int mbits = fmt == ElementFormat::e2m3 ? 3 : 1;
    const double steps = std::ldexp(1.0, mbits);
    std::vector<double> grid;
    for (int e = 0; e < 4; ++e)
        for (int m = 0; m < (1 << mbits); ++m) {
            const double v = e == 0 ? (m / steps) : std::ldexp(1.0 + m / steps, e - 1);
            grid.push_back(v);
            grid.push_back(-v);
        }
    return grid;
}

double brute_force_nearest_distance(double x, ElementFormat fmt) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < format_info(fmt).code_count; ++c)
        best = std::min(best, std::abs(x - decode_element(static_cast<std::uint8_t>(c), fmt)));
    return best;
}

} // namespace

TEST_CASE("format descriptions") {
    CHECK(format_info(ElementFormat::e2m3).max_value == 7.5);
    CHECK(format_info(ElementFormat::e2m1).max_value == 6.0);
    CHECK(format_info(ElementFormat::e2m3).code_count == 64);
    CHECK(format_info(ElementFormat::e2m1).code_count == 16);
    CHECK(format_info(ElementFormat::e2m3).bias == 1);
    CHECK(parse_format("mxfp6") == ElementFormat::e2m3);
    CHECK(parse_format("mxfp4") == ElementFormat::e2m1);
    CHECK_THROWS(parse_format("mxfp8"));
}

TEST_CASE("decoded code sets equal the enumerated grids") {
    for (auto fmt : {ElementFormat::e2m3, ElementFormat::e2m1}) {
        std::set<double> decoded, expected;
        for (int c = 0; c < format_info(fmt).code_count; ++c) decoded.insert(decode_element(static_cast<std::uint8_t>(c), fmt));
        for (double v : enumerate_grid(fmt)) expected.insert(v);
        CHECK(decoded == expected);
    }
    // spot values of the E2M3 grid
    std::set<double> g;
    for (double v : enumerate_grid(ElementFormat::e2m3)) g.insert(v);
    for (double v : {0.125, 0.875, 1.0, 1.875, 2.0, 3.75, 4.0, 7.5}) {
        CHECK(g.count(v) == 1);
        CHECK(g.count(-v) == 1);
    }
}

TEST_CASE("every code round-trips") {
    for (auto fmt : {ElementFormat::e2m3, ElementFormat::e2m1})
        for (int c = 0; c < format_info(fmt).code_count; ++c) {
            const auto code = static_cast<std::uint8_t>(c);
            CHECK(encode_element(decode_element(code, fmt), fmt) == code);
        }
}

TEST_CASE("zero encodes to the positive zero code") {
    CHECK(encode_element(0.0, ElementFormat::e2m3) == 0);
    CHECK(decode_element(encode_element(0.0, ElementFormat::e2m3), ElementFormat::e2m3) == 0.0);
}

TEST_CASE("nearest code examples") {
    CHECK(decode_element(encode_element(5.1, ElementFormat::e2m1), ElementFormat::e2m1) == 6.0);
    CHECK(decode_element(encode_element(4.9, ElementFormat::e2m1), ElementFormat::e2m1) == 4.0);
    CHECK(decode_element(encode_element(100.0, ElementFormat::e2m1), ElementFormat::e2m1) == 6.0);
    CHECK(decode_element(encode_element(-100.0, ElementFormat::e2m3), ElementFormat::e2m3) == -7.5);
    CHECK_THROWS(encode_element(std::nan(""), ElementFormat::e2m3));
}

TEST_CASE("ties go to the even mantissa") {
    // E2M1 grid around 5: {4, 6}; 5 ties, 4 has mantissa 0
    CHECK(decode_element(encode_element(5.0, ElementFormat::e2m1), ElementFormat::e2m1) == 4.0);
    // 2.5 ties between 2 (m=0) and 3 (m=1)
    CHECK(decode_element(encode_element(2.5, ElementFormat::e2m1), ElementFormat::e2m1) == 2.0);
    // 3.5 ties between 3 (m=1) and 4 (m=0 of the next binade)
    CHECK(decode_element(encode_element(3.5, ElementFormat::e2m1), ElementFormat::e2m1) == 4.0);
    // subnormal tie 0.25 between 0 and 0.5
    CHECK(decode_element(encode_element(0.25, ElementFormat::e2m1), ElementFormat::e2m1) == 0.0);
    // E2M3: 1.0625 between 1.0 (m=0) and 1.125 (m=1)
    CHECK(decode_element(encode_element(1.0625, ElementFormat::e2m3), ElementFormat::e2m3) == 1.0);
    CHECK(decode_element(encode_element(1.1875, ElementFormat::e2m3), ElementFormat::e2m3) == 1.25);
}

TEST_CASE("nearest rounding against a brute-force oracle") {
    RngStream rng(123, 0);
    for (auto fmt : {ElementFormat::e2m3, ElementFormat::e2m1}) {
        int violations = 0;
        for (int i = 0; i < 200000; ++i) {
            const double x = (rng.uniform() * 2.0 - 1.0) * 9.0;
            const double got = std::abs(x - decode_element(encode_element(x, fmt), fmt));
            if (got > brute_force_nearest_distance(x, fmt)) ++violations;
        }
        CHECK(violations == 0);
    }
}

TEST_CASE("encoding is monotone") {
    for (auto fmt : {ElementFormat::e2m3, ElementFormat::e2m1}) {
        double prev = -std::numeric_limits<double>::infinity();
        for (double x = -9.0; x <= 9.0; x += 1.0 / 1024) {
            const double q = decode_element(encode_element(x, fmt), fmt);
            CHECK(q >= prev);
            prev = q;
        }
    }
}

TEST_CASE("bf16 rounding") {
    CHECK(round_bf16(1.0) == 1.0);
    CHECK(round_bf16(1.005859375) == 1.0078125);
    // exact midpoint between 1 and 1 + 2^-7 goes to the even neighbour 1
    CHECK(round_bf16(1.0 + std::ldexp(1.0, -8)) == 1.0);
    CHECK(round_bf16(1.0 + 3 * std::ldexp(1.0, -8)) == 1.0 + std::ldexp(1.0, -6));
    const double nz = round_bf16(-0.0);
    CHECK(nz == 0.0);
    CHECK(std::signbit(nz));
    CHECK(std::isinf(round_bf16(1e39)));
    CHECK(round_bf16(-1e39) < 0.0);
    CHECK(round_bf16(3.0e38) == doctest::Approx(3.0e38).epsilon(1e-2));
    // smallest bf16 subnormal is 2^-133
    CHECK(round_bf16(std::ldexp(1.0, -133)) == std::ldexp(1.0, -133));
    CHECK(round_bf16(std::ldexp(1.0, -135)) == 0.0);
    // results carry at most 8 significant bits
    RngStream rng(8, 0);
    for (int i = 0; i < 10000; ++i) {
        const double r = round_bf16((rng.uniform() - 0.5) * 1e4);
        int exp = 0;
        const double frac = std::frexp(r, &exp);
        CHECK(std::ldexp(frac, 8) == std::round(std::ldexp(frac, 8)));
    }
}

TEST_CASE("block quantization examples") {
    SUBCASE("zeros") {
        const std::vector<double> z(32, 0.0);
        const auto b = quantize_block(z, ElementFormat::e2m3);
        CHECK(b.scale_exp == 0);
        for (double v : dequantize_block(b)) CHECK(v == 0.0);
    }
    SUBCASE("max 1.0") {
        std::vector<double> v(32, 0.0);
        v[0] = 1.0;
        v[1] = -0.5;
        const auto b = quantize_block(v, ElementFormat::e2m3);
        CHECK(b.scale_exp == -2);
        CHECK(decode_element(b.codes[0], ElementFormat::e2m3) == 4.0);
        CHECK(b.codes[0] == 0x18);
        CHECK(dequantize_block(b)[0] == 1.0);
    }
    SUBCASE("3.0 and 0.07") {
        std::vector<double> v(32, 0.0);
        v[0] = 3.0;
        v[1] = 0.07;
        const auto b = quantize_block(v, ElementFormat::e2m3);
        CHECK(b.scale_exp == -1);
        const auto d = dequantize_block(b);
        CHECK(d[0] == 3.0);
        CHECK(d[1] == 0.0625);
    }
    CHECK_THROWS(quantize_block(std::vector<double>(33, 1.0), ElementFormat::e2m3));
    CHECK_THROWS(quantize_block(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}, ElementFormat::e2m3));
}

TEST_CASE("block maxima are 7.5 and 6 times the scale") {
    for (int s : {-20, -3, 0, 4, 30}) {
        std::vector<double> v(32);
        for (std::size_t i = 0; i < 32; ++i) v[i] = std::ldexp(static_cast<double>(i) / 31.0 * 7.99, s);
        const auto b6 = quantize_block(v, ElementFormat::e2m3);
        const auto b4 = quantize_block(v, ElementFormat::e2m1);
        CHECK(b6.scale_exp == s);
        CHECK(b4.scale_exp == s);
        const auto d6 = dequantize_block(b6);
        const auto d4 = dequantize_block(b4);
        CHECK(*std::max_element(d6.begin(), d6.end()) == std::ldexp(7.5, s));
        CHECK(*std::max_element(d4.begin(), d4.end()) == std::ldexp(6.0, s));
    }
}

TEST_CASE("scale exponent is clamped to the int8 range") {
    const std::vector<double> tiny{std::ldexp(1.0, -300)};
    CHECK(quantize_block(tiny, ElementFormat::e2m3).scale_exp == kScaleExpMin);
    const std::vector<double> huge{std::ldexp(1.0, 300)};
    const auto b = quantize_block(huge, ElementFormat::e2m3);
    CHECK(b.scale_exp == kScaleExpMax);
    CHECK(dequantize_block(b)[0] == std::ldexp(7.5, kScaleExpMax));
}

TEST_CASE("quantization is idempotent") {
    RngStream rng(4, 2);
    for (auto fmt : {ElementFormat::e2m3, ElementFormat::e2m1})
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> v(32);
            const double spread = std::ldexp(1.0, static_cast<int>(rng.below(20)) - 10);
            for (double& x : v) x = rng.normal() * spread;
            const auto q1 = dequantize_block(quantize_block(v, fmt));
            const auto b2 = quantize_block(q1, fmt);
            CHECK(dequantize_block(b2) == q1);
            CHECK(b2.codes == quantize_block(v, fmt).codes);
        }
}

TEST_CASE("relative error on single-binade E2M3 blocks") {
    RngStream rng(6, 0);
    double worst = 0.0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int e = static_cast<int>(rng.below(16)) - 8;
        std::vector<double> v(32);
        for (double& x : v) x = std::ldexp(1.0 + rng.uniform() * 0.999, e) * (rng.uniform() < 0.5 ? -1 : 1);
        const auto q = quantize_dequantize(v, ElementFormat::e2m3);
        for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(q[i] - v[i]) / std::abs(v[i]));
    }
    CHECK(worst <= 0.0625);
}

TEST_CASE("ragged vectors are blocked in 32s") {
    std::vector<double> v(40, 0.001);
    v[35] = 7.0;
    const auto q = quantize_dequantize(v, ElementFormat::e2m3);
    CHECK(q.size() == 40);
    CHECK(q[35] == 7.0);
    // the first block keeps its own fine scale
    CHECK(q[0] == doctest::Approx(0.001).epsilon(0.07));
}

TEST_CASE("matrix blocking follows the contraction axis") {
    RngStream rng(10, 0);
    Tensor a(Shape{3, 40});
    for (double& x : a.values()) x = rng.normal() * 3;
    const auto by_rows = quantize_matrix(a, ElementFormat::e2m1, BlockAxis::rows);
    const auto by_cols = quantize_matrix(transpose(a), ElementFormat::e2m1, BlockAxis::columns);
    CHECK(transpose(by_cols) == by_rows);
    for (std::size_t r = 0; r < 3; ++r) {
        std::vector<double> row(a.values().begin() + r * 40, a.values().begin() + (r + 1) * 40);
        for (double& x : row) x = round_bf16(x);
        const auto q = quantize_dequantize(row, ElementFormat::e2m1);
        for (std::size_t c = 0; c < 40; ++c) CHECK(by_rows.at(r, c) == q[c]);
    }
}

TEST_CASE("hooked 1x32 by 32x1 against a hand-quantized scalar") {
    // a: 0.1 * (1..32); bf16 leaves these near, max 3.2 -> scale -1, grid step 0.125 above 2 (scaled 4..7.5 step 0.5)
    Tensor a(Shape{1, 32}), b(Shape{32, 1});
    for (std::size_t i = 0; i < 32; ++i) {
        a[i] = 0.1 * static_cast<double>(i + 1);
        b[i] = 1.0;
    }
    double expect = 0.0;
    for (std::size_t i = 0; i < 32; ++i) {
        const double scaled = round_bf16(a[i]) * 2.0;  // divide by 2^-1
        double best = 0.0, dist = 1e9;
        for (double g : enumerate_grid(ElementFormat::e2m3))
            if (std::abs(g - scaled) < dist) dist = std::abs(g - scaled), best = g;
        expect += best / 2.0;
    }
    Tape t(mx_matmul_hook(ElementFormat::e2m3));
    const auto& y = t.value(t.matmul(t.leaf(a), t.leaf(b)));
    CHECK(y.item() == round_bf16(expect));
}

TEST_CASE("inspect dump lines") {
    std::vector<double> v{1.0, -0.5, 0.07};
    const auto b = quantize_block(v, ElementFormat::e2m3);
    const auto text = inspect_block(b, 5);
    CHECK(text.rfind("5, 0x18, 1\n", 0) == 0);
    CHECK(text.find("6, 0x30, -0.5\n") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

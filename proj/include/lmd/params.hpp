#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lmd/tensor.hpp"

namespace lmd {

// How a parameter group is initialized and regularized. Scale parameters are
// normalization gains initialized to one.
enum class ParamKind { weight, bias, scale };

std::string_view to_string(ParamKind kind) noexcept;

struct NamedParam {
    std::string name;
    ParamKind kind = ParamKind::weight;
    Tensor value;
};

using ParamSet = std::vector<NamedParam>;

} // namespace lmd

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lmd/params.hpp"
#include "lmd/tensor.hpp"

namespace lmd::detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

inline ParamKind parse_kind(const std::string& s) {
    if (s == "weight") return ParamKind::weight;
    if (s == "bias") return ParamKind::bias;
    if (s == "scale") return ParamKind::scale;
    throw std::invalid_argument("unknown parameter kind '" + s + "'");
}

inline nlohmann::json parse_checkpoint(std::string_view text, std::string_view optimizer) {
    auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "lmd-checkpoint") throw std::invalid_argument("not an lmd checkpoint");
    if (j.at("optimizer").get<std::string>() != optimizer)
        throw std::invalid_argument("checkpoint holds optimizer '" + j.at("optimizer").get<std::string>() +
                                    "', expected '" + std::string(optimizer) + "'");
    return j;
}

} // namespace lmd::detail

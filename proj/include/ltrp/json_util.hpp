#pragma once

#include <json.hpp>

#include "ltrp/nn.hpp"

namespace ltrp {

inline nlohmann::json to_json(const nn::StackShape& s) {
  return {{"depth", s.depth}, {"width", s.width}, {"heads", s.heads}, {"mlp_ratio", s.mlp_ratio}};
}

inline nn::StackShape stack_shape_from_json(const nlohmann::json& j, const nn::StackShape& defaults) {
  nn::StackShape s = defaults;
  s.depth = j.value("depth", s.depth);
  s.width = j.value("width", s.width);
  s.heads = j.value("heads", s.heads);
  s.mlp_ratio = j.value("mlp_ratio", s.mlp_ratio);
  return s;
}

inline void validate_stack(const nn::StackShape& s, const char* what) {
  if (s.depth < 0 || s.width < 4 || s.heads < 1 || s.mlp_ratio < 1 || s.width % s.heads != 0)
    throw InvalidInput(std::string(what) + ": invalid transformer shape");
}

}  // namespace ltrp

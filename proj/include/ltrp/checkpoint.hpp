#pragma once

// Versioned checkpoint container shared by every trained model.
//
// Layout (little-endian):
//   magic "LTRPCKPT" | u32 format version | u64 length + canonical config JSON
//   u64 array count | per array: u32 name length, name, u32 rows, u32 cols,
//   rows*cols float32 values (row-major)

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ltrp/nn.hpp"

namespace ltrp {

inline constexpr char kCheckpointMagic[8] = {'L', 'T', 'R', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<NamedArray> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and rejects a checkpoint whose stored config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const nlohmann::json& expected);

template <class Module>
std::vector<NamedArray> export_params(const Module& module) {
  std::vector<NamedArray> out;
  module.for_each_param([&](const nn::Param<float>& p) {
    NamedArray a;
    a.name = p.name;
    a.rows = static_cast<std::uint32_t>(p.value.rows());
    a.cols = static_cast<std::uint32_t>(p.value.cols());
    a.data.assign(p.value.data(), p.value.data() + p.value.size());
    out.push_back(std::move(a));
  });
  return out;
}

/// Copies arrays into the module's parameters by name; every parameter must be present.
template <class Module>
void import_params(Module& module, const std::vector<NamedArray>& arrays) {
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  module.for_each_param([&](nn::Param<float>& p) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw InvalidInput("checkpoint is missing parameter '" + p.name + "'");
    const NamedArray& a = *it->second;
    if (a.rows != p.value.rows() || a.cols != p.value.cols())
      throw InvalidInput("checkpoint parameter '" + p.name + "' has the wrong shape");
    std::copy(a.data.begin(), a.data.end(), p.value.data());
  });
}

}  // namespace ltrp

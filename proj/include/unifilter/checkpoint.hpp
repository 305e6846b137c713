#pragma once

// Named-tensor checkpoint: one JSON document with a versioned format header,
// free-form metadata, and an ordered list of {name, rows, cols, data}.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "unifilter/tensor.hpp"

namespace unifilter::nn {

inline constexpr const char* kCheckpointFormat = "unifilter-tensors-v1";

struct NamedTensor {
  std::string name;
  Tensor2D value;
};

struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor2D& get(const std::string& name) const;
};

nlohmann::json to_json(const TensorFile& f);
TensorFile tensor_file_from_json(const nlohmann::json& j);

void save_tensor_file(const std::filesystem::path& path, const TensorFile& f);
TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace unifilter::nn

#include "unifilter/checkpoint.hpp"

#include <fstream>

#include "unifilter/error.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::nn {

const Tensor2D& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

nlohmann::json to_json(const TensorFile& f) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : f.tensors)
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"data", t.value.vec()}});
  return {{"format", kCheckpointFormat}, {"meta", f.meta}, {"tensors", std::move(tensors)}};
}

TensorFile tensor_file_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw DataError(std::string("checkpoint format header mismatch (expected ") + kCheckpointFormat + ")");
  TensorFile f;
  try {
    f.meta = j.value("meta", nlohmann::json::object());
    for (const auto& t : j.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      f.tensors.push_back({t.at("name").get<std::string>(), Tensor2D(rows, cols, t.at("data").get<std::vector<double>>())});
      if (!f.tensors.back().value.all_finite())
        throw DataError("non-finite value in tensor '" + f.tensors.back().name + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return f;
}

void save_tensor_file(const std::filesystem::path& path, const TensorFile& f) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_json(f).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  return tensor_file_from_json(read_json_file(path));
}

}  // namespace unifilter::nn

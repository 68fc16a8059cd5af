#include "longstory/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace longstory {

namespace {

void put_u64_le(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

void put_u32_le(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | p[i];
  return x;
}

std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t x = 0;
  for (int i = 3; i >= 0; --i) x = (x << 8) | p[i];
  return x;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, nn::Tensor>& tensors,
                     const std::string& metadata_json, const std::string& dtype) {
  if (dtype != "f64" && dtype != "f32")
    throw std::invalid_argument("save_checkpoint: dtype must be f64 or f32, got " + dtype);
  const std::size_t elem_size = dtype == "f64" ? 8 : 4;

  nlohmann::ordered_json header;
  header["format"] = "longstory-checkpoint";
  header["version"] = 1;
  header["dtype"] = dtype;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {  // std::map iterates in name order
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = {t.rows(), t.cols()};
    e["offset"] = offset;
    e["bytes"] = t.size() * elem_size;
    entries.push_back(e);
    for (double v : t.value()) {
      if (elem_size == 8)
        put_u64_le(payload, std::bit_cast<std::uint64_t>(v));
      else
        put_u32_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    offset += t.size() * elem_size;
  }
  header["params"] = entries;
  header["metadata"] = nlohmann::json::parse(metadata_json);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path + " for writing");
  out << header.dump() << "\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("load_checkpoint: missing header in " + path);
  auto header = nlohmann::json::parse(header_line);
  if (header.value("format", "") != "longstory-checkpoint")
    throw std::runtime_error("load_checkpoint: " + path + " is not a longstory checkpoint");
  Checkpoint ckpt;
  ckpt.dtype = header.at("dtype").get<std::string>();
  const std::size_t elem_size = ckpt.dtype == "f64" ? 8 : 4;
  ckpt.metadata_json = header.at("metadata").dump();

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& e : header.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    const std::size_t rows = e.at("shape")[0].get<std::size_t>();
    const std::size_t cols = e.at("shape")[1].get<std::size_t>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = e.at("bytes").get<std::uint64_t>();
    if (offset + nbytes > payload.size())
      throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    if (nbytes != rows * cols * elem_size)
      throw std::runtime_error("load_checkpoint: size mismatch for '" + name + "'");
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const unsigned char* p = bytes + offset + i * elem_size;
      values[i] = elem_size == 8
                      ? std::bit_cast<double>(get_u64_le(p))
                      : static_cast<double>(std::bit_cast<float>(get_u32_le(p)));
    }
    ckpt.tensors.emplace(name, nn::Tensor::from_values(rows, cols, std::move(values)));
  }
  return ckpt;
}

void save_model(const std::string& path, const LongStoryModel& model,
                const tok::Vocabulary& vocab, const std::string& extra_metadata_json,
                const std::map<std::string, nn::Tensor>& extra, const std::string& dtype) {
  std::map<std::string, nn::Tensor> tensors(model.params().all().begin(),
                                            model.params().all().end());
  for (const auto& [name, t] : extra) {
    if (!tensors.emplace("state." + name, t).second)
      throw std::invalid_argument("save_model: extra tensor name collision '" + name + "'");
  }
  nlohmann::ordered_json meta;
  meta["model_config"] = nlohmann::json::parse(model.config().to_json());
  meta["vocab"] = nlohmann::json::parse(vocab.to_json());
  meta["extra"] = nlohmann::json::parse(extra_metadata_json);
  save_checkpoint(path, tensors, meta.dump(), dtype);
}

ModelBundle load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  auto meta = nlohmann::json::parse(ckpt.metadata_json);
  ModelBundle bundle;
  bundle.metadata_json = ckpt.metadata_json;
  bundle.config = ModelConfig::from_json(meta.at("model_config").dump());
  bundle.vocab = tok::Vocabulary::from_json(meta.at("vocab").dump());
  bundle.model = std::make_shared<LongStoryModel>(bundle.config);
  for (const auto& [name, t] : bundle.model->params().all()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("load_model: checkpoint missing parameter '" + name + "'");
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw std::runtime_error("load_model: shape mismatch for '" + name + "': checkpoint " +
                               it->second.shape_str() + " vs model " + t.shape_str());
    t.value() = it->second.value();
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (name.starts_with("state.")) bundle.extra.emplace(name.substr(6), t);
  return bundle;
}

}  // namespace longstory

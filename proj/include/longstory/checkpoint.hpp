#pragma once

#include <map>
#include <memory>
#include <string>

#include "longstory/model.hpp"
#include "longstory/tensor.hpp"
#include "longstory/vocab.hpp"

namespace longstory {

/// Checkpoint file layout: a single-line JSON header (names, shapes, dtype,
/// byte offsets, metadata) terminated by '\n', followed by raw little-endian
/// float payloads in parameter-name sorted order.

struct Checkpoint {
  std::map<std::string, nn::Tensor> tensors;
  std::string metadata_json = "{}";
  std::string dtype = "f64";
};

void save_checkpoint(const std::string& path, const std::map<std::string, nn::Tensor>& tensors,
                     const std::string& metadata_json = "{}", const std::string& dtype = "f64");
Checkpoint load_checkpoint(const std::string& path);

/// A model plus everything needed to use it: config, vocabulary, and any
/// extra tensors (optimizer state) that rode along in the file.
struct ModelBundle {
  ModelConfig config;
  tok::Vocabulary vocab;
  std::shared_ptr<LongStoryModel> model;
  std::map<std::string, nn::Tensor> extra;  // entries outside the model's params
  std::string metadata_json;                // full header metadata object
};

/// extra_metadata_json must be a JSON object; it is stored under "extra".
void save_model(const std::string& path, const LongStoryModel& model,
                const tok::Vocabulary& vocab, const std::string& extra_metadata_json = "{}",
                const std::map<std::string, nn::Tensor>& extra = {},
                const std::string& dtype = "f64");
ModelBundle load_model(const std::string& path);

}  // namespace longstory

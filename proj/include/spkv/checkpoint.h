// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat binary container of named tensors plus a JSON metadata block.
//
//   "SPKVTNSR"  u32 version  u32 count
//   count x { u32 name_len, name, u8 dtype (0 = f32, 1 = f64), u32 ndim,
//             ndim x u64 dims, little-endian data }
//   u64 meta_len, meta (UTF-8 JSON)
//
// Used for checkpoints (backbone, classifier, optimizer state) and for
// embedding stores (one tensor per utterance id).

#ifndef SPKV_CHECKPOINT_H_
#define SPKV_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spkv/nets.h"

namespace spkv {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat64;
  Shape shape;
  Eigen::ArrayXd values;  // float32 records hold exactly representable values
};

struct Container {
  std::vector<TensorRecord> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const TensorRecord& Get(const std::string& name) const;
  const TensorRecord* Find(const std::string& name) const;
};

void WriteContainer(const std::string& path, const Container& c);
Container ReadContainer(const std::string& path);

template <typename S>
constexpr DType DTypeOf() {
  return sizeof(S) == 4 ? DType::kFloat32 : DType::kFloat64;
}

template <typename S>
TensorRecord ToRecord(const std::string& name, const Tensor<S>& t) {
  return {name, DTypeOf<S>(), t.shape(), t.value().template cast<double>()};
}

template <typename S>
Tensor<S> FromRecord(const TensorRecord& r, bool requires_grad = false) {
  return Tensor<S>(r.shape, r.values.cast<S>(), requires_grad);
}

nlohmann::json ArchToJson(const ArchConfig& cfg);
ArchConfig ArchFromJson(const nlohmann::json& j);

// Backbone tensors are stored as "backbone.param.<name>" and
// "backbone.buffer.<name>"; arch/mode/branches go into meta["backbone"].
template <typename S>
void AppendModel(const BackboneModel<S>& model, Container* c) {
  for (const auto& [name, t] : model.params) c->tensors.push_back(ToRecord("backbone.param." + name, t));
  for (const auto& [name, t] : model.buffers) c->tensors.push_back(ToRecord("backbone.buffer." + name, t));
  c->meta["backbone"] = {{"arch", ArchToJson(model.config)},
                         {"mode", model.mode == Mode::kTrain ? "train" : "eval"},
                         {"branches", model.branches == Branches::kFused ? "fused" : "multi-branch"}};
}

template <typename S>
BackboneModel<S> ExtractModel(const Container& c) {
  if (!c.meta.contains("backbone")) throw FormatError("container holds no backbone");
  const auto& meta = c.meta.at("backbone");
  BackboneModel<S> model;
  model.config = ArchFromJson(meta.at("arch"));
  model.mode = meta.at("mode") == "train" ? Mode::kTrain : Mode::kEval;
  model.branches = meta.at("branches") == "fused" ? Branches::kFused : Branches::kMultiBranch;
  const std::string param = "backbone.param.", buffer = "backbone.buffer.";
  for (const auto& r : c.tensors) {
    if (r.name.rfind(param, 0) == 0)
      model.params.emplace(r.name.substr(param.size()), FromRecord<S>(r, true));
    else if (r.name.rfind(buffer, 0) == 0)
      model.buffers.emplace(r.name.substr(buffer.size()), FromRecord<S>(r));
  }
  return model;
}

using EmbeddingStore = std::map<std::string, Eigen::VectorXd>;

void WriteEmbeddings(const std::string& path, const EmbeddingStore& store);
EmbeddingStore ReadEmbeddings(const std::string& path);

}  // namespace spkv

#endif  // SPKV_CHECKPOINT_H_

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

#include "spkv/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "spkv/errors.h"

namespace spkv {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little endian");

constexpr char kMagic[8] = {'S', 'P', 'K', 'V', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void Put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T Get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(path + ": truncated container");
  return v;
}

}  // namespace

const TensorRecord* Container::Find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const TensorRecord& Container::Get(const std::string& name) const {
  if (const auto* t = Find(name)) return *t;
  throw LookupError("container has no tensor '" + name + "'");
}

void WriteContainer(const std::string& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  Put<std::uint32_t>(out, kVersion);
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.values.size() != NumElements(t.shape))
      throw ShapeError("record '" + t.name + "' data does not match shape " + ShapeString(t.shape));
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    Put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) Put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    if (t.dtype == DType::kFloat32) {
      const Eigen::ArrayXf f = t.values.cast<float>();
      out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(4 * f.size()));
    } else {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(8 * t.values.size()));
    }
  }
  const std::string meta = c.meta.dump();
  Put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!out) throw IoError("failed writing " + path);
}

Container ReadContainer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path + ": not a tensor container");
  if (Get<std::uint32_t>(in, path) != kVersion) throw FormatError(path + ": unsupported version");
  const auto count = Get<std::uint32_t>(in, path);
  Container c;
  c.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name.resize(Get<std::uint32_t>(in, path));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const auto dtype = Get<std::uint8_t>(in, path);
    if (dtype > 1) throw FormatError(path + ": unknown dtype in record '" + t.name + "'");
    t.dtype = static_cast<DType>(dtype);
    t.shape.resize(Get<std::uint32_t>(in, path));
    for (auto& d : t.shape) d = static_cast<Index>(Get<std::uint64_t>(in, path));
    const Index n = NumElements(t.shape);
    if (t.dtype == DType::kFloat32) {
      Eigen::ArrayXf f(n);
      in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(4 * n));
      t.values = f.cast<double>();
    } else {
      t.values.resize(n);
      in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(8 * n));
    }
    if (!in) throw FormatError(path + ": truncated record '" + t.name + "'");
    c.tensors.push_back(std::move(t));
  }
  std::string meta(Get<std::uint64_t>(in, path), '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!in) throw FormatError(path + ": truncated metadata");
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad metadata: " + e.what());
  }
  return c;
}

nlohmann::json ArchToJson(const ArchConfig& cfg) {
  if (const auto* r = std::get_if<ResNetConfig>(&cfg)) {
    return {{"type", "resnet"},
            {"base_channels", r->base_channels},
            {"block_counts", r->block_counts},
            {"embedding_dim", r->embedding_dim},
            {"feat_dim", r->feat_dim}};
  }
  const auto& v = std::get<RepVGGConfig>(cfg);
  return {{"type", "repvgg"},          {"base_channels", v.base_channels},
          {"stage_depths", v.stage_depths}, {"width_a", v.width_a},
          {"width_b", v.width_b},      {"embedding_dim", v.embedding_dim},
          {"feat_dim", v.feat_dim}};
}

ArchConfig ArchFromJson(const nlohmann::json& j) {
  try {
    if (j.at("type") == "resnet") {
      ResNetConfig r;
      r.base_channels = j.at("base_channels");
      r.block_counts = j.at("block_counts").get<std::array<int, 4>>();
      r.embedding_dim = j.at("embedding_dim");
      r.feat_dim = j.at("feat_dim");
      return r;
    }
    if (j.at("type") == "repvgg") {
      RepVGGConfig v;
      v.base_channels = j.at("base_channels");
      v.stage_depths = j.at("stage_depths").get<std::array<int, 5>>();
      v.width_a = j.at("width_a");
      v.width_b = j.at("width_b");
      v.embedding_dim = j.at("embedding_dim");
      v.feat_dim = j.at("feat_dim");
      return v;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad architecture metadata: ") + e.what());
  }
  throw FormatError("unknown architecture type in metadata");
}

void WriteEmbeddings(const std::string& path, const EmbeddingStore& store) {
  Container c;
  c.meta = {{"kind", "embeddings"}};
  for (const auto& [id, v] : store)
    c.tensors.push_back({id, DType::kFloat64, Shape{v.size()}, v.array()});
  WriteContainer(path, c);
}

EmbeddingStore ReadEmbeddings(const std::string& path) {
  const Container c = ReadContainer(path);
  if (c.meta.value("kind", "") != "embeddings") throw FormatError(path + ": not an embedding store");
  EmbeddingStore store;
  for (const auto& t : c.tensors) store.emplace(t.name, t.values.matrix());
  return store;
}

}  // namespace spkv

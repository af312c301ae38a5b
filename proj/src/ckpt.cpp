// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/ckpt.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "mergeforge/errors.hpp"

namespace mergeforge {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kBlobFile = "weights.bin";

void put_f64(std::vector<unsigned char>& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
}

std::vector<double> get_f64s(const std::vector<unsigned char>& blob,
                             std::size_t offset, std::size_t count,
                             const std::string& name) {
  if (offset % 8 != 0 || offset > blob.size() ||
      count > (blob.size() - offset) / 8) {
    throw ShapeError("entry '" + name + "' (offset " + std::to_string(offset) +
                     ", " + std::to_string(count) +
                     " values) exceeds blob of " +
                     std::to_string(blob.size()) + " bytes");
  }
  std::vector<double> out(count);
  const unsigned char* p = blob.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += 8) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[b]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(out[i])) {
      throw FormatError("non-finite value in '" + name + "'");
    }
  }
  return out;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw FormatError(std::string("manifest entry missing '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest field '") + key + "': " +
                      e.what());
  }
}

}  // namespace

void Checkpoint::add_module(const std::string& name, Tensor2D weight,
                            int block, const std::string& group) {
  meta[name] = ModuleMeta{name, weight.rows(), weight.cols(), block, group};
  modules[name] = std::move(weight);
}

const Tensor2D& Checkpoint::module(const std::string& name) const {
  auto it = modules.find(name);
  if (it == modules.end()) throw MissingModule(name);
  return it->second;
}

const std::vector<double>& Checkpoint::aux_vector(
    const std::string& name) const {
  auto it = aux.find(name);
  if (it == aux.end()) throw MissingModule("aux '" + name + "'");
  return it->second;
}

void Checkpoint::validate() const {
  if (modules.size() != meta.size()) {
    throw ShapeError("module and meta counts differ");
  }
  for (const auto& [name, w] : modules) {
    auto it = meta.find(name);
    if (it == meta.end()) throw ShapeError("module '" + name + "' has no meta");
    if (it->second.rows != w.rows() || it->second.cols != w.cols()) {
      throw ShapeError("meta shape of '" + name + "' does not match tensor");
    }
  }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  ckpt.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<unsigned char> blob;
  json modules = json::array();
  for (const auto& [name, w] : ckpt.modules) {
    const auto& m = ckpt.meta.at(name);
    modules.push_back({{"name", name},
                       {"rows", m.rows},
                       {"cols", m.cols},
                       {"block", m.block},
                       {"group", m.group},
                       {"offset", blob.size()},
                       {"dtype", "f64le"}});
    for (double v : w.data()) put_f64(blob, v);
  }
  json aux = json::array();
  for (const auto& [name, v] : ckpt.aux) {
    aux.push_back({{"name", name}, {"len", v.size()}, {"offset", blob.size()}});
    for (double x : v) put_f64(blob, x);
  }
  json manifest = {{"magic", kManifestMagic},
                   {"format_version", ckpt.format_version},
                   {"modules", modules},
                   {"aux", aux}};

  {
    std::ofstream out(dir / kBlobFile, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + (dir / kBlobFile).string());
  }
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / kManifestFile).string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream mf(dir / kManifestFile);
  if (!mf) throw IoError("cannot open " + (dir / kManifestFile).string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("magic", "") != kManifestMagic) {
    throw FormatError("bad manifest magic in " + dir.string());
  }
  const int version = field<int>(manifest, "format_version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported format_version " + std::to_string(version));
  }

  std::ifstream bf(dir / kBlobFile, std::ios::binary);
  if (!bf) throw IoError("cannot open " + (dir / kBlobFile).string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)),
                                  std::istreambuf_iterator<char>());
  if (blob.size() % 8 != 0) {
    throw FormatError("truncated blob (" + std::to_string(blob.size()) +
                      " bytes)");
  }

  Checkpoint ckpt;
  ckpt.format_version = version;
  for (const auto& e : manifest.value("modules", json::array())) {
    if (field<std::string>(e, "dtype") != "f64le") {
      throw FormatError("unsupported dtype");
    }
    const auto name = field<std::string>(e, "name");
    const auto rows = field<std::size_t>(e, "rows");
    const auto cols = field<std::size_t>(e, "cols");
    if (rows == 0 || cols == 0) throw ShapeError("empty module '" + name + "'");
    auto values = get_f64s(blob, field<std::size_t>(e, "offset"), rows * cols,
                           name);
    if (ckpt.modules.count(name)) throw FormatError("duplicate '" + name + "'");
    ckpt.add_module(name, Tensor2D(rows, cols, std::move(values)),
                    field<int>(e, "block"), field<std::string>(e, "group"));
  }
  for (const auto& e : manifest.value("aux", json::array())) {
    const auto name = field<std::string>(e, "name");
    ckpt.aux[name] = get_f64s(blob, field<std::size_t>(e, "offset"),
                              field<std::size_t>(e, "len"), name);
  }
  return ckpt;
}

void require_same_meta(const Checkpoint& a, const Checkpoint& b) {
  if (a.meta.size() != b.meta.size()) {
    throw MetaMismatch("module counts differ (" +
                       std::to_string(a.meta.size()) + " vs " +
                       std::to_string(b.meta.size()) + ")");
  }
  for (const auto& [name, m] : a.meta) {
    auto it = b.meta.find(name);
    if (it == b.meta.end()) throw MetaMismatch("module '" + name + "' missing");
    if (!(it->second == m)) {
      throw MetaMismatch("module '" + name + "' meta differs");
    }
  }
}

std::size_t TaskVectorSet::task_count() const {
  return per_task.empty() ? 0 : per_task.begin()->second.size();
}

TaskVectorSet task_vectors(const Checkpoint& pretrained,
                           const std::vector<Checkpoint>& finetuned,
                           const Checkpoint& anchor) {
  for (const auto& ft : finetuned) require_same_meta(pretrained, ft);
  require_same_meta(pretrained, anchor);
  TaskVectorSet tvs;
  tvs.meta = pretrained.meta;
  for (const auto& [name, w_pre] : pretrained.modules) {
    auto& list = tvs.per_task[name];
    list.reserve(finetuned.size());
    for (const auto& ft : finetuned) list.push_back(ft.module(name) - w_pre);
    tvs.anchor[name] = anchor.module(name) - w_pre;
  }
  return tvs;
}

Checkpoint ta_anchor(const Checkpoint& pretrained,
                     const std::vector<Checkpoint>& finetuned, double alpha) {
  if (!std::isfinite(alpha)) throw OutOfRange("alpha must be finite");
  for (const auto& ft : finetuned) require_same_meta(pretrained, ft);
  Checkpoint out = pretrained;
  for (auto& [name, w] : out.modules) {
    const auto& w_pre = pretrained.module(name);
    for (const auto& ft : finetuned) {
      axpy(alpha, ft.module(name) - w_pre, w);
    }
  }
  // Task arithmetic acts on every parameter, biases included.
  for (auto& [name, v] : out.aux) {
    const auto& v_pre = pretrained.aux_vector(name);
    for (const auto& ft : finetuned) {
      const auto& v_ft = ft.aux_vector(name);
      if (v_ft.size() != v_pre.size()) {
        throw MetaMismatch("aux '" + name + "' length differs");
      }
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] += alpha * (v_ft[i] - v_pre[i]);
      }
    }
  }
  return out;
}

Checkpoint assemble(const Checkpoint& pretrained,
                    const std::map<std::string, Tensor2D>& merged_vectors,
                    const MergeConfig& config, const Checkpoint& anchor) {
  require_same_meta(pretrained, anchor);
  Checkpoint out;
  out.meta = pretrained.meta;
  out.aux = anchor.aux;
  for (const auto& [name, w_pre] : pretrained.modules) {
    auto it = merged_vectors.find(name);
    if (it == merged_vectors.end()) {
      throw MissingModule("no merged vector for '" + name + "'");
    }
    if (!it->second.same_shape(w_pre)) {
      throw MetaMismatch("merged vector shape for '" + name + "'");
    }
    Tensor2D w = w_pre;
    axpy(config.scale_for(pretrained.meta.at(name).block), it->second, w);
    out.modules[name] = std::move(w);
  }
  return out;
}

}  // namespace mergeforge

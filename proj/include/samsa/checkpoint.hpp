#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "samsa/tensor.hpp"

// Binary checkpoint container, see docs/checkpoint_format.md.
//
//   offset 0   8 bytes   magic "SAMSACKP"
//   offset 8   u32 LE    format version (1)
//   offset 12  u32 LE    reserved, 0
//   offset 16  u64 LE    header length H in bytes
//   offset 24  H bytes   UTF-8 JSON header
//   padding    zero bytes up to the next multiple of 8
//   data       tensors back to back, little-endian IEEE-754 (f32 or f64)
namespace samsa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'M', 'S', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, StoredTensor> tensors;
  std::vector<std::string> order;
};

template <class Real>
constexpr const char* dtype_name() {
  return sizeof(Real) == 4 ? "f32" : "f64";
}

// `meta` is merged into the header (typically "config" and "seed").
template <class Real>
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor<Real>>& params,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header = meta;
  header["dtype"] = dtype_name<Real>();
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    header["tensors"].push_back({{"name", p.name},
                                 {"shape", p.tensor.shape()},
                                 {"offset", offset},
                                 {"numel", p.tensor.size()}});
    offset += p.tensor.size() * sizeof(Real);
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  const std::uint32_t version = kCheckpointVersion, reserved = 0;
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::size_t pad = (8 - (24 + text.size()) % 8) % 8;
  const char zeros[8] = {};
  out.write(zeros, static_cast<std::streamsize>(pad));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
              static_cast<std::streamsize>(p.tensor.size() * sizeof(Real)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0, reserved = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  in.ignore(static_cast<std::streamsize>((8 - (24 + len) % 8) % 8));

  Checkpoint ck;
  ck.header = nlohmann::json::parse(text);
  const std::string dtype = ck.header.at("dtype");
  const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
  if (width == 0) throw CheckpointError("unknown dtype " + dtype);

  std::vector<char> blob((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  for (const auto& entry : ck.header.at("tensors")) {
    StoredTensor t;
    t.shape = entry.at("shape").get<Shape>();
    const std::uint64_t off = entry.at("offset");
    const std::size_t n = entry.at("numel");
    if (n != numel(t.shape) || off + n * width > blob.size())
      throw CheckpointError("corrupt tensor entry " + entry.at("name").get<std::string>());
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (width == 4) {
        float f;
        std::memcpy(&f, blob.data() + off + i * 4, 4);
        t.values[i] = f;
      } else {
        std::memcpy(&t.values[i], blob.data() + off + i * 8, 8);
      }
    }
    const std::string name = entry.at("name");
    ck.order.push_back(name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

// Copies stored values into matching named parameters (names and shapes must agree).
template <class Real>
void restore_parameters(const Checkpoint& ck, std::vector<NamedTensor<Real>>& params) {
  for (auto& p : params) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) throw CheckpointError("missing tensor " + p.name);
    if (it->second.shape != p.tensor.shape())
      throw shape_mismatch("restore " + p.name, it->second.shape, p.tensor.shape());
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<Real>(it->second.values[i]);
  }
}

}  // namespace samsa

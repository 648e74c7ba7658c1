#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "licq/codec/model.hpp"
#include "licq/core/error.hpp"
#include "licq/hwopt/bitwidth.hpp"
#include "licq/hwopt/slim.hpp"

namespace licq {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "tensors.bin";

enum class CheckpointFault { missing, malformed, version, mismatch, truncated };

inline const char* to_string(CheckpointFault f) {
  switch (f) {
    case CheckpointFault::missing: return "missing";
    case CheckpointFault::malformed: return "malformed";
    case CheckpointFault::version: return "version";
    case CheckpointFault::mismatch: return "mismatch";
    case CheckpointFault::truncated: return "truncated";
  }
  return "?";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& what)
      : Error(ErrorCategory::data, "checkpoint " + std::string(to_string(fault)) + ": " + what), fault_(fault) {}
  CheckpointFault fault() const noexcept { return fault_; }

 private:
  CheckpointFault fault_;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline const char* to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

/// Everything a pipeline stage hands to the next.
template <typename T>
struct Checkpoint {
  ModelGraph<T> model;
  std::optional<BitWidthPlan> plan;
  std::optional<PruneReport> prune;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string stage;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

using json = nlohmann::json;

// JSON has no infinities; they are written as strings.
inline json real_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw CheckpointError(CheckpointFault::malformed, "bad real value '" + s + "'");
  }
  return j.get<double>();
}

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::vector<unsigned char>& in, std::size_t& pos, const std::string& what) {
  if (in.size() - pos < sizeof(U)) {
    throw CheckpointError(CheckpointFault::truncated, what + " runs past the end of the blob at byte " +
                                                          std::to_string(pos));
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

struct BlobRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::size_t offset = 0;  // of the record
  std::size_t bytes = 0;   // whole record
  std::vector<double> values;
  std::vector<float> values_f32;
};

template <typename T>
void append_record(std::vector<unsigned char>& out, const std::string& name, const Tensor<T>& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(static_cast<unsigned char>(dtype_of<T>()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (T v : t.values()) {
    if constexpr (std::is_same_v<T, float>) {
      put_le(out, std::bit_cast<std::uint32_t>(v));
    } else {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
}

inline BlobRecord read_record(const std::vector<unsigned char>& in, std::size_t& pos) {
  BlobRecord r;
  r.offset = pos;
  const auto len = get_le<std::uint32_t>(in, pos, "tensor name length");
  if (in.size() - pos < len) {
    throw CheckpointError(CheckpointFault::truncated, "tensor name runs past the end of the blob at byte " +
                                                          std::to_string(pos));
  }
  r.name.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + len));
  pos += len;
  const auto tag = get_le<std::uint8_t>(in, pos, "dtype tag of '" + r.name + "'");
  if (tag != static_cast<std::uint8_t>(DType::f32) && tag != static_cast<std::uint8_t>(DType::f64)) {
    throw CheckpointError(CheckpointFault::malformed, "unknown dtype tag " + std::to_string(tag) + " for '" + r.name + "'");
  }
  r.dtype = static_cast<DType>(tag);
  const auto rank = get_le<std::uint32_t>(in, pos, "rank of '" + r.name + "'");
  if (rank > 8) throw CheckpointError(CheckpointFault::malformed, "rank " + std::to_string(rank) + " of '" + r.name + "'");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get_le<std::uint64_t>(in, pos, "dims of '" + r.name + "'");
    if (d > (std::uint64_t{1} << 32)) {
      throw CheckpointError(CheckpointFault::malformed, "dimension " + std::to_string(d) + " of '" + r.name + "'");
    }
    r.shape.push_back(static_cast<std::size_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  if ((in.size() - pos) / dtype_size(r.dtype) < n) {
    throw CheckpointError(CheckpointFault::truncated, "values of '" + r.name + "' run past the end of the blob at byte " +
                                                          std::to_string(pos));
  }
  if (r.dtype == DType::f32) {
    r.values_f32.reserve(n);
    for (std::size_t i = 0; i < n; ++i) r.values_f32.push_back(std::bit_cast<float>(get_le<std::uint32_t>(in, pos, "")));
  } else {
    r.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) r.values.push_back(std::bit_cast<double>(get_le<std::uint64_t>(in, pos, "")));
  }
  r.bytes = pos - r.offset;
  return r;
}

// Widening f32 -> f64 is exact; narrowing is refused.
template <typename T>
Tensor<T> record_tensor(const BlobRecord& r) {
  std::vector<T> v;
  if (r.dtype == DType::f32) {
    v.assign(r.values_f32.begin(), r.values_f32.end());
  } else {
    if constexpr (std::is_same_v<T, float>) {
      throw ModelError("checkpoint tensor '" + r.name + "' is f64; refusing to narrow it to f32");
    } else {
      v = r.values;
    }
  }
  return Tensor<T>(r.shape, std::move(v), true);
}

inline json range_to_json(const std::optional<QuantRange>& r) {
  if (!r) return nullptr;
  return {{"lo", real_to_json(r->lo)}, {"hi", real_to_json(r->hi)}};
}

inline std::optional<QuantRange> range_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return QuantRange{real_from_json(j.at("lo")), real_from_json(j.at("hi"))};
}

inline json plan_to_json(const BitWidthPlan& p) {
  std::vector<int> frozen(p.frozen.begin(), p.frozen.end());
  return {{"layers", p.layers},
          {"bits", p.bits},
          {"frozen", frozen},
          {"epsilon", real_to_json(p.epsilon)},
          {"baseline_loss", real_to_json(p.baseline_loss)},
          {"baseline_bits", p.baseline_bits},
          {"baseline_width_loss", real_to_json(p.baseline_width_loss)}};
}

inline BitWidthPlan plan_from_json(const json& j) {
  BitWidthPlan p;
  p.layers = j.at("layers").get<std::vector<std::string>>();
  p.bits = j.at("bits").get<std::vector<int>>();
  for (int f : j.at("frozen").get<std::vector<int>>()) p.frozen.push_back(f != 0);
  p.epsilon = real_from_json(j.at("epsilon"));
  p.baseline_loss = real_from_json(j.at("baseline_loss"));
  p.baseline_bits = j.at("baseline_bits").get<int>();
  p.baseline_width_loss = real_from_json(j.at("baseline_width_loss"));
  return p;
}

inline json prune_to_json(const PruneReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) layers.push_back({{"id", l.id}, {"kept", l.kept}, {"before", l.before}, {"after", l.after}});
  return {{"layers", layers},
          {"flops_before", r.flops_before},
          {"flops_after", r.flops_after},
          {"epsilon_p", real_to_json(r.epsilon_p)},
          {"warnings", r.warnings}};
}

inline PruneReport prune_from_json(const json& j) {
  PruneReport r;
  for (const auto& l : j.at("layers")) {
    r.layers.push_back({l.at("id").get<std::string>(), l.at("kept").get<std::vector<std::size_t>>(),
                        l.at("before").get<std::size_t>(), l.at("after").get<std::size_t>()});
  }
  r.flops_before = j.at("flops_before").get<std::uint64_t>();
  r.flops_after = j.at("flops_after").get<std::uint64_t>();
  r.epsilon_p = real_from_json(j.at("epsilon_p"));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointFault::missing, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Writes <dir>/manifest.json and <dir>/tensors.bin.
template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& dir) {
  using nlohmann::json;
  std::filesystem::create_directories(dir);
  const auto& m = ck.model;

  std::vector<unsigned char> blob;
  json tensors = json::array();
  for (const auto& [name, t] : m.parameters()) {
    const std::size_t offset = blob.size();
    detail::append_record(blob, name, t);
    tensors.push_back({{"name", name},
                       {"dtype", to_string(dtype_of<T>())},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"bytes", blob.size() - offset}});
  }

  json layers = json::array();
  for (const auto& l : m.layers) {
    json jl = {{"id", l.id},
               {"kind", to_string(l.kind)},
               {"in_channels", l.in_channels},
               {"out_channels", l.out_channels},
               {"kernel", l.kernel},
               {"stride", l.stride},
               {"pad", l.pad},
               {"latent_output", l.latent_output},
               {"bits", l.bits},
               {"has_fold", l.fold.defined()},
               {"clip", l.clip ? json{{"lo", detail::real_to_json(l.clip->lo)}, {"hi", detail::real_to_json(l.clip->hi)}}
                               : json(nullptr)},
               {"input_range", detail::range_to_json(l.input_range)},
               {"output_range", detail::range_to_json(l.output_range)}};
    layers.push_back(std::move(jl));
  }

  const auto& c = m.config;
  json manifest = {
      {"format_version", kCheckpointVersion},
      {"stage", ck.stage},
      {"seed", ck.seed},
      {"config_hash", ck.config_hash},
      {"model",
       {{"N", c.N},
        {"M", c.M},
        {"depth", c.depth},
        {"activation", c.activation == Activation::gdn ? "gdn" : "relu"},
        {"slim", c.slim},
        {"kernel", c.kernel},
        {"seed", c.seed}}},
      {"quantized", m.quantized},
      {"layers", layers},
      {"plan", ck.plan ? detail::plan_to_json(*ck.plan) : json(nullptr)},
      {"prune", ck.prune ? detail::prune_to_json(*ck.prune) : json(nullptr)},
      {"meta", ck.meta},
      {"blob", {{"file", kBlobFile}, {"bytes", blob.size()}}},
      {"tensors", tensors}};

  {
    std::ofstream out(dir / kBlobFile, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / kBlobFile).string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(dir / kManifestFile);
  if (!out) throw DataError("cannot write " + (dir / kManifestFile).string());
  out << manifest.dump(2) << '\n';
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto manifest_path = dir / kManifestFile;
  if (!std::filesystem::exists(manifest_path)) {
    throw CheckpointError(CheckpointFault::missing, "no manifest at " + manifest_path.string());
  }
  json mf;
  try {
    std::ifstream in(manifest_path);
    mf = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointFault::malformed, manifest_path.string() + ": " + e.what());
  }

  try {
    if (!mf.contains("format_version") || !mf["format_version"].is_number_integer()) {
      throw CheckpointError(CheckpointFault::malformed, "manifest has no format_version");
    }
    const int version = mf["format_version"].get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointFault::version, "format_version " + std::to_string(version) +
                                                          " unsupported (expected " +
                                                          std::to_string(kCheckpointVersion) + ")");
    }

    const auto blob = detail::read_bytes(dir / mf.at("blob").at("file").get<std::string>());
    const auto declared = mf.at("blob").at("bytes").get<std::size_t>();
    if (blob.size() < declared) {
      throw CheckpointError(CheckpointFault::truncated, "blob has " + std::to_string(blob.size()) +
                                                            " bytes, manifest declares " + std::to_string(declared));
    }
    if (blob.size() != declared) {
      throw CheckpointError(CheckpointFault::mismatch, "blob/manifest mismatch: blob has " +
                                                           std::to_string(blob.size()) + " bytes, manifest declares " +
                                                           std::to_string(declared));
    }

    std::vector<detail::BlobRecord> records;
    std::size_t pos = 0;
    while (pos < blob.size()) records.push_back(detail::read_record(blob, pos));

    const auto& listed = mf.at("tensors");
    if (listed.size() != records.size()) {
      throw CheckpointError(CheckpointFault::mismatch, "blob/manifest mismatch: manifest lists " +
                                                           std::to_string(listed.size()) + " tensors, blob holds " +
                                                           std::to_string(records.size()));
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& e = listed[i];
      const auto& r = records[i];
      if (e.at("name").get<std::string>() != r.name || e.at("dtype").get<std::string>() != to_string(r.dtype) ||
          e.at("shape").get<Shape>() != r.shape || e.at("offset").get<std::size_t>() != r.offset ||
          e.at("bytes").get<std::size_t>() != r.bytes) {
        throw CheckpointError(CheckpointFault::mismatch, "blob/manifest mismatch at tensor " + std::to_string(i) +
                                                             " ('" + r.name + "')");
      }
    }

    Checkpoint<T> ck;
    ck.stage = mf.at("stage").get<std::string>();
    ck.seed = mf.at("seed").get<std::uint64_t>();
    ck.config_hash = mf.at("config_hash").get<std::string>();
    ck.meta = mf.at("meta");
    if (!mf.at("plan").is_null()) ck.plan = detail::plan_from_json(mf["plan"]);
    if (!mf.at("prune").is_null()) ck.prune = detail::prune_from_json(mf["prune"]);

    auto& m = ck.model;
    const auto& jm = mf.at("model");
    m.config.N = jm.at("N").get<std::size_t>();
    m.config.M = jm.at("M").get<std::size_t>();
    m.config.depth = jm.at("depth").get<int>();
    m.config.activation = jm.at("activation").get<std::string>() == "gdn" ? Activation::gdn : Activation::relu;
    m.config.slim = jm.at("slim").get<bool>();
    m.config.kernel = jm.at("kernel").get<int>();
    m.config.seed = jm.at("seed").get<std::uint64_t>();
    m.quantized = mf.at("quantized").get<bool>();

    std::size_t next = 0;
    auto take = [&](const std::string& name) -> Tensor<T> {
      if (next >= records.size() || records[next].name != name) {
        throw CheckpointError(CheckpointFault::mismatch, "blob/manifest mismatch: expected tensor '" + name + "'");
      }
      return detail::record_tensor<T>(records[next++]);
    };
    for (const auto& jl : mf.at("layers")) {
      LayerNode<T> l;
      l.id = jl.at("id").get<std::string>();
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      l.in_channels = jl.at("in_channels").get<std::size_t>();
      l.out_channels = jl.at("out_channels").get<std::size_t>();
      l.kernel = jl.at("kernel").get<int>();
      l.stride = jl.at("stride").get<int>();
      l.pad = jl.at("pad").get<int>();
      l.latent_output = jl.at("latent_output").get<bool>();
      l.bits = jl.at("bits").get<int>();
      if (!jl.at("clip").is_null()) {
        l.clip = ClipBounds{detail::real_from_json(jl["clip"].at("lo")), detail::real_from_json(jl["clip"].at("hi"))};
      }
      l.input_range = detail::range_from_json(jl.at("input_range"));
      l.output_range = detail::range_from_json(jl.at("output_range"));
      if (is_conv(l.kind)) {
        l.weight = take(l.id + ".weight");
        l.bias = take(l.id + ".bias");
        if (jl.at("has_fold").get<bool>()) l.fold = take(l.id + ".fold");
      } else if (is_gdn_family(l.kind)) {
        l.gdn.raw_beta = take(l.id + ".raw_beta");
        l.gdn.raw_gamma = take(l.id + ".raw_gamma");
        if (l.kind == LayerKind::slim_gdn) {
          l.scale = take(l.id + ".scale");
          l.shift = take(l.id + ".shift");
        }
      }
      m.layers.push_back(std::move(l));
    }
    m.entropy.log_scale = take("entropy.log_scale");
    if (next != records.size()) {
      throw CheckpointError(CheckpointFault::mismatch, "blob/manifest mismatch: " +
                                                           std::to_string(records.size() - next) +
                                                           " tensors not claimed by any layer");
    }
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointFault::malformed, manifest_path.string() + ": " + e.what());
  }
}

}  // namespace licq

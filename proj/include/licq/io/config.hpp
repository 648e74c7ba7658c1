#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/error.hpp"
#include "licq/draq/finetune.hpp"
#include "licq/hwopt/search.hpp"
#include "licq/io/synth.hpp"

namespace licq {

struct TrainingSection {
  std::vector<double> lambdas{0.0018, 0.0035, 0.0067, 0.013};
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t crop = 16;
  std::size_t iters = 2000;
  std::uint64_t seed = 1;
  double decay_at = 0.8;
  double lr_decay = 0.1;
};

struct DraqSection {
  double alpha = 0.001;
  double reg_strength = 1e-3;
  std::size_t recalib_period = 0;
  std::optional<double> k_override;
  std::size_t calib_crops = 64;
  std::size_t iters = 300;
  double lr = 1e-4;
  int bits = 8;
};

struct SearchSection {
  double epsilon = 0.0;
  int floor_bits = 2;
  int start_bits = 16;
  std::string order = "sensitivity";  // or "given"
  std::vector<std::size_t> given_order;
  int probe_bits = 6;
  std::size_t finetune_iters = 300;
};

struct SlimmingSection {
  double eta = 0.2;
  double epsilon_p = 1e-4;
  std::size_t iters = 1000;
  std::size_t finetune_iters = 300;
  // Adam oscillates around zero with an amplitude near the step size, so
  // the L1 phase needs a late decay well below epsilon_p.
  double lr = 1e-2;
  double lr_decay = 0.01;
};

struct DatasetSection {
  std::optional<std::string> path;
  SynthSpec synthetic;
  std::size_t eval_count = 8;  // trailing images held out for evaluation
  std::size_t int_check_images = 10;
};

struct RunConfig {
  ModelConfig model;
  TrainingSection training;
  DraqSection draq;
  SearchSection search;
  SlimmingSection slimming;
  DatasetSection dataset;
  std::string output = "out";
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

inline double get_real(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path + " must be finite");
  return v;
}

inline std::int64_t get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    throw ConfigError(path + ": integer out of range");
  }
  return j.get<std::int64_t>();
}

inline std::uint64_t get_u64(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  if (!j.is_number_unsigned() && j.get<std::int64_t>() < 0) throw ConfigError(path + " must be >= 0");
  return j.get<std::uint64_t>();
}

inline bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path + ": expected true or false");
  return j.get<bool>();
}

inline std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

template <typename V>
std::string show(V v) {
  return json(v).dump();
}

inline void require(bool ok, const std::string& path, const std::string& rule, const std::string& got) {
  if (!ok) throw ConfigError(path + " must be " + rule + " (got " + got + ")");
}

inline std::size_t int_in(const json& j, const std::string& path, std::int64_t lo, std::int64_t hi) {
  const auto v = get_int(j, path);
  require(v >= lo && v <= hi, path, "in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", std::to_string(v));
  return static_cast<std::size_t>(v);
}

inline double real_in(const json& j, const std::string& path, double lo, double hi, bool open_lo = false) {
  const double v = get_real(j, path);
  const bool ok = (open_lo ? v > lo : v >= lo) && v <= hi;
  require(ok, path, std::string(open_lo ? "in (" : "in [") + show(lo) + ", " + show(hi) + "]", show(v));
  return v;
}

}  // namespace detail

/// Validates every field; the first violation raises ConfigError naming
/// its dotted path. Unknown keys anywhere are rejected.
inline RunConfig parse_config(const nlohmann::json& j) {
  using namespace detail;
  RunConfig c;
  reject_unknown(j, "", {"model", "training", "draq", "search", "slimming", "dataset", "output"});

  if (j.contains("model")) {
    const auto& s = j["model"];
    reject_unknown(s, "model", {"N", "M", "depth", "activation", "slim", "kernel", "seed"});
    if (s.contains("N")) c.model.N = int_in(s["N"], "model.N", 4, 256);
    if (s.contains("M")) c.model.M = int_in(s["M"], "model.M", 4, 256);
    if (s.contains("depth")) c.model.depth = static_cast<int>(int_in(s["depth"], "model.depth", 2, 4));
    if (s.contains("activation")) {
      const auto a = get_string(s["activation"], "model.activation");
      require(a == "relu" || a == "gdn", "model.activation", "\"relu\" or \"gdn\"", show(a));
      c.model.activation = a == "gdn" ? Activation::gdn : Activation::relu;
    }
    if (s.contains("slim")) c.model.slim = get_bool(s["slim"], "model.slim");
    if (s.contains("kernel")) {
      c.model.kernel = static_cast<int>(int_in(s["kernel"], "model.kernel", 2, 8));
      require(c.model.kernel % 2 == 0, "model.kernel", "even", std::to_string(c.model.kernel));
    }
    if (s.contains("seed")) c.model.seed = get_u64(s["seed"], "model.seed");
    require(!c.model.slim || c.model.activation == Activation::gdn, "model.slim", "false unless activation is gdn",
            "true");
  }

  if (j.contains("training")) {
    const auto& s = j["training"];
    reject_unknown(s, "training", {"lambdas", "lr", "batch", "crop", "iters", "seed", "decay_at", "lr_decay"});
    if (s.contains("lambdas")) {
      const auto& l = s["lambdas"];
      if (!l.is_array()) throw ConfigError("training.lambdas: expected an array");
      require(!l.empty(), "training.lambdas", "non-empty", "[]");
      c.training.lambdas.clear();
      for (std::size_t i = 0; i < l.size(); ++i) {
        const auto path = "training.lambdas[" + std::to_string(i) + "]";
        const double v = real_in(l[i], path, 0.0, 10.0, true);
        require(c.training.lambdas.empty() || v > c.training.lambdas.back(), path, "strictly increasing", show(v));
        c.training.lambdas.push_back(v);
      }
    }
    if (s.contains("lr")) c.training.lr = real_in(s["lr"], "training.lr", 0.0, 1.0, true);
    if (s.contains("batch")) c.training.batch = int_in(s["batch"], "training.batch", 1, 1024);
    if (s.contains("crop")) {
      c.training.crop = int_in(s["crop"], "training.crop", 4, 1024);
    }
    if (s.contains("iters")) c.training.iters = int_in(s["iters"], "training.iters", 1, 10'000'000);
    if (s.contains("seed")) c.training.seed = get_u64(s["seed"], "training.seed");
    if (s.contains("decay_at")) c.training.decay_at = real_in(s["decay_at"], "training.decay_at", 0.0, 1.0);
    if (s.contains("lr_decay")) c.training.lr_decay = real_in(s["lr_decay"], "training.lr_decay", 0.0, 1.0, true);
  }

  if (j.contains("draq")) {
    const auto& s = j["draq"];
    reject_unknown(s, "draq", {"alpha", "reg_strength", "recalib_period", "k_override", "calib_crops", "iters", "lr", "bits"});
    if (s.contains("alpha")) {
      c.draq.alpha = real_in(s["alpha"], "draq.alpha", 0.0, 0.5, true);
      require(c.draq.alpha < 0.5, "draq.alpha", "below 0.5", show(c.draq.alpha));
    }
    if (s.contains("reg_strength")) c.draq.reg_strength = real_in(s["reg_strength"], "draq.reg_strength", 0.0, 1e3);
    if (s.contains("recalib_period")) {
      c.draq.recalib_period = int_in(s["recalib_period"], "draq.recalib_period", 0, 10'000'000);
    }
    if (s.contains("k_override") && !s["k_override"].is_null()) {
      c.draq.k_override = real_in(s["k_override"], "draq.k_override", 0.0, 1e3, true);
    }
    if (s.contains("calib_crops")) c.draq.calib_crops = int_in(s["calib_crops"], "draq.calib_crops", 1, 100'000);
    if (s.contains("iters")) c.draq.iters = int_in(s["iters"], "draq.iters", 1, 10'000'000);
    if (s.contains("lr")) c.draq.lr = real_in(s["lr"], "draq.lr", 0.0, 1.0, true);
    if (s.contains("bits")) c.draq.bits = static_cast<int>(int_in(s["bits"], "draq.bits", 2, 16));
  }

  if (j.contains("search")) {
    const auto& s = j["search"];
    reject_unknown(s, "search",
                   {"epsilon", "floor_bits", "start_bits", "order", "given_order", "probe_bits", "finetune_iters"});
    if (s.contains("epsilon")) c.search.epsilon = real_in(s["epsilon"], "search.epsilon", 0.0, 1e6);
    if (s.contains("floor_bits")) c.search.floor_bits = static_cast<int>(int_in(s["floor_bits"], "search.floor_bits", 2, 16));
    if (s.contains("start_bits")) c.search.start_bits = static_cast<int>(int_in(s["start_bits"], "search.start_bits", 2, 16));
    require(c.search.floor_bits <= c.search.start_bits, "search.floor_bits", "<= search.start_bits",
            std::to_string(c.search.floor_bits));
    if (s.contains("order")) {
      c.search.order = get_string(s["order"], "search.order");
      require(c.search.order == "sensitivity" || c.search.order == "given", "search.order",
              "\"sensitivity\" or \"given\"", show(c.search.order));
    }
    if (s.contains("given_order")) {
      const auto& g = s["given_order"];
      if (!g.is_array()) throw ConfigError("search.given_order: expected an array");
      for (std::size_t i = 0; i < g.size(); ++i) {
        c.search.given_order.push_back(int_in(g[i], "search.given_order[" + std::to_string(i) + "]", 0, 64));
      }
    }
    require(c.search.order != "given" || !c.search.given_order.empty(), "search.given_order",
            "non-empty when search.order is \"given\"", "[]");
    if (s.contains("probe_bits")) c.search.probe_bits = static_cast<int>(int_in(s["probe_bits"], "search.probe_bits", 2, 16));
    if (s.contains("finetune_iters")) {
      c.search.finetune_iters = int_in(s["finetune_iters"], "search.finetune_iters", 0, 10'000'000);
    }
  }

  if (j.contains("slimming")) {
    const auto& s = j["slimming"];
    reject_unknown(s, "slimming", {"eta", "epsilon_p", "iters", "finetune_iters", "lr", "lr_decay"});
    if (s.contains("eta")) c.slimming.eta = real_in(s["eta"], "slimming.eta", 0.0, 1e3);
    if (s.contains("epsilon_p")) c.slimming.epsilon_p = real_in(s["epsilon_p"], "slimming.epsilon_p", 0.0, 1e3);
    if (s.contains("iters")) c.slimming.iters = int_in(s["iters"], "slimming.iters", 1, 10'000'000);
    if (s.contains("lr")) c.slimming.lr = real_in(s["lr"], "slimming.lr", 0.0, 1.0, true);
    if (s.contains("lr_decay")) c.slimming.lr_decay = real_in(s["lr_decay"], "slimming.lr_decay", 0.0, 1.0, true);
    if (s.contains("finetune_iters")) {
      c.slimming.finetune_iters = int_in(s["finetune_iters"], "slimming.finetune_iters", 0, 10'000'000);
    }
  }

  if (j.contains("dataset")) {
    const auto& s = j["dataset"];
    reject_unknown(s, "dataset", {"path", "synthetic", "eval_count", "int_check_images"});
    if (s.contains("path") && !s["path"].is_null()) {
      c.dataset.path = get_string(s["path"], "dataset.path");
      require(!c.dataset.path->empty(), "dataset.path", "non-empty", "\"\"");
    }
    if (s.contains("synthetic")) {
      const auto& y = s["synthetic"];
      reject_unknown(y, "dataset.synthetic", {"count", "size", "seed"});
      if (y.contains("count")) c.dataset.synthetic.count = int_in(y["count"], "dataset.synthetic.count", 0, 100'000);
      if (y.contains("size")) c.dataset.synthetic.size = int_in(y["size"], "dataset.synthetic.size", 4, 4096);
      if (y.contains("seed")) c.dataset.synthetic.seed = get_u64(y["seed"], "dataset.synthetic.seed");
    }
    if (s.contains("eval_count")) c.dataset.eval_count = int_in(s["eval_count"], "dataset.eval_count", 1, 100'000);
    if (s.contains("int_check_images")) {
      c.dataset.int_check_images = int_in(s["int_check_images"], "dataset.int_check_images", 1, 100'000);
    }
  }
  if (!c.dataset.path) {
    require(c.dataset.synthetic.count > c.dataset.eval_count, "dataset.synthetic.count", "greater than dataset.eval_count",
            std::to_string(c.dataset.synthetic.count));
    require(c.training.crop <= c.dataset.synthetic.size, "training.crop", "<= dataset.synthetic.size",
            std::to_string(c.training.crop));
  }
  require(c.training.crop % (std::size_t{1} << c.model.depth) == 0, "training.crop",
          "a multiple of 2^model.depth", std::to_string(c.training.crop));

  if (j.contains("output")) {
    c.output = get_string(j["output"], "output");
    require(!c.output.empty(), "output", "non-empty", "\"\"");
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

/// Fully expanded JSON form; keys sort lexicographically on dump, so the
/// text is canonical for a given config.
inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  json j;
  j["model"] = {{"N", c.model.N},
                {"M", c.model.M},
                {"depth", c.model.depth},
                {"activation", c.model.activation == Activation::gdn ? "gdn" : "relu"},
                {"slim", c.model.slim},
                {"kernel", c.model.kernel},
                {"seed", c.model.seed}};
  j["training"] = {{"lambdas", c.training.lambdas}, {"lr", c.training.lr},         {"batch", c.training.batch},
                   {"crop", c.training.crop},       {"iters", c.training.iters},   {"seed", c.training.seed},
                   {"decay_at", c.training.decay_at}, {"lr_decay", c.training.lr_decay}};
  j["draq"] = {{"alpha", c.draq.alpha},
               {"reg_strength", c.draq.reg_strength},
               {"recalib_period", c.draq.recalib_period},
               {"k_override", c.draq.k_override ? json(*c.draq.k_override) : json(nullptr)},
               {"calib_crops", c.draq.calib_crops},
               {"iters", c.draq.iters},
               {"lr", c.draq.lr},
               {"bits", c.draq.bits}};
  j["search"] = {{"epsilon", c.search.epsilon},       {"floor_bits", c.search.floor_bits},
                 {"start_bits", c.search.start_bits}, {"order", c.search.order},
                 {"given_order", c.search.given_order}, {"probe_bits", c.search.probe_bits},
                 {"finetune_iters", c.search.finetune_iters}};
  j["slimming"] = {{"eta", c.slimming.eta},
                   {"epsilon_p", c.slimming.epsilon_p},
                   {"iters", c.slimming.iters},
                   {"finetune_iters", c.slimming.finetune_iters},
                   {"lr", c.slimming.lr},
                   {"lr_decay", c.slimming.lr_decay}};
  j["dataset"] = {{"path", c.dataset.path ? json(*c.dataset.path) : json(nullptr)},
                  {"synthetic",
                   {{"count", c.dataset.synthetic.count},
                    {"size", c.dataset.synthetic.size},
                    {"seed", c.dataset.synthetic.seed}}},
                  {"eval_count", c.dataset.eval_count},
                  {"int_check_images", c.dataset.int_check_images}};
  j["output"] = c.output;
  return j;
}

/// 64-bit FNV-1a over the canonical JSON, excluding the output directory.
inline std::string config_hash(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return out;
}

inline TrainConfig train_config(const RunConfig& c, double lambda) {
  TrainConfig t;
  t.lambda = lambda;
  t.lr = c.training.lr;
  t.batch = c.training.batch;
  t.crop = c.training.crop;
  t.iters = c.training.iters;
  t.seed = c.training.seed;
  t.decay_at = c.training.decay_at;
  t.lr_decay = c.training.lr_decay;
  return t;
}

inline TrainConfig slim_config(const RunConfig& c, double lambda) {
  TrainConfig t = train_config(c, lambda);
  t.iters = c.slimming.iters;
  t.lr = c.slimming.lr;
  t.lr_decay = c.slimming.lr_decay;
  return t;
}

/// Fine-tuning schedule shared by draq, search and pruning stages.
inline TrainConfig finetune_config(const RunConfig& c, double lambda, std::size_t iters) {
  TrainConfig t = train_config(c, lambda);
  t.iters = iters;
  t.lr = c.draq.lr;
  t.decay_at = 1.0;
  return t;
}

inline DraqConfig draq_config(const RunConfig& c) {
  DraqConfig d;
  d.alpha = c.draq.alpha;
  d.k_override = c.draq.k_override;
  d.reg_strength = c.draq.reg_strength;
  d.recalib_period = c.draq.recalib_period;
  d.calib_crops = c.draq.calib_crops;
  return d;
}

inline SearchConfig search_config(const RunConfig& c) {
  SearchConfig s;
  s.epsilon = c.search.epsilon;
  s.start_bits = c.search.start_bits;
  s.floor_bits = c.search.floor_bits;
  s.order = c.search.order == "given" ? LayerOrder::given : LayerOrder::by_sensitivity;
  s.given_order = c.search.given_order;
  s.probe_bits = c.search.probe_bits;
  return s;
}

}  // namespace licq

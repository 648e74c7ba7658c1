#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "licq/codec/int_infer.hpp"
#include "licq/codec/model.hpp"
#include "licq/codec/train.hpp"
#include "licq/core/error.hpp"
#include "licq/draq/calibrate.hpp"
#include "licq/draq/finetune.hpp"
#include "licq/hwopt/bitwidth.hpp"
#include "licq/hwopt/flops.hpp"
#include "licq/hwopt/search.hpp"
#include "licq/hwopt/slim.hpp"
#include "licq/io/checkpoint.hpp"
#include "licq/io/config.hpp"
#include "licq/io/csv.hpp"
#include "licq/io/ppm.hpp"
#include "licq/io/synth.hpp"
#include "licq/metrics/bd_rate.hpp"
#include "licq/metrics/msqe_table.hpp"
#include "licq/metrics/psnr.hpp"

namespace licq {

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"train", "calibrate", "draq-finetune", "search", "slim", "prune",
                                          "eval",  "bdrate",    "flops",         "int-check", "report"};
  return s;
}

// Checkpoint-producing stages, least to most processed. Slimming and pruning
// come before quantization, the bit-width search last.
inline const std::vector<std::string>& model_stages() {
  static const std::vector<std::string> s{"train", "slim", "prune", "calibrate", "draq-finetune", "search"};
  return s;
}

struct Datasets {
  std::vector<Tensor<float>> train;
  std::vector<Tensor<float>> eval;
};

/// Training images followed by `eval_count` held-out images.
inline Datasets load_data(const RunConfig& c) {
  auto all = c.dataset.path ? load_dataset<float>(*c.dataset.path) : synth_dataset<float>(c.dataset.synthetic);
  const std::size_t need = c.dataset.eval_count + 1;
  if (all.size() < need) {
    throw DataError("dataset has " + std::to_string(all.size()) + " images; need at least " + std::to_string(need) +
                    " (dataset.eval_count + 1)");
  }
  const std::size_t unit = std::size_t{1} << c.model.depth;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto h = all[i].dim(1), w = all[i].dim(2);
    if (h < c.training.crop || w < c.training.crop || h % unit || w % unit) {
      throw DataError("image " + std::to_string(i) + " is " + std::to_string(h) + "x" + std::to_string(w) +
                      "; sides must be >= training.crop and multiples of " + std::to_string(unit));
    }
  }
  Datasets d;
  const auto split = all.end() - static_cast<std::ptrdiff_t>(c.dataset.eval_count);
  d.train.assign(all.begin(), split);
  d.eval.assign(split, all.end());
  return d;
}

class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path out)
      : cfg_(std::move(cfg)), out_(std::move(out)), hash_(config_hash(cfg_)) {}

  const RunConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  std::filesystem::path report_path(const std::string& name) const { return out_ / "reports" / name; }
  std::filesystem::path checkpoint_dir(const std::string& stage, std::size_t lambda_index) const {
    return out_ / "ckpt" / stage / ("l" + std::to_string(lambda_index));
  }
  bool has_checkpoint(const std::string& stage, std::size_t i) const {
    return std::filesystem::exists(checkpoint_dir(stage, i) / kManifestFile);
  }

  /// Runs one stage; returns the files it wrote.
  std::vector<std::filesystem::path> run(const std::string& stage) {
    written_.clear();
    if (stage == "train") stage_train();
    else if (stage == "slim") stage_slim();
    else if (stage == "prune") stage_prune();
    else if (stage == "calibrate") stage_calibrate();
    else if (stage == "draq-finetune") stage_draq();
    else if (stage == "search") stage_search();
    else if (stage == "eval") stage_eval();
    else if (stage == "bdrate") stage_bdrate();
    else if (stage == "flops") stage_flops();
    else if (stage == "int-check") stage_int_check();
    else if (stage == "report") stage_report();
    else throw ConfigError("unknown stage '" + stage + "'");
    return written_;
  }

  /// Every stage in dependency order; slim and prune only for slim models.
  std::vector<std::filesystem::path> run_all() {
    std::vector<std::filesystem::path> files;
    for (const auto& s : {"train", "slim", "prune", "calibrate", "draq-finetune", "search", "eval", "bdrate", "flops",
                          "int-check", "report"}) {
      if (!cfg_.model.slim && (std::string(s) == "slim" || std::string(s) == "prune")) continue;
      auto f = run(s);
      files.insert(files.end(), f.begin(), f.end());
    }
    return files;
  }

 private:
  RunConfig cfg_;
  std::filesystem::path out_;
  std::string hash_;
  std::optional<Datasets> data_;
  std::vector<std::filesystem::path> written_;

  const Datasets& data() {
    if (!data_) data_ = load_data(cfg_);
    return *data_;
  }
  std::uint64_t seed() const { return cfg_.training.seed; }
  std::size_t lambda_count() const { return cfg_.training.lambdas.size(); }
  double lambda(std::size_t i) const { return cfg_.training.lambdas[i]; }
  CsvReport report(std::vector<std::string> columns) const { return CsvReport(std::move(columns), hash_, seed()); }

  void emit(const CsvReport& r, const std::string& name) {
    r.write(report_path(name));
    written_.push_back(report_path(name));
  }

  Checkpoint<float> require(const std::string& needed, std::size_t i, const std::string& stage) const {
    if (!has_checkpoint(needed, i)) {
      throw DataError("stage '" + stage + "' requires a checkpoint from stage '" + needed + "' (missing " +
                      checkpoint_dir(needed, i).string() + "); run --stage " + needed + " first");
    }
    return load_checkpoint<float>(checkpoint_dir(needed, i));
  }

  // Latest checkpoint for lambda i among `stages` (tried last to first).
  std::optional<std::string> latest(std::size_t i, const std::vector<std::string>& stages) const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it) {
      if (has_checkpoint(*it, i)) return *it;
    }
    return std::nullopt;
  }

  void save(Checkpoint<float>& ck, const std::string& stage, std::size_t i) {
    ck.stage = stage;
    ck.seed = seed();
    ck.config_hash = hash_;
    ck.meta["lambda"] = lambda(i);
    save_checkpoint(ck, checkpoint_dir(stage, i));
    written_.push_back(checkpoint_dir(stage, i));
  }

  Tensor<float> calib_crops() {
    return raster_crops(data().train, cfg_.draq.calib_crops, cfg_.training.crop);
  }

  void stage_train() {
    auto r = report({"lambda", "iters", "final_loss", "eval_loss", "parameters"});
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      Checkpoint<float> ck;
      ck.model = build_model<float>(cfg_.model);
      const auto tr = train(ck.model, data().train, train_config(cfg_, lambda(i)));
      const auto ev = eval_rd(ck.model, data().eval, lambda(i));
      save(ck, "train", i);
      r.add({lambda(i), static_cast<std::uint64_t>(cfg_.training.iters), tr.loss.empty() ? 0.0 : tr.loss.back(), ev.loss,
             static_cast<std::uint64_t>(ck.model.parameter_count())});
    }
    emit(r, "train.csv");
  }

  void stage_slim() {
    if (!cfg_.model.slim) throw ConfigError("stage 'slim' requires model.slim = true");
    auto r = report({"lambda", "layer", "bin_lo", "bin_hi", "count"});
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      auto ck = require("train", i, "slim");
      const auto res = slim_train(ck.model, data().train, cfg_.slimming.eta, slim_config(cfg_, lambda(i)));
      save(ck, "slim", i);
      for (const auto& h : res.histograms) {
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
          r.add({lambda(i), h.id, h.edges[b], h.edges[b + 1], static_cast<std::uint64_t>(h.counts[b])});
        }
      }
    }
    emit(r, "slim.csv");
  }

  void stage_prune() {
    auto r = report({"lambda", "layer", "channels_before", "channels_after", "flops_before", "flops_after",
                     "loss_unpruned", "loss_pruned", "loss_finetuned"});
    const std::size_t crop = cfg_.training.crop;
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      auto ck = require("slim", i, "prune");
      const double before = eval_rd(ck.model, data().eval, lambda(i)).loss;
      PruneReport pr;
      auto pruned = prune(ck.model, cfg_.slimming.epsilon_p, pr, crop, crop);
      const double after = eval_rd(pruned, data().eval, lambda(i)).loss;
      if (cfg_.slimming.finetune_iters > 0) {
        train(pruned, data().train, finetune_config(cfg_, lambda(i), cfg_.slimming.finetune_iters));
      }
      const double tuned = eval_rd(pruned, data().eval, lambda(i)).loss;
      ck.model = std::move(pruned);
      ck.prune = pr;
      save(ck, "prune", i);
      for (const auto& l : pr.layers) {
        r.add({lambda(i), l.id, static_cast<std::uint64_t>(l.before), static_cast<std::uint64_t>(l.after),
               pr.flops_before, pr.flops_after, before, after, tuned});
      }
    }
    emit(r, "prune.csv");
  }

  void stage_calibrate() {
    auto r = report({"lambda", "layer", "kind", "mu", "sigma", "clip_lo", "clip_hi", "theta_min", "theta_max"});
    const auto calib = calib_crops();
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      const auto src = latest(i, {"train", "prune"});
      if (!src) require("train", i, "calibrate");
      auto ck = require(*src, i, "calibrate");
      const double k = draq_k(draq_config(cfg_), lambda(i));
      ck.model.apply_bits(std::vector<int>(ck.model.conv_indices().size(), cfg_.draq.bits));
      const auto stats = calibrate(ck.model, calib, k);
      ck.model.quantized = true;
      ck.meta["k"] = detail::real_to_json(k);
      save(ck, "calibrate", i);
      for (const auto& a : stats.acts) {
        const auto c = ck.model.layer(a.id).clip.value_or(ClipBounds::unbounded());
        r.add({lambda(i), a.id, std::string(to_string(a.kind)), a.mean, a.std, c.lo, c.hi, std::string(), std::string()});
      }
      for (const auto& w : model_weight_thresholds(ck.model, cfg_.draq.alpha)) {
        r.add({lambda(i), w.id, std::string("weight"), std::string(), std::string(), std::string(), std::string(),
               w.theta_min, w.theta_max});
      }
    }
    emit(r, "calibration.csv");
  }

  void stage_draq() {
    auto r = report({"lambda", "k", "iters", "first_loss", "final_loss", "eval_loss", "outliers_before",
                     "outliers_after"});
    auto mr = report({"lambda", "layer", "kind", "phase", "weight_msqe", "activation_msqe"});
    const auto calib = calib_crops();
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      auto ck = require("calibrate", i, "draq-finetune");
      for (const auto& row : msqe_table(ck.model, calib)) {
        mr.add({lambda(i), row.id, std::string(to_string(row.kind)), std::string("before"), row.weight_msqe,
                row.activation_msqe});
      }
      const auto tc = finetune_config(cfg_, lambda(i), cfg_.draq.iters);
      const auto rep = draq_finetune(ck.model, data().train, draq_config(cfg_), tc);
      const double ev = eval_rd(ck.model, data().eval, lambda(i)).loss;
      save(ck, "draq-finetune", i);
      r.add({lambda(i), rep.k, static_cast<std::uint64_t>(tc.iters), rep.trace.loss.empty() ? 0.0 : rep.trace.loss.front(),
             rep.trace.loss.empty() ? 0.0 : rep.trace.loss.back(), ev, rep.outliers_before, rep.outliers_after});
      for (const auto& row : msqe_table(ck.model, calib)) {
        mr.add({lambda(i), row.id, std::string(to_string(row.kind)), std::string("after"), row.weight_msqe,
                row.activation_msqe});
      }
    }
    emit(r, "draq.csv");
    emit(mr, "msqe.csv");
  }

  void stage_search() {
    auto log = report({"lambda", "step", "phase", "layer", "width", "loss", "accepted"});
    auto plan_csv = report({"lambda", "layer", "bits", "frozen", "equivalent_bits"});
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      auto ck = require("draq-finetune", i, "search");
      const auto base = ck.model;
      const auto tc = finetune_config(cfg_, lambda(i), cfg_.search.finetune_iters);
      const auto& eval_set = data().eval;
      const auto& train_set = data().train;
      const double lam = lambda(i);
      auto tuned = [&](const std::vector<int>& bits) {
        auto m = clone_model(base);
        m.apply_bits(bits);
        if (tc.iters > 0) train(m, train_set, tc);
        return m;
      };
      const PlanEvaluator evaluate = [&](const std::vector<int>& bits) {
        return eval_rd(tuned(bits), eval_set, lam).loss;
      };
      const auto res = progressive_search(base.conv_ids(), evaluate, search_config(cfg_));
      ck.model = tuned(res.plan.bits);
      ck.plan = res.plan;
      const std::size_t crop = cfg_.training.crop;
      const auto fp = footprint_from_graph(ck.model, FootprintMode::element_count, crop, crop);
      const double pm = equivalent_bitwidth(res.plan.bits, fp);
      ck.meta["equivalent_bits"] = pm;
      save(ck, "search", i);
      for (const auto& s : res.log) {
        log.add({lam, static_cast<std::uint64_t>(s.step), s.phase, s.layer, static_cast<std::int64_t>(s.width), s.loss,
                 std::string(s.accepted ? "1" : "0")});
      }
      for (std::size_t k = 0; k < res.plan.layers.size(); ++k) {
        plan_csv.add({lam, res.plan.layers[k], static_cast<std::int64_t>(res.plan.bits[k]),
                      std::string(res.plan.frozen[k] ? "1" : "0"), pm});
      }
    }
    emit(log, "search_log.csv");
    emit(plan_csv, "search_plan.csv");
  }

  // Eval-set RD point of every existing model checkpoint, per stage.
  std::map<std::string, std::vector<std::pair<std::size_t, RDEval>>> collect_rd(const std::string& stage) {
    std::map<std::string, std::vector<std::pair<std::size_t, RDEval>>> out;
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      require("train", i, stage);
      for (const auto& s : model_stages()) {
        if (!has_checkpoint(s, i)) continue;
        const auto ck = load_checkpoint<float>(checkpoint_dir(s, i));
        out[s].emplace_back(i, eval_rd(ck.model, data().eval, lambda(i)));
      }
    }
    return out;
  }

  void stage_eval() {
    auto r = report({"stage", "lambda", "bpp", "psnr", "mse", "loss"});
    const auto rd = collect_rd("eval");
    for (const auto& s : model_stages()) {
      if (!rd.count(s)) continue;
      for (const auto& [i, e] : rd.at(s)) r.add({s, lambda(i), e.bpp, e.psnr, e.mse, e.loss});
    }
    emit(r, "eval.csv");
  }

  static std::optional<RDCurve> curve_of(const std::vector<std::pair<std::size_t, RDEval>>& pts, std::size_t n) {
    if (pts.size() != n) return std::nullopt;
    std::vector<RDPoint> p;
    for (const auto& [i, e] : pts) p.push_back(e.point());
    try {
      return RDCurve(p);
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  void stage_bdrate() {
    if (lambda_count() < 4) throw ConfigError("stage 'bdrate' needs at least 4 values in training.lambdas");
    auto r = report({"reference", "test", "bd_rate_percent", "note"});
    const auto rd = collect_rd("bdrate");
    const auto ref = curve_of(rd.at("train"), lambda_count());
    if (!ref) {
      r.add({std::string("train"), std::string("*"), std::nan(""), std::string("reference curve not monotone")});
      emit(r, "bdrate.csv");
      return;
    }
    for (const auto& s : model_stages()) {
      if (s == "train" || !rd.count(s)) continue;
      const auto test = curve_of(rd.at(s), lambda_count());
      if (!test) {
        r.add({std::string("train"), s, std::nan(""), std::string("curve incomplete or not monotone")});
        continue;
      }
      try {
        r.add({std::string("train"), s, bd_rate(*ref, *test), std::string()});
      } catch (const Error& e) {
        r.add({std::string("train"), s, std::nan(""), std::string(e.what())});
      }
    }
    emit(r, "bdrate.csv");
  }

  void stage_flops() {
    auto r = report({"stage", "lambda", "layer", "flops"});
    const std::size_t h = data().eval.front().dim(1), w = data().eval.front().dim(2);
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      require("train", i, "flops");
      for (const auto& s : model_stages()) {
        if (!has_checkpoint(s, i)) continue;
        const auto ck = load_checkpoint<float>(checkpoint_dir(s, i));
        const auto f = flops_count(ck.model, h, w);
        for (const auto& l : f.layers) r.add({s, lambda(i), l.id, l.flops});
        r.add({s, lambda(i), std::string("total"), f.total});
      }
    }
    emit(r, "flops.csv");
  }

  void stage_int_check() {
    auto r = report({"stage", "lambda", "image", "layer", "max_abs_diff", "max_lsb_diff", "within_1_lsb"});
    const std::size_t n = std::min(cfg_.dataset.int_check_images, data().eval.size() + data().train.size());
    std::vector<Tensor<float>> images(data().eval.begin(), data().eval.end());
    for (std::size_t k = 0; images.size() < n; ++k) images.push_back(data().train[k]);
    for (std::size_t i = 0; i < lambda_count(); ++i) {
      const auto src = latest(i, {"calibrate", "draq-finetune", "search"});
      if (!src) require("calibrate", i, "int-check");
      const auto ck = load_checkpoint<float>(checkpoint_dir(*src, i));
      for (std::size_t k = 0; k < n; ++k) {
        const auto img = images[k].reshaped({1, images[k].dim(0), images[k].dim(1), images[k].dim(2)});
        for (const auto& l : int_check(ck.model, img)) {
          r.add({*src, lambda(i), static_cast<std::uint64_t>(k), l.id, l.max_abs_diff, l.max_lsb_diff,
                 std::string(l.max_lsb_diff <= 1.0 ? "1" : "0")});
        }
      }
    }
    emit(r, "int_check.csv");
  }

  void stage_report() {
    if (!std::filesystem::exists(report_path("eval.csv"))) {
      throw DataError("stage 'report' requires the output of stage 'eval' (missing " +
                      report_path("eval.csv").string() + "); run --stage eval first");
    }
    const auto rd = collect_rd("report");
    for (const auto& s : model_stages()) {
      if (!rd.count(s)) continue;
      auto pts = rd.at(s);
      std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.second.bpp < b.second.bpp; });
      auto r = report({"lambda", "bpp", "psnr"});
      for (const auto& [i, e] : pts) r.add({lambda(i), e.bpp, e.psnr});
      emit(r, "curves/" + s + ".csv");
    }
  }
};

}  // namespace licq

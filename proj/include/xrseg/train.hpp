#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xrseg/checkpoint.hpp"
#include "xrseg/data.hpp"
#include "xrseg/metrics.hpp"
#include "xrseg/model.hpp"
#include "xrseg/ops.hpp"

namespace xrseg {

enum class LossKind { Dice, Bce };

inline std::string loss_name(LossKind k) {
  return k == LossKind::Dice ? "dice" : "bce";
}
inline LossKind loss_from_name(const std::string& s) {
  if (s == "dice") return LossKind::Dice;
  if (s == "bce") return LossKind::Bce;
  fail("bad-arg", "unknown loss '" + s + "' (expected dice or bce)");
}

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss_kind = LossKind::Dice;
  double threshold = 0.5;
  std::uint64_t seed = 1234;
  std::size_t checkpoint_every = 10;
  std::string checkpoint_dir;  // empty disables checkpoint writes
};

inline void validate_config(const TrainConfig& cfg) {
  check(cfg.batch_size >= 1, "bad-config", "batch_size must be >= 1");
  check(cfg.epochs >= 1, "bad-config", "epochs must be >= 1");
  check(cfg.lr > 0, "bad-config", "lr must be positive");
  check(cfg.beta1 > 0 && cfg.beta1 < 1 && cfg.beta2 > 0 && cfg.beta2 < 1,
        "bad-config", "betas must lie in (0,1)");
  check(cfg.adam_eps > 0, "bad-config", "adam_eps must be positive");
  check(cfg.threshold > 0 && cfg.threshold < 1, "bad-config",
        "threshold must lie in (0,1)");
  check(cfg.checkpoint_every >= 1, "bad-config",
        "checkpoint_every must be >= 1");
}

// --- optimizer -----------------------------------------------------------------

inline void adam_step(std::map<std::string, Tensor<float>>& params,
                      AdamState& state, const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, (double)state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, (double)state.t);
  for (auto& [name, p] : params) {
    check(p.has_grad(), "missing-grad",
          "adam_step: parameter '" + name + "' has no gradient");
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, Tensor<float>::zeros(p.shape)).first;
      state.v.emplace(name, Tensor<float>::zeros(p.shape));
    }
    Tensor<float>& m = mit->second;
    Tensor<float>& v = state.v.at(name);
    check(m.shape == p.shape, "shape-mismatch",
          "adam_step: stale state for '" + name + "'");
    const std::size_t n = p.numel();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
      m.data()[i] = (float)mi;
      v.data()[i] = (float)vi;
      p.data()[i] -= (float)(cfg.lr * (mi / bc1) /
                             (std::sqrt(vi / bc2) + cfg.adam_eps));
    }
  }
}

inline void adam_step(Model<float>& model, AdamState& state,
                      const TrainConfig& cfg) {
  adam_step(model.params, state, cfg);
}

// --- metric assembly -------------------------------------------------------------

namespace detail {

// Soft dice/jaccard (loss-epsilon smoothing) plus thresholded confusion
// metrics over one contiguous span.
inline MetricsReport span_report(const float* pred, const float* truth,
                                 std::size_t n, double threshold,
                                 LossKind kind) {
  double inter = 0, sp = 0, st = 0, bce = 0;
  ConfusionCounts c;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred[i], t = truth[i];
    inter += p * t;
    sp += p;
    st += t;
    if (p >= threshold) {
      if (t >= 0.5)
        ++c.tp;
      else
        ++c.fp;
    } else {
      if (t >= 0.5)
        ++c.fn;
      else
        ++c.tn;
    }
    if (kind == LossKind::Bce) {
      double pc = p;
      if (pc < kBceClamp) pc = kBceClamp;
      if (pc > 1.0 - kBceClamp) pc = 1.0 - kBceClamp;
      bce += -(t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
    }
  }
  MetricsReport r;
  r.dice_coef = (2.0 * inter + kDiceLossEps) / (sp + st + kDiceLossEps);
  r.jaccard_coef = (inter + kDiceLossEps) / (sp + st - inter + kDiceLossEps);
  r.loss = kind == LossKind::Dice ? 1.0 - r.dice_coef : bce / (double)n;
  const DerivedMetrics d = derive_metrics(c);
  r.binary_accuracy = d.accuracy;
  r.precision = d.precision;
  r.recall = d.recall;
  r.specificity = d.specificity;
  r.sensitivity = d.sensitivity;
  r.f1 = d.f1;
  return r;
}

inline MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  MetricsReport m;
  if (rs.empty()) return m;
  for (const auto& r : rs) {
    m.loss += r.loss;
    m.dice_coef += r.dice_coef;
    m.jaccard_coef += r.jaccard_coef;
    m.binary_accuracy += r.binary_accuracy;
    m.precision += r.precision;
    m.recall += r.recall;
    m.specificity += r.specificity;
    m.sensitivity += r.sensitivity;
    m.f1 += r.f1;
  }
  const double k = 1.0 / (double)rs.size();
  m.loss *= k;
  m.dice_coef *= k;
  m.jaccard_coef *= k;
  m.binary_accuracy *= k;
  m.precision *= k;
  m.recall *= k;
  m.specificity *= k;
  m.sensitivity *= k;
  m.f1 *= k;
  return m;
}

inline void check_resolution(const Dataset& ds, const ModelSpec& spec,
                             const char* which) {
  check(!ds.samples.empty(), "empty-dataset",
        std::string(which) + " dataset is empty");
  check(ds.target_h == spec.input_h && ds.target_w == spec.input_w,
        "shape-mismatch",
        std::string(which) + " dataset is " + std::to_string(ds.target_h) +
            "x" + std::to_string(ds.target_w) + " but the model expects " +
            std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w));
}

}  // namespace detail

// --- evaluation ---------------------------------------------------------------------

struct PerImageRow {
  std::string id;
  double dice = 0, jaccard = 0, precision = 0, recall = 0;
};

struct EvalResult {
  MetricsReport aggregate;
  std::vector<PerImageRow> rows;
};

using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

// Predictor seam: tests can stub the forward pass.
inline EvalResult evaluate_with(const Predictor& predict, const Dataset& ds,
                                const TrainConfig& cfg) {
  validate_config(cfg);
  check(!ds.samples.empty(), "empty-dataset", "evaluate: dataset is empty");
  const std::size_t plane = ds.target_h * ds.target_w;
  std::vector<MetricsReport> per_image;
  EvalResult out;
  for (const auto& batch : batch_indices(ds.size(), cfg.batch_size)) {
    auto [images, masks] = stack_batch<float>(ds, batch);
    Tensor<float> pred = predict(images);
    check(pred.shape == masks.shape, "shape-mismatch",
          "evaluate: prediction " + shape_str(pred.shape) + " != masks " +
              shape_str(masks.shape));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const MetricsReport r = detail::span_report(
          pred.data() + b * plane, masks.data() + b * plane, plane,
          cfg.threshold, cfg.loss_kind);
      per_image.push_back(r);
      out.rows.push_back({ds.samples[batch[b]].id, r.dice_coef,
                          r.jaccard_coef, r.precision, r.recall});
    }
  }
  out.aggregate = detail::mean_report(per_image);
  return out;
}

inline EvalResult evaluate(Model<float>& model, const Dataset& ds,
                           const TrainConfig& cfg) {
  detail::check_resolution(ds, model.spec, "evaluation");
  return evaluate_with(
      [&model](const Tensor<float>& x) {
        return forward(model, x, Mode::Eval);
      },
      ds, cfg);
}

// --- training loop ---------------------------------------------------------------------

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  MetricsReport train;
  MetricsReport val;
};

using History = std::vector<EpochRow>;

// Return false to stop after the current epoch (used for early exit).
using EpochCallback = std::function<bool(const EpochRow&, Model<float>&)>;

inline History train(Model<float>& model, const Dataset& train_ds,
                     const Dataset& val_ds, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = nullptr) {
  validate_config(cfg);
  detail::check_resolution(train_ds, model.spec, "training");
  detail::check_resolution(val_ds, model.spec, "validation");

  namespace fs = std::filesystem;
  const bool save = !cfg.checkpoint_dir.empty();
  if (save) fs::create_directories(cfg.checkpoint_dir);
  auto ckpt_path = [&](const char* stem) {
    return (fs::path(cfg.checkpoint_dir) / (std::string(stem) + ".ckpt"))
        .string();
  };

  AdamState adam;
  History history;
  double best_val_dice = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches =
        batch_indices(train_ds.size(), cfg.batch_size, cfg.seed + epoch);
    std::vector<MetricsReport> batch_reports;
    batch_reports.reserve(batches.size());

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto [images, masks] = stack_batch<float>(train_ds, batches[bi]);
      Tape<float> tape;
      Tensor<float> pred = forward(model, images, Mode::Train, &tape);
      Tensor<float> loss = cfg.loss_kind == LossKind::Dice
                               ? dice_loss(pred, masks, &tape)
                               : bce_loss(pred, masks, &tape);
      const double loss_val = loss.item();
      check(std::isfinite(loss_val), "nan-loss",
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                std::to_string(bi + 1));

      for (auto& [name, p] : model.params)
        if (p.has_grad()) p.zero_grad();
      backward(tape, loss);
      adam_step(model, adam, cfg);

      MetricsReport r = detail::span_report(pred.data(), masks.data(),
                                            pred.numel(), cfg.threshold,
                                            cfg.loss_kind);
      r.loss = loss_val;
      if (cfg.loss_kind == LossKind::Dice) r.dice_coef = 1.0 - loss_val;
      batch_reports.push_back(r);
    }

    EpochRow row;
    row.epoch = epoch;
    row.train = detail::mean_report(batch_reports);
    row.val = evaluate(model, val_ds, cfg).aggregate;
    history.push_back(row);

    if (save) {
      if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)
        save_checkpoint(model, &adam, (std::uint32_t)epoch, ckpt_path("last"));
      if (row.val.dice_coef > best_val_dice) {
        best_val_dice = row.val.dice_coef;
        save_checkpoint(model, nullptr, (std::uint32_t)epoch,
                        ckpt_path("best"));
      }
    }
    if (on_epoch && !on_epoch(row, model)) break;
  }

  if (save)
    save_checkpoint(model, &adam,
                    (std::uint32_t)(history.empty() ? 0 : history.back().epoch),
                    ckpt_path("final"));
  return history;
}

// --- history persistence ---------------------------------------------------------------

inline constexpr const char* kHistoryHeader =
    "epoch,loss,dice_coef,jaccard_coef,binary_accuracy,precision,recall,"
    "val_loss,val_dice_coef,val_jaccard_coef,val_binary_accuracy,"
    "val_precision,val_recall";

inline std::string history_csv(const History& h) {
  std::string out = kHistoryHeader;
  out += "\n";
  for (const auto& row : h) {
    out += std::to_string(row.epoch);
    for (double v :
         {row.train.loss, row.train.dice_coef, row.train.jaccard_coef,
          row.train.binary_accuracy, row.train.precision, row.train.recall,
          row.val.loss, row.val.dice_coef, row.val.jaccard_coef,
          row.val.binary_accuracy, row.val.precision, row.val.recall})
      out += "," + fmt_f(v, 6);
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  check(fp != nullptr, "io-error", "cannot write '" + path + "'");
  const bool ok = std::fwrite(text.data(), 1, text.size(), fp) == text.size();
  std::fclose(fp);
  check(ok, "io-error", "short write to '" + path + "'");
}

}  // namespace xrseg

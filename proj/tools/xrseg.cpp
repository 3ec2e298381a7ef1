#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xrseg/xrseg.hpp"

namespace fs = std::filesystem;
using namespace xrseg;

namespace {

int fail_exit(const Error& e) {
  std::fprintf(stderr, "xrseg: %s\n", e.what());
  return 1;
}

void ensure_empty_or_force(const std::string& dir, bool force) {
  if (!fs::exists(dir)) return;
  check(fs::is_directory(dir), "io-error", "'" + dir + "' is not a directory");
  if (fs::directory_iterator(dir) != fs::directory_iterator())
    check(force, "dir-not-empty",
          "output directory '" + dir + "' is not empty (pass --force to reuse)");
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& m) {
  std::string out = label;
  for (double v : {m.loss, m.dice_coef, m.jaccard_coef, m.binary_accuracy,
                   m.precision, m.recall, m.specificity, m.sensitivity, m.f1})
    out += "," + fmt_f(v, 6);
  return out;
}

constexpr const char* kMetricsCsvHeader =
    "model,loss,dice_coef,jaccard_coef,binary_accuracy,precision,recall,"
    "specificity,sensitivity,f1";

std::string report_line(const EpochRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch %zu: loss=%.6f dice_coef=%.6f val_loss=%.6f "
                "val_dice_coef=%.6f val_jaccard_coef=%.6f",
                row.epoch, row.train.loss, row.train.dice_coef, row.val.loss,
                row.val.dice_coef, row.val.jaccard_coef);
  return buf;
}

// --- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n = 100;
  std::size_t size = 128;
  std::uint64_t seed = 1234;
  bool force = false;
};

int run_synth(const SynthArgs& a) {
  ensure_empty_or_force(a.out, a.force);
  fs::create_directories(fs::path(a.out) / "images");
  fs::create_directories(fs::path(a.out) / "masks");
  const Dataset ds = gen_synthetic(a.n, a.size, a.size, a.seed);
  for (const auto& s : ds.samples) {
    write_png_gray((fs::path(a.out) / "images" / (s.id + ".png")).string(),
                   s.image);
    write_png_gray((fs::path(a.out) / "masks" / (s.id + ".png")).string(),
                   s.mask);
  }
  std::printf("wrote %zu image/mask pairs to %s\n", ds.size(), a.out.c_str());
  return 0;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string arch;
  std::string out;
  std::vector<std::string> overrides;  // KEY=VALUE
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig rc;
  if (!a.config.empty()) apply_kv_map(rc, parse_kv_file(a.config));
  std::map<std::string, std::string> flags;
  for (const auto& kv : a.overrides) {
    const std::size_t eq = kv.find('=');
    check(eq != std::string::npos && eq > 0, "bad-config",
          "--set expects KEY=VALUE, got '" + kv + "'");
    flags[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!a.arch.empty()) flags["arch"] = a.arch;
  if (!a.data.empty()) flags["data_dir"] = a.data;
  if (!a.out.empty()) flags["out_dir"] = a.out;
  apply_kv_map(rc, flags);
  check(!rc.data_dir.empty(), "bad-config", "no data directory given");
  check(!rc.out_dir.empty(), "bad-config", "no output directory given");
  return rc;
}

int run_train(const TrainArgs& a) {
  RunConfig rc = resolve_config(a);
  validate_config(rc.train);
  fs::create_directories(rc.out_dir);
  write_text_file((fs::path(rc.out_dir) / "config.txt").string(),
                  serialize_config(rc));

  const Dataset all = load_dataset((fs::path(rc.data_dir) / "images").string(),
                                   (fs::path(rc.data_dir) / "masks").string(),
                                   rc.spec.input_h, rc.spec.input_w);
  auto [train_ds, val_ds] = split(all, rc.split_fraction, rc.split_seed);
  std::printf("dataset: %zu train / %zu val at %zux%zu\n", train_ds.size(),
              val_ds.size(), rc.spec.input_h, rc.spec.input_w);

  Model<float> model = build_model<float>(rc.spec);
  std::printf("%s: %zu parameters\n", arch_name(rc.spec.arch).c_str(),
              param_count(model));
  TrainConfig cfg = rc.train;
  cfg.checkpoint_dir = rc.out_dir;

  const History history =
      train(model, train_ds, val_ds, cfg,
            [](const EpochRow& row, Model<float>&) {
              std::printf("%s\n", report_line(row).c_str());
              std::fflush(stdout);
              return true;
            });

  write_text_file((fs::path(rc.out_dir) / "history.csv").string(),
                  history_csv(history));

  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].val.dice_coef > history[best].val.dice_coef) best = i;
  std::string report = "final " + report_line(history.back()) + "\n";
  report += "best  " + report_line(history[best]) + "\n";
  write_text_file((fs::path(rc.out_dir) / "report.txt").string(), report);
  std::printf("%s", report.c_str());
  return 0;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::size_t batch_size = 16;
  double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  fs::create_directories(a.out);
  const Dataset ds = load_dataset((fs::path(a.data) / "images").string(),
                                  (fs::path(a.data) / "masks").string(),
                                  ck.model.spec.input_h, ck.model.spec.input_w);
  TrainConfig cfg;
  cfg.batch_size = a.batch_size;
  cfg.threshold = a.threshold;
  const EvalResult res = evaluate(ck.model, ds, cfg);

  std::string agg = kMetricsCsvHeader;
  agg += "\n" +
         metrics_csv_row(arch_name(ck.model.spec.arch), res.aggregate) + "\n";
  write_text_file((fs::path(a.out) / "metrics.csv").string(), agg);

  std::string per = "id,dice,jaccard,precision,recall\n";
  for (const auto& r : res.rows)
    per += r.id + "," + fmt_f(r.dice, 6) + "," + fmt_f(r.jaccard, 6) + "," +
           fmt_f(r.precision, 6) + "," + fmt_f(r.recall, 6) + "\n";
  write_text_file((fs::path(a.out) / "per_image.csv").string(), per);

  std::printf("%s", agg.c_str());
  std::printf("wrote %zu per-image rows to %s\n", res.rows.size(),
              (fs::path(a.out) / "per_image.csv").string().c_str());
  return 0;
}

// --- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string images;
  std::string masks;
  std::string out;
  bool triptych = false;
  double threshold = 0.5;
};

Tensor<float> hstack3(const std::vector<Tensor<float>>& imgs) {
  const std::size_t h = imgs[0].dim(1), w = imgs[0].dim(2);
  Tensor<float> out = Tensor<float>::zeros({1, h, imgs.size() * w});
  for (std::size_t k = 0; k < imgs.size(); ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.data()[y * imgs.size() * w + k * w + x] =
            imgs[k].data()[y * w + x];
  return out;
}

int run_predict(const PredictArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const std::size_t H = ck.model.spec.input_h, W = ck.model.spec.input_w;
  fs::create_directories(a.out);

  std::vector<fs::path> files;
  check(fs::is_directory(a.images), "io-error",
        "image directory '" + a.images + "' does not exist");
  for (const auto& e : fs::directory_iterator(a.images))
    if (e.is_regular_file() && detail::image_ext(e.path()))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  check(!files.empty(), "empty-dataset", "no images in '" + a.images + "'");

  const std::string mask_dir =
      a.masks.empty() ? (fs::path(a.images).parent_path() / "masks").string()
                      : a.masks;

  for (const auto& f : files) {
    const Tensor<float> img = resize_bilinear(read_image(f.string()), H, W);
    Tensor<float> batch = Tensor<float>::zeros({1, 1, H, W});
    std::copy_n(img.data(), H * W, batch.data());
    Model<float>& m = ck.model;
    const Tensor<float> prob = forward(m, batch, Mode::Eval);

    Tensor<float> mask = Tensor<float>::zeros({1, H, W});
    for (std::size_t i = 0; i < H * W; ++i)
      mask.data()[i] = prob.data()[i] >= (float)a.threshold ? 1.0f : 0.0f;
    const std::string stem = f.stem().string();
    write_png_gray((fs::path(a.out) / (stem + ".png")).string(), mask);

    if (a.triptych) {
      std::optional<fs::path> truth_path;
      for (const char* suffix : {"", "_mask"})
        for (const char* ext : {".png", ".pgm"}) {
          fs::path cand = fs::path(mask_dir) / (stem + suffix + ext);
          if (fs::is_regular_file(cand)) {
            truth_path = cand;
            break;
          }
        }
      std::vector<Tensor<float>> panels = {img, mask};
      if (truth_path) {
        Tensor<float> truth = detail::binarize_mask(
            resize_nearest(read_image(truth_path->string()), H, W));
        panels.push_back(truth);
      } else {
        std::fprintf(stderr,
                     "xrseg: warning: no mask for '%s', writing pair\n",
                     stem.c_str());
      }
      write_png_gray((fs::path(a.out) / (stem + "_triptych.png")).string(),
                     hstack3(panels));
    }
  }
  std::printf("wrote %zu predictions to %s\n", files.size(), a.out.c_str());
  return 0;
}

// --- curves -----------------------------------------------------------------

struct CurvesArgs {
  std::string per_image_csv;
  std::string out;
  std::size_t points = 100;
};

std::string curves_svg(const std::vector<CurvePoint>& dice,
                       const std::vector<CurvePoint>& jac) {
  const int W = 640, H = 480, ml = 60, mr = 20, mt = 30, mb = 50;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double t) { return (double)ml + t * pw; };
  auto py = [&](double f) { return (double)mt + (1.0 - f) * ph; };
  auto poly = [&](const std::vector<CurvePoint>& c, const char* color) {
    std::string pts;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(0), py(0));
    pts += buf;
    for (const auto& p : c) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(p.threshold),
                    py(p.fraction));
      pts += buf;
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };
  std::string svg =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
      "height=\"480\" viewBox=\"0 0 640 480\">\n"
      "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                "stroke=\"black\"/>\n",
                ml, H - mb, W - mr, H - mb);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                "stroke=\"black\"/>\n",
                ml, mt, ml, H - mb);
  svg += buf;
  for (int i = 0; i <= 10; ++i) {
    const double t = i / 10.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%d\" font-size=\"11\" "
                  "text-anchor=\"middle\">%.1f</text>\n",
                  px(t), H - mb + 16, t);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%.1f\" font-size=\"11\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  ml - 6, py(t) + 4, t);
    svg += buf;
  }
  svg += poly(dice, "#1f77b4");
  svg += poly(jac, "#d62728");
  svg +=
      "<text x=\"320\" y=\"470\" font-size=\"13\" text-anchor=\"middle\">"
      "metric value</text>\n"
      "<text x=\"320\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">"
      "cumulative fraction of images</text>\n"
      "<text x=\"540\" y=\"60\" font-size=\"12\" fill=\"#1f77b4\">dice</text>\n"
      "<text x=\"540\" y=\"76\" font-size=\"12\" fill=\"#d62728\">jaccard"
      "</text>\n</svg>\n";
  return svg;
}

int run_curves(const CurvesArgs& a) {
  const auto rows = parse_csv(read_text_file(a.per_image_csv));
  check(rows.size() >= 2, "empty-csv",
        "'" + a.per_image_csv + "' has no data rows");
  const auto& header = rows[0];
  std::size_t dice_col = (std::size_t)-1, jac_col = (std::size_t)-1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "dice") dice_col = i;
    if (header[i] == "jaccard") jac_col = i;
  }
  check(dice_col != (std::size_t)-1 && jac_col != (std::size_t)-1, "bad-csv",
        "'" + a.per_image_csv + "' lacks dice/jaccard columns");

  std::vector<double> dice, jac;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    check(rows[r].size() == header.size(), "bad-csv",
          "row " + std::to_string(r + 1) + " has wrong column count");
    try {
      dice.push_back(std::stod(rows[r][dice_col]));
      jac.push_back(std::stod(rows[r][jac_col]));
    } catch (const std::exception&) {
      fail("bad-csv", "row " + std::to_string(r + 1) + " is not numeric");
    }
  }

  const auto dcurve = cumulative_curve(dice, a.points);
  const auto jcurve = cumulative_curve(jac, a.points);
  fs::create_directories(a.out);
  std::string csv = "threshold,dice_cdf,jaccard_cdf\n";
  for (std::size_t i = 0; i < dcurve.size(); ++i)
    csv += fmt_f(dcurve[i].threshold, 6) + "," + fmt_f(dcurve[i].fraction, 6) +
           "," + fmt_f(jcurve[i].fraction, 6) + "\n";
  write_text_file((fs::path(a.out) / "curves.csv").string(), csv);
  write_text_file((fs::path(a.out) / "curves.svg").string(),
                  curves_svg(dcurve, jcurve));
  std::printf("wrote curves.csv and curves.svg to %s\n", a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chest X-ray lung segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", sa.out, "output dataset directory")->required();
  synth->add_option("--n", sa.n, "number of samples")
      ->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "square image size")
      ->check(CLI::Range(8, 4096));
  synth->add_option("--seed", sa.seed, "generator seed");
  synth->add_flag("--force", sa.force, "reuse a non-empty output directory");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a segmentation model");
  tr->add_option("--config", ta.config, "key=value config file");
  tr->add_option("--data", ta.data, "dataset root (images/ + masks/)");
  tr->add_option("--arch", ta.arch, "segnet | resunet | unet");
  tr->add_option("--out", ta.out, "output directory");
  tr->add_option("--set", ta.overrides,
                 "config override KEY=VALUE (repeatable)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  ev->add_option("--data", ea.data, "dataset root (images/ + masks/)")
      ->required();
  ev->add_option("--out", ea.out, "output directory")->required();
  ev->add_option("--batch-size", ea.batch_size)->check(CLI::PositiveNumber);
  ev->add_option("--threshold", ea.threshold)->check(CLI::Range(0.0, 1.0));

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "write predicted masks");
  pr->add_option("--checkpoint", pa.checkpoint, "model checkpoint")->required();
  pr->add_option("--images", pa.images, "input image directory")->required();
  pr->add_option("--masks", pa.masks,
                 "truth mask directory (default: sibling masks/)");
  pr->add_option("--out", pa.out, "output directory")->required();
  pr->add_flag("--triptych", pa.triptych,
               "also write input|prediction|truth composites");
  pr->add_option("--threshold", pa.threshold)->check(CLI::Range(0.0, 1.0));

  CurvesArgs ca;
  auto* cu = app.add_subcommand("curves", "cumulative metric curves from CSV");
  cu->add_option("--per-image-csv", ca.per_image_csv, "eval per-image CSV")
      ->required();
  cu->add_option("--out", ca.out, "output directory")->required();
  cu->add_option("--points", ca.points, "curve resolution")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(sa);
    if (tr->parsed()) return run_train(ta);
    if (ev->parsed()) return run_eval(ea);
    if (pr->parsed()) return run_predict(pa);
    if (cu->parsed()) return run_curves(ca);
  } catch (const Error& e) {
    return fail_exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "xrseg: [internal] %s\n", e.what());
    return 1;
  }
  return 0;
}

#include "didfuse/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "didfuse/adam.hpp"

namespace didfuse {
namespace fs = std::filesystem;

std::string to_string(Precision p) { return p == Precision::kFloat ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float") return Precision::kFloat;
  if (s == "f64" || s == "double") return Precision::kDouble;
  throw std::invalid_argument("unknown precision '" + s + "' (expected f32|f64)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (width < 1) throw std::invalid_argument("width must be >= 1");
  if (crop < 2) throw std::invalid_argument("crop must be >= 2");
  if (std::find(kTrainVariants.begin(), kTrainVariants.end(), variant) == kTrainVariants.end())
    throw std::invalid_argument("unknown variant '" + variant + "'");
  for (double a : {loss.alpha1, loss.alpha2, loss.alpha3, loss.alpha4, loss.lambda})
    if (!(a >= 0.0)) throw std::invalid_argument("loss coefficients must be non-negative");
}

Architecture TrainConfig::architecture() const {
  Architecture a{.width = width, .skip_mode = skip_mode};
  if (variant == "no-base") a.has_base = false;
  if (variant == "no-detail") a.has_detail = false;
  if (variant == "no-skip") a.skip_mode = SkipMode::kNone;
  return a;
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c = loss;
  c.variant = variant == "no-skip" ? LossVariant::kFull : parse_loss_variant(variant);
  return c;
}

double lr_for_epoch(const TrainConfig& cfg, int epoch) {
  const int first = cfg.epochs / 3, second = 2 * cfg.epochs / 3;
  double lr = cfg.lr;
  if (first > 0 && epoch >= first) lr /= 10.0;
  if (second > 0 && epoch >= second) lr /= 10.0;
  return lr;
}

std::string loss_csv_header() { return "epoch,lr,base_gap,detail_gap,recon_ir,recon_vis,grad_term,total"; }

std::string loss_csv_row(const EpochRecord& e) {
  char buf[512];
  const auto& m = e.mean;
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", e.epoch, e.lr, m.base_gap, m.detail_gap,
                m.recon_ir, m.recon_vis, m.grad_term, m.total);
  return buf;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_loss_csv(const RunRecord& run, const fs::path& path) {
  auto out = open_out(path);
  out << loss_csv_header() << '\n';
  for (const auto& e : run.epochs) out << loss_csv_row(e) << '\n';
}

TrainingSet load_training_set(const PairManifest& manifest, std::size_t crop) {
  if (manifest.pairs.empty()) throw std::invalid_argument("training manifest is empty");
  TrainingSet set;
  for (const auto& p : manifest.pairs) {
    const Image ir = load_grayscale(p.ir), vis = load_grayscale(p.vis);
    if (ir.height != vis.height || ir.width != vis.width)
      throw ShapeError("pair '" + p.id + "': infrared and visible images differ in size");
    set.ids.push_back(p.id);
    set.ir.push_back(center_crop(ir, crop));
    set.vis.push_back(center_crop(vis, crop));
  }
  return set;
}

namespace {

template <typename T>
bool finite_grads(const std::vector<std::vector<T>>& grads) {
  for (const auto& g : grads)
    for (T v : g)
      if (!std::isfinite(v)) return false;
  return true;
}

void add_into(LossBreakdown& acc, const LossBreakdown& b) {
  acc.base_gap += b.base_gap;
  acc.detail_gap += b.detail_gap;
  acc.recon_ir += b.recon_ir;
  acc.recon_vis += b.recon_vis;
  acc.grad_term += b.grad_term;
  acc.total += b.total;
}

void divide(LossBreakdown& acc, double n) {
  acc.base_gap /= n;
  acc.detail_gap /= n;
  acc.recon_ir /= n;
  acc.recon_vis /= n;
  acc.grad_term /= n;
  acc.total /= n;
}

template <typename T>
TrainResult train_impl(const TrainingSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  const Architecture arch = cfg.architecture();
  const LossConfig lc = cfg.loss_config();
  const bool single = lc.variant == LossVariant::kClassicAe;

  NetworkParams<T> params = init_params<T>(arch, cfg.seed);
  std::vector<std::size_t> sizes;
  for (const Tensor<T>* t : params.trainable()) sizes.push_back(t->numel());
  AdamState<T> adam = make_adam_state<T>(sizes);

  // Samples are pair indices, or (pair, modality) for the single-stream AE.
  std::vector<std::pair<std::size_t, int>> samples;
  for (std::size_t i = 0; i < data.size(); ++i) {
    samples.emplace_back(i, 0);
    if (single) samples.emplace_back(i, 1);
  }
  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  TrainResult result;
  result.record.seed = cfg.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_for_epoch(cfg, epoch);
    std::shuffle(samples.begin(), samples.end(), rng);
    LossBreakdown acc;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < samples.size(); first += bs) {
      const std::size_t last = std::min(samples.size(), first + bs);
      ad::Tape<T> tape;
      BoundNetwork<T> net(tape, params, true);
      LossInputs<T> in;
      if (single) {
        std::vector<const Image*> imgs;
        for (std::size_t k = first; k < last; ++k) {
          const auto [i, which] = samples[k];
          imgs.push_back(which == 0 ? &data.ir[i] : &data.vis[i]);
        }
        in.ir = tape.constant(images_to_tensor<T>(imgs));
        std::tie(in.ir_hat, in.fp_ir) = net.reconstruct(in.ir, ad::BnMode::kTrain);
      } else {
        std::vector<const Image*> irs, viss;
        for (std::size_t k = first; k < last; ++k) {
          irs.push_back(&data.ir[samples[k].first]);
          viss.push_back(&data.vis[samples[k].first]);
        }
        in.ir = tape.constant(images_to_tensor<T>(irs));
        in.vis = tape.constant(images_to_tensor<T>(viss));
        std::tie(in.ir_hat, in.fp_ir) = net.reconstruct(in.ir, ad::BnMode::kTrain);
        std::tie(in.vis_hat, in.fp_vis) = net.reconstruct(in.vis, ad::BnMode::kTrain);
      }
      const LossTerms<T> terms = total_loss(in, lc);
      const LossBreakdown bd = terms.breakdown();
      if (!std::isfinite(bd.total))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batches + 1));
      tape.backward(terms.total);
      const auto grads = net.gradients();
      if (!finite_grads(grads))
        throw std::runtime_error("non-finite gradient at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batches + 1));
      auto targets = params.trainable();
      std::vector<std::span<T>> ps;
      std::vector<std::span<const T>> gs;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        ps.push_back(targets[i]->data());
        gs.emplace_back(grads[i]);
      }
      adam_step<T>(ps, gs, adam, lr);
      add_into(acc, bd);
      ++batches;
    }
    divide(acc, static_cast<double>(batches));
    EpochRecord rec{epoch + 1, lr, acc};
    result.record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.checkpoint.params = params_cast<float>(params);
  result.checkpoint.loss = lc;
  result.checkpoint.info = {{"seed", std::to_string(cfg.seed)},
                            {"epochs", std::to_string(cfg.epochs)},
                            {"batch_size", std::to_string(cfg.batch_size)},
                            {"lr", fixed6(cfg.lr)},
                            {"crop", std::to_string(cfg.crop)},
                            {"variant", cfg.variant},
                            {"precision", to_string(cfg.precision)},
                            {"pairs", std::to_string(data.size())}};
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("training set is empty");
  if (data.ir.size() != data.size() || data.vis.size() != data.size())
    throw std::invalid_argument("training set lists are misaligned");
  return cfg.precision == Precision::kFloat ? train_impl<float>(data, cfg, on_epoch)
                                            : train_impl<double>(data, cfg, on_epoch);
}

std::string to_string(FusionSkip s) {
  switch (s) {
    case FusionSkip::kAverage: return "avg";
    case FusionSkip::kIr: return "ir";
    case FusionSkip::kVis: return "vis";
    case FusionSkip::kFusedSam: return "fused-sam";
  }
  return "avg";
}

FusionSkip parse_fusion_skip(const std::string& s) {
  if (s == "avg") return FusionSkip::kAverage;
  if (s == "ir") return FusionSkip::kIr;
  if (s == "vis") return FusionSkip::kVis;
  if (s == "fused-sam") return FusionSkip::kFusedSam;
  throw std::invalid_argument("unknown fusion skip '" + s + "' (expected avg|ir|vis|fused-sam)");
}

Image reconstruct_image(const NetworkParams<float>& params, const Image& img) {
  const NetworkParams<double> p = params_cast<double>(params);
  return channel_image(reconstruct(p, images_to_tensor<double>({&img})));
}

namespace {

Tensor<double> average(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (x[i] + y[i]) * 0.5;
  return out;
}

}  // namespace

Image fuse_images(const NetworkParams<float>& params, const Image& ir, const Image& vis, const FuseOptions& opts) {
  if (ir.height != vis.height || ir.width != vis.width)
    throw ShapeError("infrared " + std::to_string(ir.height) + "x" + std::to_string(ir.width) + " and visible " +
                     std::to_string(vis.height) + "x" + std::to_string(vis.width) + " images differ in size");
  opts.fusion.validate();
  const NetworkParams<double> p = params_cast<double>(params);
  const FeatureMaps<double> mi = encode(p, images_to_tensor<double>({&ir}));
  const FeatureMaps<double> mv = encode(p, images_to_tensor<double>({&vis}));
  const fusion::FusedFeatures fused = fusion::fuse_features(mi, mv, opts.fusion);
  FeatureMaps<double> m;
  m.base = fused.base;
  m.detail = fused.detail;
  switch (opts.skip) {
    case FusionSkip::kAverage:
      m.skip1 = average(mi.skip1, mv.skip1);
      m.skip2 = average(mi.skip2, mv.skip2);
      break;
    case FusionSkip::kIr:
      m.skip1 = mi.skip1;
      m.skip2 = mi.skip2;
      break;
    case FusionSkip::kVis:
      m.skip1 = mv.skip1;
      m.skip2 = mv.skip2;
      break;
    case FusionSkip::kFusedSam:
      m.skip1 = fusion::fuse_map(mi.skip1, mv.skip1, opts.fusion, false);
      m.skip2 = fusion::fuse_map(mi.skip2, mv.skip2, opts.fusion, false);
      break;
  }
  return channel_image(decode(p, m));
}

void fuse_files(const Checkpoint& ckpt, const fs::path& ir, const fs::path& vis, const FuseOptions& opts,
                const fs::path& out, const std::string& ckpt_label) {
  const Image a = load_grayscale(ir), b = load_grayscale(vis);
  const Image fused = fuse_images(ckpt.params, a, b, opts);
  write_image(fused, out);
  nlohmann::json meta;
  meta["checkpoint"] = ckpt_label;
  meta["ir"] = ir.string();
  meta["vis"] = vis.string();
  meta["height"] = fused.height;
  meta["width"] = fused.width;
  meta["sam"] = fusion::to_string(opts.fusion.sam);
  meta["cam"] = opts.fusion.use_cam;
  meta["gamma"] = {opts.fusion.gamma1, opts.fusion.gamma2, opts.fusion.gamma3, opts.fusion.gamma4};
  meta["gf_radius"] = opts.fusion.gf_radius;
  meta["gf_eps"] = opts.fusion.gf_eps;
  meta["saliency_bins"] = opts.fusion.sal_bins;
  meta["fusion_skip"] = to_string(opts.skip);
  meta["network_width"] = ckpt.params.arch.width;
  meta["skip_mode"] = to_string(ckpt.params.arch.skip_mode);
  fs::path side = out;
  side += ".json";
  open_out(side) << meta.dump(2) << '\n';
}

void fuse_manifest(const Checkpoint& ckpt, const PairManifest& manifest, const FuseOptions& opts,
                   const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& p : manifest.pairs)
    write_image(fuse_images(ckpt.params, load_grayscale(p.ir), load_grayscale(p.vis), opts), out_dir / (p.id + ".png"));
}

Image normalize_for_display(const Image& map) {
  Image out(map.height, map.width, 0.5);
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.pixels.begin(), map.pixels.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out.pixels[i] = (map.pixels[i] - *lo) / range;
  return out;
}

Decomposition decompose_image(const NetworkParams<float>& params, const Image& img) {
  const NetworkParams<double> p = params_cast<double>(params);
  const FeatureMaps<double> m = encode(p, images_to_tensor<double>({&img}));
  Decomposition d;
  if (!m.base.empty()) d.base = normalize_for_display(channel_image(m.base, 0, 0));
  if (!m.detail.empty()) d.detail = normalize_for_display(channel_image(m.detail, 0, 0));
  return d;
}

std::vector<fs::path> decompose_file(const Checkpoint& ckpt, const fs::path& image, const fs::path& out_dir) {
  const Decomposition d = decompose_image(ckpt.params, load_grayscale(image));
  std::vector<fs::path> written;
  const std::string stem = image.stem().string();
  if (!d.base.empty()) {
    written.push_back(out_dir / (stem + "_base.png"));
    write_image(d.base, written.back());
  }
  if (!d.detail.empty()) {
    written.push_back(out_dir / (stem + "_detail.png"));
    write_image(d.detail, written.back());
  }
  return written;
}

metrics::MetricReport mean_report(const std::vector<std::pair<std::string, metrics::MetricReport>>& rows) {
  metrics::MetricReport m;
  if (rows.empty()) return m;
  for (const auto& [id, r] : rows) {
    m.en += r.en;
    m.sd += r.sd;
    m.sf += r.sf;
    m.vif += r.vif;
    m.ag += r.ag;
    m.scd += r.scd;
  }
  const double n = static_cast<double>(rows.size());
  m.en /= n;
  m.sd /= n;
  m.sf /= n;
  m.vif /= n;
  m.ag /= n;
  m.scd /= n;
  return m;
}

EvalTable evaluate_images(const std::vector<std::string>& ids, const std::vector<Image>& fused,
                          const std::vector<Image>& ir, const std::vector<Image>& vis,
                          const metrics::VifConfig& vif) {
  const std::size_t n = ids.size();
  if (n == 0) throw std::invalid_argument("nothing to evaluate");
  if (fused.size() != n || ir.size() != n || vis.size() != n) throw std::invalid_argument("evaluation lists are misaligned");
  std::vector<metrics::MetricReport> reports(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      reports[i] = metrics::evaluate_all(fused[i], ir[i], vis[i], vif);
      reports[i].fused_id = reports[i].ir_id = reports[i].vis_id = ids[i];
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  EvalTable t;
  for (std::size_t i = 0; i < n; ++i) t.rows.emplace_back(ids[i], reports[i]);
  t.mean = mean_report(t.rows);
  return t;
}

EvalTable evaluate_dir(const fs::path& fused_dir, const PairManifest& manifest, const metrics::VifConfig& vif) {
  if (!fs::is_directory(fused_dir)) throw IoError("fused directory does not exist: " + fused_dir.string());
  bool any = false;
  for (const auto& e : fs::directory_iterator(fused_dir)) any = any || (e.is_regular_file() && is_image_file(e.path()));
  if (!any) throw IoError("no fused images in " + fused_dir.string());

  std::vector<std::string> ids, warnings;
  std::vector<Image> fused, ir, vis;
  for (const auto& p : manifest.pairs) {
    fs::path found;
    for (const char* ext : {".png", ".pgm", ".ppm"})
      if (fs::exists(fused_dir / (p.id + ext))) {
        found = fused_dir / (p.id + ext);
        break;
      }
    if (found.empty()) {
      warnings.push_back("no fused image for '" + p.id + "'; skipped");
      continue;
    }
    ids.push_back(p.id);
    fused.push_back(load_grayscale(found));
    ir.push_back(load_grayscale(p.ir));
    vis.push_back(load_grayscale(p.vis));
  }
  if (ids.empty()) throw IoError("none of the fused images in " + fused_dir.string() + " match the source pairs");
  EvalTable t = evaluate_images(ids, fused, ir, vis, vif);
  t.warnings = std::move(warnings);
  return t;
}

void write_eval_csv(const EvalTable& table, const fs::path& path) {
  auto out = open_out(path);
  out << metrics::csv_header() << '\n';
  for (const auto& [id, r] : table.rows) out << metrics::csv_row(id, r) << '\n';
  out << metrics::csv_row("mean", table.mean) << '\n';
}

namespace {

EvalTable fuse_and_score(const Checkpoint& ckpt, const PairManifest& test, const FuseOptions& opts,
                         const fs::path& fused_dir) {
  std::vector<std::string> ids;
  std::vector<Image> fused, ir, vis;
  for (const auto& p : test.pairs) {
    ids.push_back(p.id);
    ir.push_back(load_grayscale(p.ir));
    vis.push_back(load_grayscale(p.vis));
    fused.push_back(fuse_images(ckpt.params, ir.back(), vis.back(), opts));
    if (!fused_dir.empty()) write_image(fused.back(), fused_dir / (p.id + ".png"));
  }
  return evaluate_images(ids, fused, ir, vis);
}

}  // namespace

AblationResult ablate(const TrainingSet& train_set, const PairManifest& test, const TrainConfig& cfg,
                      const FuseOptions& fuse_opts, const fs::path& out_dir, const EpochCallback& on_epoch) {
  AblationResult r;
  r.trained = train(train_set, cfg, on_epoch);
  fs::create_directories(out_dir);
  r.trained.record.checkpoint_path = (out_dir / "checkpoint.didf").string();
  save_checkpoint(r.trained.checkpoint, out_dir / "checkpoint.didf");
  write_loss_csv(r.trained.record, out_dir / "loss.csv");
  r.eval = fuse_and_score(r.trained.checkpoint, test, fuse_opts, out_dir / "fused");
  write_eval_csv(r.eval, out_dir / "metrics.csv");
  return r;
}

namespace {

constexpr const char* kMetricNames[] = {"en", "sd", "sf", "vif", "ag", "scd"};

std::array<double, 6> as_array(const metrics::MetricReport& r) { return {r.en, r.sd, r.sf, r.vif, r.ag, r.scd}; }

metrics::MetricReport from_array(const std::array<double, 6>& a) {
  metrics::MetricReport r;
  r.en = a[0];
  r.sd = a[1];
  r.sf = a[2];
  r.vif = a[3];
  r.ag = a[4];
  r.scd = a[5];
  return r;
}

}  // namespace

ReproResult repro(const TrainingSet& train_set, const PairManifest& test, int runs, const TrainConfig& cfg,
                  const FuseOptions& fuse_opts, const fs::path& out_dir, std::optional<std::uint64_t> fixed_seed,
                  const EpochCallback& on_epoch) {
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  ReproResult res;
  for (int k = 0; k < runs; ++k) {
    TrainConfig c = cfg;
    c.seed = fixed_seed.value_or(static_cast<std::uint64_t>(k));
    const fs::path dir = out_dir / ("run" + std::to_string(k));
    const AblationResult r = ablate(train_set, test, c, fuse_opts, dir, on_epoch);
    res.seeds.push_back(c.seed);
    res.runs.push_back(r.eval.mean);
  }
  std::array<double, 6> mean{}, sd{}, cv{};
  for (const auto& r : res.runs) {
    const auto a = as_array(r);
    for (int m = 0; m < 6; ++m) mean[m] += a[m] / runs;
  }
  for (const auto& r : res.runs) {
    const auto a = as_array(r);
    for (int m = 0; m < 6; ++m) sd[m] += (a[m] - mean[m]) * (a[m] - mean[m]) / runs;
  }
  for (int m = 0; m < 6; ++m) {
    sd[m] = std::sqrt(sd[m]);
    cv[m] = mean[m] != 0.0 ? sd[m] / std::abs(mean[m]) : 0.0;
  }
  res.mean = from_array(mean);
  res.stdev = from_array(sd);
  res.cv = from_array(cv);

  auto runs_csv = open_out(out_dir / "runs.csv");
  runs_csv << "run,seed,en,sd,sf,vif,ag,scd\n";
  for (std::size_t k = 0; k < res.runs.size(); ++k) {
    runs_csv << k << ',' << res.seeds[k];
    for (double v : as_array(res.runs[k])) runs_csv << ',' << fixed6(v);
    runs_csv << '\n';
  }
  auto disp = open_out(out_dir / "dispersion.csv");
  disp << "metric,mean,std,cv\n";
  for (int m = 0; m < 6; ++m) disp << kMetricNames[m] << ',' << fixed6(mean[m]) << ',' << fixed6(sd[m]) << ',' << fixed6(cv[m]) << '\n';
  return res;
}

std::vector<StrategyRow> compare_strategies(const Checkpoint& ckpt, const PairManifest& val,
                                            const fusion::FusionConfig& base_cfg) {
  std::vector<StrategyRow> rows;
  for (auto sam : {fusion::SamStrategy::kL1, fusion::SamStrategy::kSaliency, fusion::SamStrategy::kWeighted}) {
    for (bool use_cam : {false, true}) {
      FuseOptions opts;
      opts.fusion = base_cfg;
      opts.fusion.sam = sam;
      opts.fusion.use_cam = use_cam;
      rows.push_back({sam, use_cam, fuse_and_score(ckpt, val, opts, {}).mean});
    }
  }
  return rows;
}

void write_strategy_csv(const std::vector<StrategyRow>& rows, const fs::path& path) {
  auto out = open_out(path);
  out << "sam,cam,en,sd,sf,vif,ag,scd\n";
  for (const auto& r : rows) {
    out << fusion::to_string(r.sam) << ',' << (r.cam ? "on" : "off");
    for (double v : as_array(r.mean)) out << ',' << fixed6(v);
    out << '\n';
  }
}

}  // namespace didfuse

// Command-line front end: train, fuse, decompose, eval, ablate, repro,
// compare-strategies, synth.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "didfuse/checkpoint.hpp"
#include "didfuse/pipeline.hpp"
#include "didfuse/synthetic.hpp"

namespace fs = std::filesystem;
using namespace didfuse;

namespace {

struct DataArgs {
  std::string ir_dir, vis_dir, manifest;

  PairManifest resolve(const char* what) const {
    PairManifest m;
    if (!manifest.empty()) {
      m = read_manifest(manifest);
    } else if (!ir_dir.empty() && !vis_dir.empty()) {
      m = build_manifest(ir_dir, vis_dir);
    } else {
      throw std::invalid_argument(std::string("the ") + what + " set needs --manifest or both image directories");
    }
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
    return m;
  }
  bool given() const { return !manifest.empty() || (!ir_dir.empty() && !vis_dir.empty()); }
};

struct TrainArgs {
  TrainConfig cfg;
  std::string skip_mode = "add", precision = "f32", reduction = "mean";
  bool quiet = false;

  void add(CLI::App* app, bool with_variant) {
    app->add_option("--epochs", cfg.epochs, "Training epochs")->check(CLI::PositiveNumber);
    app->add_option("--batch", cfg.batch_size, "Mini-batch size (pairs)")->check(CLI::PositiveNumber);
    app->add_option("--lr", cfg.lr, "Initial learning rate")->check(CLI::PositiveNumber);
    app->add_option("--width", cfg.width, "Feature channels W")->check(CLI::PositiveNumber);
    app->add_option("--crop", cfg.crop, "Center-crop size for training images");
    app->add_option("--seed", cfg.seed, "Random seed");
    if (with_variant)
      app->add_option("--variant", cfg.variant, "full|no-base|no-detail|no-decomp|classic-ae|no-skip")
          ->check(CLI::IsMember(kTrainVariants));
    app->add_option("--skip-mode", skip_mode, "Decoder skips: add|concat|none")->check(CLI::IsMember({"add", "concat", "none"}));
    app->add_option("--precision", precision, "Compute precision f32|f64")->check(CLI::IsMember({"f32", "f64"}));
    app->add_option("--reduction", reduction, "Norm reduction in the loss: sum|mean")->check(CLI::IsMember({"sum", "mean"}));
    app->add_option("--alpha1", cfg.loss.alpha1);
    app->add_option("--alpha2", cfg.loss.alpha2);
    app->add_option("--alpha3", cfg.loss.alpha3);
    app->add_option("--alpha4", cfg.loss.alpha4);
    app->add_option("--lambda", cfg.loss.lambda);
    app->add_flag("--quiet", quiet, "No per-epoch progress");
  }

  TrainConfig finish() {
    cfg.skip_mode = parse_skip_mode(skip_mode);
    cfg.precision = parse_precision(precision);
    cfg.loss.reduction = parse_reduction(reduction);
    cfg.validate();
    return cfg;
  }

  EpochCallback progress() const {
    if (quiet) return {};
    return [](const EpochRecord& e) {
      std::fprintf(stderr, "epoch %4d  lr %.2e  total %.6f  base %.4f  detail %.4f\n", e.epoch, e.lr, e.mean.total,
                   e.mean.base_gap, e.mean.detail_gap);
    };
  }
};

struct FuseArgs {
  std::string sam = "saliency", gamma, skip = "avg";
  bool no_cam = false;
  fusion::FusionConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--sam", sam, "Spatial attention: l1|saliency|average")->check(CLI::IsMember({"l1", "saliency", "average"}));
    app->add_flag("--no-cam", no_cam, "Disable channel attention");
    app->add_option("--gamma", gamma, "Fixed weights a,b,c,d for the average strategy");
    app->add_option("--gf-radius", cfg.gf_radius, "Guided filter radius");
    app->add_option("--gf-eps", cfg.gf_eps, "Guided filter regularizer");
    app->add_option("--fusion-skip", skip, "Decoder skips at fusion: avg|ir|vis|fused-sam")
        ->check(CLI::IsMember({"avg", "ir", "vis", "fused-sam"}));
  }

  FuseOptions finish() {
    FuseOptions o;
    o.fusion = cfg;
    o.fusion.sam = fusion::parse_sam(sam);
    o.fusion.use_cam = !no_cam;
    if (!gamma.empty()) {
      std::vector<double> g;
      std::stringstream ss(gamma);
      std::string tok;
      while (std::getline(ss, tok, ',')) g.push_back(std::stod(tok));
      if (g.size() != 4) throw std::invalid_argument("--gamma takes four comma-separated numbers");
      o.fusion.gamma1 = g[0];
      o.fusion.gamma2 = g[1];
      o.fusion.gamma3 = g[2];
      o.fusion.gamma4 = g[3];
    }
    o.fusion.validate();
    o.skip = parse_fusion_skip(skip);
    return o;
  }
};

void add_data(CLI::App* app, DataArgs& d, const std::string& prefix = "") {
  app->add_option("--" + prefix + "ir-dir", d.ir_dir, "Infrared image directory");
  app->add_option("--" + prefix + "vis-dir", d.vis_dir, "Visible image directory");
  app->add_option("--" + prefix + "manifest", d.manifest, "Pair list: id<TAB>ir<TAB>vis per line");
}

void print_metric_row(const std::string& label, const metrics::MetricReport& r) {
  std::printf("%-10s EN %.4f  SD %.4f  SF %.4f  VIF %.4f  AG %.4f  SCD %.4f\n", label.c_str(), r.en, r.sd, r.sf, r.vif,
              r.ag, r.scd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-stream auto-encoder for infrared and visible image fusion"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an encoder/decoder on image pairs");
  DataArgs train_data;
  TrainArgs train_args;
  std::string train_out, loss_csv;
  add_data(train_cmd, train_data);
  train_args.add(train_cmd, true);
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--loss-csv", loss_csv, "Per-epoch loss table (default <out>.loss.csv)");

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse one infrared/visible pair");
  std::string ckpt_path, ir_path, vis_path, fuse_out;
  FuseArgs fuse_args;
  fuse_cmd->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--ir", ir_path)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--vis", vis_path)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--out", fuse_out, "Fused image (.png or .pgm)")->required();
  fuse_args.add(fuse_cmd);

  // decompose
  auto* dec_cmd = app.add_subcommand("decompose", "Write the first base and detail channels as images");
  std::string dec_ckpt, dec_image, dec_out;
  dec_cmd->add_option("--ckpt", dec_ckpt)->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--image", dec_image)->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--out-dir", dec_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score fused images against their sources");
  std::string fused_dir, eval_csv;
  DataArgs eval_data;
  eval_cmd->add_option("--fused-dir", fused_dir)->required();
  add_data(eval_cmd, eval_data);
  eval_cmd->add_option("--csv", eval_csv)->required();

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "Train and score one structural or loss ablation");
  DataArgs abl_data, abl_test;
  TrainArgs abl_args;
  FuseArgs abl_fuse;
  std::string abl_out;
  add_data(abl_cmd, abl_data);
  add_data(abl_cmd, abl_test, "test-");
  abl_args.add(abl_cmd, true);
  abl_fuse.add(abl_cmd);
  abl_cmd->add_option("--out-dir", abl_out)->required();

  // repro
  auto* rep_cmd = app.add_subcommand("repro", "Train several seeds and report metric dispersion");
  DataArgs rep_data, rep_test;
  TrainArgs rep_args;
  FuseArgs rep_fuse;
  std::string rep_out;
  int runs = 20;
  std::optional<std::uint64_t> fixed_seed;
  add_data(rep_cmd, rep_data);
  add_data(rep_cmd, rep_test, "test-");
  rep_args.add(rep_cmd, true);
  rep_fuse.add(rep_cmd);
  rep_cmd->add_option("--runs", runs)->check(CLI::PositiveNumber);
  rep_cmd->add_option("--fixed-seed", fixed_seed, "Use this seed for every run");
  rep_cmd->add_option("--out-dir", rep_out)->required();

  // compare-strategies
  auto* cmp_cmd = app.add_subcommand("compare-strategies", "Score all six fusion strategy combinations");
  std::string cmp_ckpt, cmp_csv;
  DataArgs cmp_data;
  FuseArgs cmp_fuse;
  cmp_cmd->add_option("--ckpt", cmp_ckpt)->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--val-manifest", cmp_data.manifest);
  cmp_cmd->add_option("--val-ir-dir", cmp_data.ir_dir);
  cmp_cmd->add_option("--val-vis-dir", cmp_data.vis_dir);
  cmp_cmd->add_option("--csv", cmp_csv)->required();
  cmp_cmd->add_option("--gf-radius", cmp_fuse.cfg.gf_radius);
  cmp_cmd->add_option("--gf-eps", cmp_fuse.cfg.gf_eps);

  // synth
  auto* syn_cmd = app.add_subcommand("synth", "Write a synthetic registered pair corpus");
  std::string syn_out;
  std::size_t syn_count = 16, syn_size = 64;
  std::uint64_t syn_seed = 0;
  syn_cmd->add_option("--out-dir", syn_out)->required();
  syn_cmd->add_option("--count", syn_count)->check(CLI::PositiveNumber);
  syn_cmd->add_option("--size", syn_size)->check(CLI::Range(2, 4096));
  syn_cmd->add_option("--seed", syn_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const TrainConfig cfg = train_args.finish();
      const TrainingSet data = load_training_set(train_data.resolve("training"), cfg.crop);
      TrainResult r = train(data, cfg, train_args.progress());
      save_checkpoint(r.checkpoint, train_out);
      r.record.checkpoint_path = train_out;
      write_loss_csv(r.record, loss_csv.empty() ? train_out + ".loss.csv" : loss_csv);
      std::fprintf(stderr, "trained %d epochs on %zu pairs in %.1f s -> %s\n", cfg.epochs, data.size(),
                   r.record.wall_seconds, train_out.c_str());
    } else if (*fuse_cmd) {
      fuse_files(load_checkpoint(ckpt_path), ir_path, vis_path, fuse_args.finish(), fuse_out, ckpt_path);
    } else if (*dec_cmd) {
      for (const auto& p : decompose_file(load_checkpoint(dec_ckpt), dec_image, dec_out)) std::cout << p.string() << '\n';
    } else if (*eval_cmd) {
      const EvalTable t = evaluate_dir(fused_dir, eval_data.resolve("source"));
      for (const auto& w : t.warnings) std::cerr << "warning: " << w << '\n';
      write_eval_csv(t, eval_csv);
      print_metric_row("mean", t.mean);
    } else if (*abl_cmd) {
      const TrainConfig cfg = abl_args.finish();
      const PairManifest train_m = abl_data.resolve("training");
      const PairManifest test_m = abl_test.given() ? abl_test.resolve("test") : train_m;
      if (!abl_test.given()) std::cerr << "warning: no test pairs given; scoring the training pairs\n";
      const AblationResult r =
          ablate(load_training_set(train_m, cfg.crop), test_m, cfg, abl_fuse.finish(), abl_out, abl_args.progress());
      print_metric_row(cfg.variant, r.eval.mean);
    } else if (*rep_cmd) {
      const TrainConfig cfg = rep_args.finish();
      const PairManifest train_m = rep_data.resolve("training");
      const PairManifest test_m = rep_test.given() ? rep_test.resolve("test") : train_m;
      if (!rep_test.given()) std::cerr << "warning: no test pairs given; scoring the training pairs\n";
      const ReproResult r = repro(load_training_set(train_m, cfg.crop), test_m, runs, cfg, rep_fuse.finish(), rep_out,
                                  fixed_seed, rep_args.progress());
      print_metric_row("mean", r.mean);
      print_metric_row("std", r.stdev);
      print_metric_row("cv", r.cv);
    } else if (*cmp_cmd) {
      const auto rows = compare_strategies(load_checkpoint(cmp_ckpt), cmp_data.resolve("validation"), cmp_fuse.cfg);
      write_strategy_csv(rows, cmp_csv);
      for (const auto& r : rows) print_metric_row(fusion::to_string(r.sam) + (r.cam ? "+cam" : ""), r.mean);
    } else if (*syn_cmd) {
      const PairManifest m = write_synthetic_corpus(syn_out, syn_count, syn_size, syn_size, syn_seed);
      write_manifest(m, fs::path(syn_out) / "manifest.tsv");
      std::fprintf(stderr, "wrote %zu pairs under %s\n", m.pairs.size(), syn_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

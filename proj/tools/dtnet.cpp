// Command-line front end: synthetic data generation, training, evaluation,
// gradient checks, parameter accounting, the threshold sweep, the strategy
// ablation suite, and directional feature dumps.
//
// Exit codes: 0 success, 2 usage, 3 validation or assertion failure, 4 I/O.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtnet/checks.hpp"
#include "dtnet/dataio.hpp"
#include "dtnet/model.hpp"
#include "dtnet/train.hpp"

namespace fs = std::filesystem;
using namespace dtnet;

namespace {

// Reference totals for the published configuration (1-channel 256x256 input,
// filters 24/48/96/192/192, 2 classes): full network and the no-MDIC variant.
constexpr std::size_t kReferenceParamsFull = 5272277;
constexpr std::size_t kReferenceParamsNoMdic = 7651541;

struct ModelFlags {
  std::vector<int> filters{24, 48, 96, 192, 192};
  int num_classes = 2;
  int input_channels = 1;
  int input_size = 256;
  double threshold = 0.1;
  std::string variant = "epsilon";
  bool multi_scale = true;
  bool disable_mdic = false, disable_threshold = false, disable_skip = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--filters", filters, "encoder filter counts, five values")->expected(5);
    cmd->add_option("--classes", num_classes, "number of classes including background");
    cmd->add_option("--channels", input_channels, "input channel count");
    cmd->add_option("--size", input_size, "square input extent");
    cmd->add_option("--threshold", threshold, "threshold convolution T");
    cmd->add_option("--threshold-variant", variant, "hard or epsilon")
        ->check(CLI::IsMember({"hard", "epsilon"}));
    cmd->add_flag("--multi-scale,!--no-multi-scale", multi_scale,
                  "apply all four kernel sizes in every part branch");
    cmd->add_flag("--disable-mdic", disable_mdic, "replace parts with one unsplit branch");
    cmd->add_flag("--disable-threshold", disable_threshold, "remove the threshold layer");
    cmd->add_flag("--disable-skip", disable_skip, "zero the encoder skip tensors");
  }

  DtNetConfig config() const {
    DtNetConfig c;
    c.encoder_filters = filters;
    c.decoder_filters = std::vector<int>(filters.rbegin(), filters.rend());
    c.num_classes = num_classes;
    c.input_channels = input_channels;
    c.input_size = input_size;
    c.threshold.value = threshold;
    c.threshold.variant =
        variant == "hard" ? ThresholdSpec::Variant::Hard : ThresholdSpec::Variant::Epsilon;
    c.multi_scale = multi_scale;
    c.disable_mdic = disable_mdic;
    c.disable_threshold = disable_threshold;
    c.disable_skip = disable_skip;
    c.validate();
    return c;
  }
};

// Model config derived from a dataset, with the geometry taken from the data.
DtNetConfig config_for(const ModelFlags& flags, const io::Dataset& ds) {
  ModelFlags f = flags;
  f.input_channels = ds.channels;
  f.input_size = ds.size;
  f.num_classes = ds.num_classes;
  return f.config();
}

void write_run_manifest(const std::string& out_dir, const DtNetConfig& cfg,
                        const TrainOptions& opt, const TrainRun& run) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "run.txt");
  for (const auto& [k, v] : config_kv(cfg)) f << k << " = " << v << "\n";
  f << "epochs = " << opt.epochs << "\n";
  f << "batch_size = " << opt.batch_size << "\n";
  f << "lr = " << opt.lr << "\n";
  f << "seed = " << opt.seed << "\n";
  f << "train_digest = " << run.train_digest << "\n";
  f << "test_digest = " << run.test_digest << "\n";
  f << "wall_seconds = " << run.wall_seconds << "\n";
  if (!run.records.empty()) {
    f << "final_train_loss = " << run.records.back().train_loss << "\n";
    f << "final_test_dice_macro = " << run.records.back().test_dice_macro << "\n";
  }
}

void print_eval(const EvalResult& ev) {
  std::printf("loss %.6f  mean dice macro %.4f  micro %.4f\n", ev.loss, ev.mean_dice_macro,
              ev.mean_dice_micro);
  for (const auto& [cls, s] : ev.per_class_macro)
    std::printf("  class %d  acc %.4f  sens %.4f  spec %.4f  dice %.4f\n", cls, s.accuracy,
                s.sensitivity, s.specificity, s.dice);
}

int run(int argc, char** argv) {
  CLI::App app{"DT-Net segmentation toolkit"};
  app.require_subcommand(1);

  // synth-data ---------------------------------------------------------
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic shape dataset");
  std::string synth_out = "data";
  io::SynthSpec sspec;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", sspec.n_images, "number of images");
  synth->add_option("--size", sspec.size, "square image extent");
  synth->add_option("--classes", sspec.n_classes, "classes including background");
  synth->add_option("--channels", sspec.channels, "image channels");
  synth->add_option("--seed", sspec.seed, "generator seed");
  synth->add_option("--noise", sspec.noise, "gaussian noise sigma");

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train on a dataset manifest (3:2 split)");
  std::string train_data, train_out = "runs/train";
  TrainOptions topt;
  ModelFlags tflags;
  train->add_option("--data", train_data, "dataset manifest path")->required();
  train->add_option("--out", train_out, "run output directory");
  train->add_option("--epochs", topt.epochs, "training epochs");
  train->add_option("--batch", topt.batch_size, "batch size");
  train->add_option("--lr", topt.lr, "adam learning rate");
  train->add_option("--seed", topt.seed, "shuffle and init seed");
  train->add_option("--checkpoint-every", topt.checkpoint_every, "epochs between checkpoints");
  train->add_flag("--quiet", topt.quiet, "suppress per-epoch lines");
  tflags.attach(train);

  // eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a saved model on a dataset");
  std::string eval_model, eval_data, eval_csv;
  int eval_batch = 4;
  ev->add_option("--model", eval_model, "model archive directory")->required();
  ev->add_option("--data", eval_data, "dataset manifest path")->required();
  ev->add_option("--out", eval_csv, "metrics CSV path");
  ev->add_option("--batch", eval_batch, "batch size");

  // gradcheck -------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_scope = "all";
  uint64_t gc_seed = 1;
  gc->add_option("--scope", gc_scope, "one scope name or 'all'");
  gc->add_option("--seed", gc_seed, "scenario seed");

  // count-params ----------------------------------------------------------
  auto* cp = app.add_subcommand("count-params", "parameter accounting for a configuration");
  ModelFlags cpflags;
  cpflags.attach(cp);

  // threshold-sweep ---------------------------------------------------------
  auto* sweep = app.add_subcommand("threshold-sweep", "train once per threshold value");
  std::string sweep_data, sweep_out = "runs/sweep";
  std::vector<double> sweep_values{0.0, 0.1, 0.3, 0.5};
  TrainOptions sopt;
  ModelFlags sflags;
  sweep->add_option("--data", sweep_data, "dataset manifest path")->required();
  sweep->add_option("--out", sweep_out, "sweep output directory");
  sweep->add_option("--thresholds", sweep_values, "values; 0 disables the layer");
  sweep->add_option("--epochs", sopt.epochs, "epochs per run");
  sweep->add_option("--batch", sopt.batch_size, "batch size");
  sweep->add_option("--lr", sopt.lr, "adam learning rate");
  sweep->add_option("--seed", sopt.seed, "shared seed");
  sweep->add_flag("--quiet", sopt.quiet, "suppress per-epoch lines");
  sflags.attach(sweep);

  // ablate -----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "train the six strategy variants");
  std::string ab_data, ab_out = "runs/ablate";
  TrainOptions aopt;
  ModelFlags aflags;
  ab->add_option("--data", ab_data, "dataset manifest path")->required();
  ab->add_option("--out", ab_out, "suite output directory");
  ab->add_option("--epochs", aopt.epochs, "epochs per variant");
  ab->add_option("--batch", aopt.batch_size, "batch size");
  ab->add_option("--lr", aopt.lr, "adam learning rate");
  ab->add_option("--seed", aopt.seed, "shared seed");
  ab->add_flag("--quiet", aopt.quiet, "suppress per-epoch lines");
  aflags.attach(ab);

  // dump-features ----------------------------------------------------------
  auto* df = app.add_subcommand("dump-features",
                                "write one PGM per channel of an encoder part branch");
  std::string df_model, df_image, df_out = "features";
  std::string df_module = "enc1";
  int df_part = 1;
  df->add_option("--model", df_model, "model archive directory")->required();
  df->add_option("--image", df_image, "input image (.dtt, [C,S,S])")->required();
  df->add_option("--module", df_module, "enc1..enc5")
      ->check(CLI::IsMember({"enc1", "enc2", "enc3", "enc4", "enc5"}));
  df->add_option("--part", df_part, "direction branch 1..4")->check(CLI::Range(1, 4));
  df->add_option("--out", df_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    const uint64_t digest = io::synth_generate(sspec, synth_out);
    std::printf("wrote %d images to %s\ndigest %llu\n", sspec.n_images, synth_out.c_str(),
                static_cast<unsigned long long>(digest));
    return 0;
  }

  if (train->parsed()) {
    io::Dataset all = io::load_dataset(train_data);
    io::Dataset tr, te;
    split_dataset(all, tr, te);
    DtNetConfig cfg = config_for(tflags, all);
    DtNet<float> net = build_dtnet<float>(cfg, topt.seed);
    topt.out_dir = train_out;
    TrainRun run = train_model(net, tr, te, topt);
    save_model(net, (fs::path(train_out) / "model").string());
    write_run_manifest(train_out, cfg, topt, run);
    std::printf("trained %d epochs in %.1fs, final test mean dice %.4f\n", topt.epochs,
                run.wall_seconds, run.records.back().test_dice_macro);
    return 0;
  }

  if (ev->parsed()) {
    DtNet<float> net = load_model<float>(eval_model);
    io::Dataset data = io::load_dataset(eval_data);
    EvalResult res = evaluate(net, data, eval_batch);
    print_eval(res);
    if (!eval_csv.empty())
      metrics::write_metrics_csv(eval_csv, res.per_class_macro, {});
    return 0;
  }

  if (gc->parsed()) {
    std::vector<std::string> scopes =
        gc_scope == "all" ? checks::scope_names() : std::vector<std::string>{gc_scope};
    bool ok = true;
    for (const auto& s : scopes) {
      GradCheckReport r = checks::run_scope(s, gc_seed);
      std::printf("%-10s %s  max rel err %.3e  (%zu coords%s%s)\n", s.c_str(),
                  r.pass ? "pass" : "FAIL", r.max_rel_err, r.coords_checked,
                  r.worst.empty() ? "" : ", worst at ", r.worst.c_str());
      ok = ok && r.pass;
    }
    if (!ok) throw std::domain_error("gradient check failed");
    return 0;
  }

  if (cp->parsed()) {
    DtNetConfig cfg = cpflags.config();
    DtNet<float> net = build_dtnet<float>(cfg, 1);
    ParamCount pc = count_params(net);
    std::printf("trainable parameters     %zu\n", pc.trainable);
    std::printf("non-trainable (bn stats) %zu\n", pc.non_trainable);
    for (const auto& [mod, n] : pc.per_module) std::printf("  %-12s %zu\n", mod.c_str(), n);
    const std::size_t ref = cfg.disable_mdic ? kReferenceParamsNoMdic : kReferenceParamsFull;
    const double delta = 100.0 * (static_cast<double>(pc.trainable) - static_cast<double>(ref)) /
                         static_cast<double>(ref);
    std::printf("reference total %zu, delta %+.1f%%\n", ref, delta);
    return 0;
  }

  if (sweep->parsed()) {
    io::Dataset all = io::load_dataset(sweep_data);
    io::Dataset tr, te;
    split_dataset(all, tr, te);
    sopt.out_dir = sweep_out;
    threshold_sweep(config_for(sflags, all), sweep_values, tr, te, sopt);
    std::printf("sweep complete, curves under %s\n", sweep_out.c_str());
    return 0;
  }

  if (ab->parsed()) {
    io::Dataset all = io::load_dataset(ab_data);
    io::Dataset tr, te;
    split_dataset(all, tr, te);
    aopt.out_dir = ab_out;
    std::vector<AblationRow> rows = ablation_suite(config_for(aflags, all), tr, te, aopt);
    std::printf("%-14s %12s %12s %10s\n", "variant", "params", "test loss", "dice");
    for (const auto& r : rows)
      std::printf("%-14s %12zu %12.5f %10.4f\n", r.name.c_str(), r.param_count, r.final_loss,
                  r.final_dice);
    return 0;
  }

  if (df->parsed()) {
    DtNet<float> net = load_model<float>(df_model);
    Tensor<float> image = io::dtt_read<float>(df_image);
    const int module_idx = df_module[3] - '1';
    Tensor<float> feats = encoder_part_features(net, image, module_idx, df_part - 1);
    fs::create_directories(df_out);
    const int C = feats.extent(1), H = feats.extent(2), W = feats.extent(3);
    for (int c = 0; c < C; ++c) {
      Tensor<float> plane({H, W});
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) plane[i * W + j] = feats.at(0, c, i, j);
      char name[64];
      std::snprintf(name, sizeof name, "%s_part%d_ch%02d.pgm", df_module.c_str(), df_part, c);
      io::export_pgm(plane, (fs::path(df_out) / name).string());
    }
    std::printf("wrote %d channel maps (%dx%d) to %s\n", C, H, W, df_out.c_str());
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::logic_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  }
}

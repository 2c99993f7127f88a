#include "dtnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace fs = std::filesystem;

namespace dtnet {

namespace {

// Stacks dataset samples into one batch pair.
void make_batch(const io::Dataset& ds, const std::vector<int>& idx, std::size_t first,
                std::size_t count, Tensor<float>& images, Tensor<uint8_t>& labels) {
  const int C = ds.channels, S = ds.size;
  images = Tensor<float>({static_cast<int>(count), C, S, S});
  labels = Tensor<uint8_t>({static_cast<int>(count), S, S});
  const std::size_t ipix = static_cast<std::size_t>(C) * S * S;
  const std::size_t mpix = static_cast<std::size_t>(S) * S;
  for (std::size_t b = 0; b < count; ++b) {
    const auto& s = ds.samples[idx[first + b]];
    std::copy_n(s.image.data(), ipix, images.data() + b * ipix);
    std::copy_n(s.mask.data(), mpix, labels.data() + b * mpix);
  }
}

std::vector<int> foreground_classes(const io::Dataset& ds) {
  std::vector<int> cls;
  for (int c = 1; c < ds.num_classes; ++c) cls.push_back(c);
  return cls;
}

}  // namespace

Tensor<uint8_t> argmax_labels(const Tensor<float>& logits) {
  const int N = logits.extent(0), C = logits.extent(1), H = logits.extent(2), W = logits.extent(3);
  Tensor<uint8_t> out({N, H, W});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        int best = 0;
        float bv = logits.at(n, 0, i, j);
        for (int c = 1; c < C; ++c)
          if (logits.at(n, c, i, j) > bv) {
            bv = logits.at(n, c, i, j);
            best = c;
          }
        out[(static_cast<std::size_t>(n) * H + i) * W + j] = static_cast<uint8_t>(best);
      }
  return out;
}

EvalResult evaluate(DtNet<float>& net, const io::Dataset& data, int batch_size) {
  const auto classes = foreground_classes(data);
  // per class: one confusion per image (macro) and the running sum (micro)
  std::vector<std::vector<metrics::ConfusionCounts>> per_image(classes.size());
  double loss_sum = 0;
  std::size_t seen = 0;

  std::vector<int> idx(data.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t at = 0; at < idx.size(); at += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, idx.size() - at);
    Tensor<float> images;
    Tensor<uint8_t> labels;
    make_batch(data, idx, at, count, images, labels);
    Var<float> x = make_var(std::move(images));
    Var<float> logits = net.forward(nullptr, x, Mode::Infer);
    Var<float> loss = softmax_xent<float>(nullptr, logits, labels);
    loss_sum += loss->value[0] * count;
    seen += count;
    Tensor<uint8_t> pred = argmax_labels(logits->value);
    const int S = data.size;
    for (std::size_t b = 0; b < count; ++b) {
      Tensor<uint8_t> p({S, S}), t({S, S});
      std::copy_n(pred.data() + b * S * S, static_cast<std::size_t>(S) * S, p.data());
      std::copy_n(labels.data() + b * S * S, static_cast<std::size_t>(S) * S, t.data());
      for (std::size_t ci = 0; ci < classes.size(); ++ci)
        per_image[ci].push_back(metrics::confusion(p, t, classes[ci], data.num_classes));
    }
  }

  EvalResult r;
  r.loss = loss_sum / static_cast<double>(seen);
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const auto micro = metrics::aggregate_micro(per_image[ci]);
    const auto macro = metrics::aggregate_macro(per_image[ci]);
    r.per_class_micro.emplace_back(classes[ci], micro);
    r.per_class_macro.emplace_back(classes[ci], macro);
    r.mean_dice_micro += micro.dice;
    r.mean_dice_macro += macro.dice;
  }
  if (!classes.empty()) {
    r.mean_dice_micro /= static_cast<double>(classes.size());
    r.mean_dice_macro /= static_cast<double>(classes.size());
  }
  return r;
}

void split_dataset(const io::Dataset& all, io::Dataset& train, io::Dataset& test) {
  const std::size_t n_train = all.samples.size() * 3 / 5;
  train = test = io::Dataset{};
  train.channels = test.channels = all.channels;
  train.size = test.size = all.size;
  train.num_classes = test.num_classes = all.num_classes;
  for (std::size_t i = 0; i < all.samples.size(); ++i) {
    auto& dst = i < n_train ? train : test;
    dst.digest += io::sample_digest(all.samples[i]);
    dst.samples.push_back(all.samples[i]);
  }
}

TrainRun train_model(DtNet<float>& net, const io::Dataset& train_set,
                     const io::Dataset& test_set, const TrainOptions& opt) {
  if (train_set.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (train_set.size != net.config.input_size || train_set.channels != net.config.input_channels)
    throw std::invalid_argument("train: dataset shape does not match the model config");

  const auto t0 = std::chrono::steady_clock::now();
  Adam<float> adam(opt.lr);
  std::mt19937 shuffler(static_cast<std::mt19937::result_type>(opt.seed));
  TrainRun run;
  run.train_digest = train_set.digest;
  run.test_digest = test_set.digest;

  const auto classes = foreground_classes(train_set);
  std::ofstream curve;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    curve.open(fs::path(opt.out_dir) / "curve.csv");
    curve << "epoch,split,loss,mean_dice\n";
  }

  std::vector<int> idx(train_set.samples.size());
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), shuffler);
    double loss_sum = 0;
    std::size_t seen = 0;
    std::vector<std::vector<metrics::ConfusionCounts>> train_conf(classes.size());

    for (std::size_t at = 0; at < idx.size(); at += opt.batch_size) {
      const std::size_t count = std::min<std::size_t>(opt.batch_size, idx.size() - at);
      Tensor<float> images;
      Tensor<uint8_t> labels;
      make_batch(train_set, idx, at, count, images, labels);

      Tape<float> tape;
      net.params.zero_grads();
      Var<float> x = make_var(std::move(images));
      Var<float> logits = net.forward(&tape, x, Mode::Train);
      Var<float> loss = softmax_xent(&tape, logits, labels);
      tape.backward(loss);
      adam.step(net.params);

      loss_sum += loss->value[0] * count;
      seen += count;
      // Training-split dice from the same forward pass (train-mode BN).
      Tensor<uint8_t> pred = argmax_labels(logits->value);
      const int S = train_set.size;
      for (std::size_t b = 0; b < count; ++b) {
        Tensor<uint8_t> p({S, S}), t({S, S});
        std::copy_n(pred.data() + b * S * S, static_cast<std::size_t>(S) * S, p.data());
        std::copy_n(labels.data() + b * S * S, static_cast<std::size_t>(S) * S, t.data());
        for (std::size_t ci = 0; ci < classes.size(); ++ci)
          train_conf[ci].push_back(metrics::confusion(p, t, classes[ci]));
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    for (auto& tc : train_conf) rec.train_dice += metrics::aggregate_macro(tc).dice;
    if (!classes.empty()) rec.train_dice /= static_cast<double>(classes.size());

    if (!test_set.samples.empty()) {
      EvalResult ev = evaluate(net, test_set, opt.batch_size);
      rec.test_loss = ev.loss;
      rec.test_dice_macro = ev.mean_dice_macro;
      rec.test_dice_micro = ev.mean_dice_micro;
    }
    run.records.push_back(rec);

    if (curve.is_open()) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,train,%.9g,%.9g\n", epoch, rec.train_loss, rec.train_dice);
      curve << buf;
      std::snprintf(buf, sizeof buf, "%d,test,%.9g,%.9g\n", epoch, rec.test_loss,
                    rec.test_dice_macro);
      curve << buf;
    }
    if (!opt.quiet)
      std::printf("epoch %3d  train loss %.5f  dice %.4f | test loss %.5f  dice %.4f\n", epoch,
                  rec.train_loss, rec.train_dice, rec.test_loss, rec.test_dice_macro);

    if (opt.checkpoint_every > 0 && !opt.out_dir.empty() && epoch % opt.checkpoint_every == 0)
      save_model(net, (fs::path(opt.out_dir) / ("checkpoint_" + std::to_string(epoch))).string());
  }

  run.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// ---------------------------------------------------------------------------

namespace {

std::string threshold_tag(double t, const ThresholdSpec& spec) {
  if (t == 0.0) return "off";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g_%s", t,
                spec.variant == ThresholdSpec::Variant::Hard ? "hard" : "eps");
  return buf;
}

}  // namespace

void threshold_sweep(const DtNetConfig& base, const std::vector<double>& thresholds,
                     const io::Dataset& train_set, const io::Dataset& test_set,
                     const TrainOptions& opt) {
  for (double t : thresholds)
    if (t < 0) throw std::invalid_argument("threshold sweep: thresholds must be >= 0");
  for (double t : thresholds) {
    DtNetConfig cfg = base;
    if (t == 0.0) {
      cfg.disable_threshold = true;  // sentinel: no threshold layer at all
    } else {
      cfg.disable_threshold = false;
      cfg.threshold.value = t;
    }
    DtNet<float> net = build_dtnet<float>(cfg, opt.seed);
    TrainOptions ropt = opt;
    ropt.out_dir = (fs::path(opt.out_dir) / ("threshold_" + threshold_tag(t, cfg.threshold))).string();
    train_model(net, train_set, test_set, ropt);
  }
}

std::vector<AblationRow> ablation_suite(const DtNetConfig& base, const io::Dataset& train_set,
                                        const io::Dataset& test_set, const TrainOptions& opt) {
  struct VariantDef {
    const char* name;
    bool no_mdic, no_threshold, no_skip, hard;
  };
  const VariantDef defs[] = {
      {"dtnet", false, false, false, false},   {"dtnet-star", false, false, false, true},
      {"dtnet-no-1", true, false, false, false}, {"dtnet-no-2", false, true, false, false},
      {"dtnet-no-3", false, false, true, false}, {"dtnet-no-1-2", true, true, false, false},
  };
  std::vector<AblationRow> rows;
  for (const auto& d : defs) {
    DtNetConfig cfg = base;
    cfg.disable_mdic = d.no_mdic;
    cfg.disable_threshold = d.no_threshold;
    cfg.disable_skip = d.no_skip;
    if (d.hard) cfg.threshold.variant = ThresholdSpec::Variant::Hard;
    DtNet<float> net = build_dtnet<float>(cfg, opt.seed);
    TrainOptions ropt = opt;
    ropt.out_dir = (fs::path(opt.out_dir) / d.name).string();
    TrainRun run = train_model(net, train_set, test_set, ropt);
    AblationRow row;
    row.name = d.name;
    row.param_count = count_params(net).trainable;
    row.final_loss = run.records.back().test_loss;
    row.final_dice = run.records.back().test_dice_macro;
    rows.push_back(row);
  }
  if (!opt.out_dir.empty()) {
    std::ofstream f(fs::path(opt.out_dir) / "ablation.csv");
    f << "variant,trainable_params,final_test_loss,final_test_mean_dice\n";
    for (const auto& r : rows)
      f << r.name << ',' << r.param_count << ',' << r.final_loss << ',' << r.final_dice << '\n';
  }
  return rows;
}

}  // namespace dtnet

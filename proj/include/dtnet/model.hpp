#pragma once

// DT-Net: five encoder MDIC modules, five decoder MDIC modules, and a 1x1
// pixel classifier. Skip tensors are the pre-pool encoder outputs; decoder
// module j consumes the skip of encoder module 6-j, which is the only pairing
// under which the default filter lists line up at every residual add.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dtnet/dataio.hpp"
#include "dtnet/mdic.hpp"
#include "dtnet/params.hpp"

namespace dtnet {

struct DtNetConfig {
  std::vector<int> encoder_filters{24, 48, 96, 192, 192};
  std::vector<int> decoder_filters{192, 192, 96, 48, 24};
  int num_classes = 2;
  int input_channels = 1;
  int input_size = 256;  // square, divisible by 2^5
  std::array<int, 4> part_kernels{1, 3, 5, 7};
  int global_kernel = 3;
  bool multi_scale = true;
  ThresholdSpec threshold;
  bool disable_mdic = false;
  bool disable_threshold = false;
  bool disable_skip = false;

  void validate() const {
    if (encoder_filters.size() != 5 || decoder_filters.size() != 5)
      throw std::invalid_argument("config: encoder and decoder each take 5 filter counts");
    for (int f : encoder_filters)
      if (f % 4 != 0) throw std::invalid_argument("config: filter counts must be divisible by 4");
    for (std::size_t i = 0; i < 5; ++i)
      if (decoder_filters[i] != encoder_filters[4 - i])
        throw std::invalid_argument("config: decoder filters must be the encoder list reversed");
    if (input_size % 32 != 0)
      throw std::invalid_argument("config: input size must be divisible by 32");
    if (num_classes < 2) throw std::invalid_argument("config: need at least 2 classes");
    if (input_channels < 1) throw std::invalid_argument("config: need at least 1 input channel");
    threshold.validate();
  }

  MdicConfig mdic_for(int cin, int cout) const {
    MdicConfig m;
    m.part_kernels = part_kernels;
    m.global_kernel = global_kernel;
    m.in_channels = cin;
    m.out_channels = cout;
    m.multi_scale = multi_scale;
    return m;
  }
};

template <typename T>
struct DtNet {
  DtNetConfig config;
  ParamStore<T> params;
  std::vector<EmParams<T>> encoder;
  std::vector<DmParams<T>> decoder;
  ConvLayer<T> classifier;

  Var<T> forward(Tape<T>* tape, const Var<T>& x, Mode mode) {
    kernels::require_4d(x->value, "dtnet forward");
    if (x->value.extent(1) != config.input_channels)
      throw std::invalid_argument("forward: expected " + std::to_string(config.input_channels) +
                                  " input channels");
    if (x->value.extent(2) != config.input_size || x->value.extent(3) != config.input_size)
      throw std::invalid_argument("forward: expected spatial extent " +
                                  std::to_string(config.input_size));
    std::vector<Var<T>> skips;
    Var<T> cur = x;
    for (auto& em : encoder) {
      EmOutput<T> o = em_forward(tape, cur, em, mode);
      skips.push_back(o.skip);
      cur = o.out;
    }
    for (std::size_t j = 0; j < decoder.size(); ++j) {
      Var<T> skip = skips[decoder.size() - 1 - j];
      if (config.disable_skip) skip = make_var(Tensor<T>::zeros(skip->value.shape()));
      cur = dm_forward(tape, cur, skip, decoder[j], mode);
    }
    return ops::conv2d(tape, cur, classifier.w, classifier.b);  // logits; loss applies softmax
  }
};

template <typename T>
DtNet<T> build_dtnet(const DtNetConfig& config, uint64_t seed) {
  config.validate();
  DtNet<T> net;
  net.config = config;
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));

  int cin = config.input_channels;
  for (int i = 0; i < 5; ++i) {
    const int F = config.encoder_filters[i];
    net.encoder.push_back(make_em(net.params, "enc" + std::to_string(i + 1),
                                  config.mdic_for(cin, F), config.threshold, rng,
                                  !config.disable_mdic, !config.disable_threshold));
    cin = F;
  }
  for (int j = 0; j < 5; ++j) {
    const int F = config.decoder_filters[j];
    // skip pairing audit: DM_j fuses the pre-pool output of EM_{5-j}
    if (config.encoder_filters[4 - j] != F)
      throw std::logic_error("build: skip channel pairing violated");
    net.decoder.push_back(
        make_dm(net.params, "dec" + std::to_string(j + 1), config.mdic_for(cin, F), rng,
                !config.disable_mdic));
    cin = F;
  }
  net.classifier = make_conv(net.params, "classifier", cin, config.num_classes, 1, rng);
  return net;
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;  // BN running statistics
  std::vector<std::pair<std::string, std::size_t>> per_module;  // trainable, by top prefix
};

template <typename T>
ParamCount count_params(const DtNet<T>& net) {
  ParamCount pc;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> by_module;
  for (const auto& e : net.params.entries()) {
    if (!e.trainable) {
      pc.non_trainable += e.var->value.numel();
      continue;
    }
    pc.trainable += e.var->value.numel();
    const std::string mod = e.name.substr(0, e.name.find('/'));
    if (!by_module.count(mod)) order.push_back(mod);
    by_module[mod] += e.var->value.numel();
  }
  for (const auto& m : order) pc.per_module.emplace_back(m, by_module[m]);
  return pc;
}

// ---------------------------------------------------------------------------
// archive
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace detail

inline constexpr const char* kArchiveVersion = "dtnet-archive-v1";

inline std::map<std::string, std::string> config_kv(const DtNetConfig& c) {
  std::map<std::string, std::string> kv;
  kv["encoder_filters"] = detail::join_ints(c.encoder_filters);
  kv["decoder_filters"] = detail::join_ints(c.decoder_filters);
  kv["num_classes"] = std::to_string(c.num_classes);
  kv["input_channels"] = std::to_string(c.input_channels);
  kv["input_size"] = std::to_string(c.input_size);
  kv["part_kernels"] = detail::join_ints(
      {c.part_kernels[0], c.part_kernels[1], c.part_kernels[2], c.part_kernels[3]});
  kv["global_kernel"] = std::to_string(c.global_kernel);
  kv["multi_scale"] = c.multi_scale ? "1" : "0";
  std::ostringstream tv;
  tv << c.threshold.value;
  kv["threshold_value"] = tv.str();
  kv["threshold_variant"] =
      c.threshold.variant == ThresholdSpec::Variant::Hard ? "hard" : "epsilon";
  std::ostringstream te;
  te << c.threshold.epsilon;
  kv["threshold_epsilon"] = te.str();
  kv["disable_mdic"] = c.disable_mdic ? "1" : "0";
  kv["disable_threshold"] = c.disable_threshold ? "1" : "0";
  kv["disable_skip"] = c.disable_skip ? "1" : "0";
  return kv;
}

inline DtNetConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  DtNetConfig c;
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("archive config missing key: " + k);
    return it->second;
  };
  c.encoder_filters = detail::parse_ints(need("encoder_filters"));
  c.decoder_filters = detail::parse_ints(need("decoder_filters"));
  c.num_classes = std::stoi(need("num_classes"));
  c.input_channels = std::stoi(need("input_channels"));
  c.input_size = std::stoi(need("input_size"));
  auto pk = detail::parse_ints(need("part_kernels"));
  if (pk.size() != 4) throw std::runtime_error("archive: part_kernels needs 4 entries");
  std::copy(pk.begin(), pk.end(), c.part_kernels.begin());
  c.global_kernel = std::stoi(need("global_kernel"));
  c.multi_scale = need("multi_scale") == "1";
  c.threshold.value = std::stod(need("threshold_value"));
  c.threshold.variant = need("threshold_variant") == "hard" ? ThresholdSpec::Variant::Hard
                                                            : ThresholdSpec::Variant::Epsilon;
  c.threshold.epsilon = std::stod(need("threshold_epsilon"));
  c.disable_mdic = need("disable_mdic") == "1";
  c.disable_threshold = need("disable_threshold") == "1";
  c.disable_skip = need("disable_skip") == "1";
  return c;
}

/// Writes config.txt plus one .dtt file per parameter (name with '/' replaced
/// by '.'). Saving is deterministic: save(load(save(m))) is byte-identical.
template <typename T>
void save_model(const DtNet<T>& net, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream cfg(fs::path(dir) / "config.txt");
  if (!cfg) throw std::runtime_error("cannot write archive config under " + dir);
  cfg << kArchiveVersion << "\n";
  for (const auto& [k, v] : config_kv(net.config)) cfg << k << " = " << v << "\n";
  for (const auto& e : net.params.entries()) {
    std::string fname = e.name;
    for (auto& ch : fname)
      if (ch == '/') ch = '.';
    io::dtt_write(e.var->value, (fs::path(dir) / (fname + ".dtt")).string());
  }
}

template <typename T>
DtNet<T> load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream cfg(fs::path(dir) / "config.txt");
  if (!cfg) throw std::runtime_error("cannot open archive config under " + dir);
  std::string line;
  if (!std::getline(cfg, line) || line != kArchiveVersion)
    throw std::runtime_error("archive version mismatch: expected " +
                             std::string(kArchiveVersion) + ", got '" + line + "'");
  std::map<std::string, std::string> kv;
  while (std::getline(cfg, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  DtNet<T> net = build_dtnet<T>(config_from_kv(kv), 0);
  for (const auto& e : net.params.entries()) {
    std::string fname = e.name;
    for (auto& ch : fname)
      if (ch == '/') ch = '.';
    const std::string path = (fs::path(dir) / (fname + ".dtt")).string();
    if (!fs::exists(path))
      throw std::runtime_error("archive is missing tensor for parameter " + e.name);
    Tensor<T> t = io::dtt_read<T>(path);
    if (t.shape() != e.var->value.shape())
      throw std::runtime_error("archive tensor shape mismatch for parameter " + e.name);
    e.var->value = std::move(t);
  }
  // Stored running statistics are taken as valid.
  for (auto& em : net.encoder) {
    if (em.mdic_enabled)
      for (auto& p : em.parts) *p.bn.running.initialized = true;
    else
      *em.plain.bn.running.initialized = true;
    *em.global_bn.running.initialized = true;
    *em.integ_a_bn.running.initialized = true;
    *em.integ_b_bn.running.initialized = true;
  }
  for (auto& dm : net.decoder) {
    if (dm.mdic_enabled)
      for (auto& p : dm.parts) *p.bn.running.initialized = true;
    else
      *dm.plain.bn.running.initialized = true;
    *dm.fusion_bn.running.initialized = true;
  }
  return net;
}

// ---------------------------------------------------------------------------
// feature-map dumps
// ---------------------------------------------------------------------------

/// Local feature maps of one directional part of one encoder module,
/// max-pooled to the module's output resolution (the resolution at which the
/// ladder of module sizes halves: S/2, S/4, ...). Inference-mode BN.
template <typename T>
Tensor<T> encoder_part_features(DtNet<T>& net, const Tensor<T>& image, int module_idx,
                                int part_idx) {
  if (module_idx < 0 || module_idx >= 5) throw std::invalid_argument("module index out of range");
  if (part_idx < 0 || part_idx >= 4) throw std::invalid_argument("part index out of range");
  Tensor<T> batched = image;
  if (image.ndim() == 3)
    batched = Tensor<T>({1, image.extent(0), image.extent(1), image.extent(2)},
                        std::vector<T>(image.data(), image.data() + image.numel()));
  Var<T> cur = make_var(std::move(batched));
  for (int i = 0; i < module_idx; ++i)
    cur = em_forward<T>(nullptr, cur, net.encoder[i], Mode::Infer).out;
  EmParams<T>& em = net.encoder[module_idx];
  if (!em.mdic_enabled)
    throw std::invalid_argument("module was built without MDIC parts");
  Var<T> part_in = cur;
  if (em.split_input) part_in = ops::split4<T>(nullptr, cur)[part_idx];
  Var<T> local = part_branch_forward<T>(nullptr, part_in, em.parts[part_idx], Mode::Infer);
  return kernels::maxpool2_forward(local->value, static_cast<Tensor<int32_t>*>(nullptr));
}

}  // namespace dtnet

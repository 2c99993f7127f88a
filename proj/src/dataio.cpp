#include "dtnet/dataio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dtnet::io {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr uint8_t kVersion = 1;

std::size_t dtype_width(DttDtype d) {
  switch (d) {
    case DttDtype::F32: return 4;
    case DttDtype::F64: return 8;
    case DttDtype::U8: return 1;
  }
  throw std::runtime_error("unknown dtt dtype " + std::to_string(static_cast<int>(d)));
}

uint64_t fnv1a(const void* data, std::size_t len, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void dtt_write_raw(const std::string& path, DttDtype dtype, const std::vector<int>& shape,
                   const void* payload, std::size_t payload_bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, 8);
  const uint8_t head[3] = {kVersion, static_cast<uint8_t>(dtype),
                           static_cast<uint8_t>(shape.size())};
  f.write(reinterpret_cast<const char*>(head), 3);
  for (int e : shape) {
    const uint32_t le = static_cast<uint32_t>(e);
    f.write(reinterpret_cast<const char*>(&le), 4);
  }
  f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
  if (!f) throw std::runtime_error("write failed: " + path);
}

void dtt_read_raw(const std::string& path, DttDtype& dtype, std::vector<int>& shape,
                  std::vector<uint8_t>& payload) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": bad magic (not a DTT file)");
  uint8_t head[3];
  f.read(reinterpret_cast<char*>(head), 3);
  if (f.gcount() != 3) throw std::runtime_error(path + ": truncated header");
  if (head[0] != kVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(head[0]));
  if (head[1] < 1 || head[1] > 3)
    throw std::runtime_error(path + ": unknown dtype " + std::to_string(head[1]));
  dtype = static_cast<DttDtype>(head[1]);
  shape.resize(head[2]);
  std::size_t numel = 1;
  for (auto& e : shape) {
    uint32_t le = 0;
    f.read(reinterpret_cast<char*>(&le), 4);
    if (f.gcount() != 4) throw std::runtime_error(path + ": truncated extents");
    e = static_cast<int>(le);
    if (e < 1) throw std::runtime_error(path + ": invalid extent");
    numel *= le;
  }
  const std::size_t expected = numel * dtype_width(dtype);
  payload.resize(expected);
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(expected));
  const std::size_t got = static_cast<std::size_t>(f.gcount());
  if (got != expected)
    throw std::runtime_error(path + ": truncated payload, expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(got));
}

// ---------------------------------------------------------------------------

uint64_t sample_digest(const Sample& s) {
  uint64_t h = fnv1a(s.image.data(), s.image.numel() * sizeof(float));
  return fnv1a(s.mask.data(), s.mask.numel(), h);
}

Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset ds;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("manifest line without tab separator: " + line);
    auto resolve = [&](const std::string& p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    Sample s;
    s.image = dtt_read<float>(resolve(line.substr(0, tab)));
    s.mask = dtt_read<uint8_t>(resolve(line.substr(tab + 1)));
    if (s.image.ndim() != 3 || s.mask.ndim() != 2)
      throw std::runtime_error("manifest sample has wrong rank");
    if (s.image.extent(1) != s.mask.extent(0) || s.image.extent(2) != s.mask.extent(1) ||
        s.image.extent(1) != s.image.extent(2))
      throw std::runtime_error("manifest sample image/mask extents disagree");
    if (ds.samples.empty()) {
      ds.channels = s.image.extent(0);
      ds.size = s.image.extent(1);
    } else if (s.image.extent(0) != ds.channels || s.image.extent(1) != ds.size) {
      throw std::runtime_error("manifest samples have inconsistent shapes");
    }
    for (std::size_t i = 0; i < s.mask.numel(); ++i)
      ds.num_classes = std::max(ds.num_classes, static_cast<int>(s.mask[i]) + 1);
    ds.digest += sample_digest(s);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw std::runtime_error("manifest is empty: " + manifest_path);
  return ds;
}

// ---------------------------------------------------------------------------
// synthetic shapes
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (n_classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (size % 32 != 0) throw std::invalid_argument("synth: size must be divisible by 32");
  if (n_images < 1) throw std::invalid_argument("synth: need at least one image");
  if (channels < 1) throw std::invalid_argument("synth: need at least one channel");
  // Foreground classes are told apart by disjoint intensity bands; the bands
  // must stay separated by more than the noise.
  const int fg = n_classes - 1;
  const double span = 0.7, lo = 0.3;
  const double step = fg > 1 ? span / (fg - 1) : span;
  if (fg > 1 && step < 4 * noise)
    throw std::invalid_argument("synth: too many classes for the available intensity bands at this noise level");
  (void)lo;
}

bool ShapeSpec::contains(int x, int y) const {
  if (ellipse) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
  return std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
}

SynthSample synth_sample(const SynthSpec& spec, int index) {
  spec.validate();
  std::seed_seq sseq{static_cast<uint32_t>(spec.seed), static_cast<uint32_t>(spec.seed >> 32),
                     static_cast<uint32_t>(index)};
  std::mt19937 rng(sseq);
  const int S = spec.size, fg = spec.n_classes - 1;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, spec.noise);

  const double span = 0.7, lo = 0.3;
  const double step = fg > 1 ? span / (fg - 1) : 0.0;

  SynthSample out;
  // Each foreground class is present w.p. 0.9 so every class shows up in well
  // over 80% of images; if the coin flips all miss, one class is forced.
  std::vector<int> present;
  for (int c = 1; c <= fg; ++c)
    if (unit(rng) < 0.9) present.push_back(c);
  if (present.empty()) present.push_back(1 + static_cast<int>(unit(rng) * fg) % fg);

  // Shapes are kept disjoint (the corpus stands in for organ maps, which do
  // not overlap); placements that would collide are re-sampled, and a class
  // whose placement cannot be fitted is dropped from this image.
  for (int c : present) {
    ShapeSpec sh;
    sh.cls = c;
    sh.ellipse = c % 2 == 1;  // class-specific kind
    sh.intensity = lo + step * (c - 1);
    for (int attempt = 0; attempt < 40; ++attempt) {
      sh.cx = (0.2 + 0.6 * unit(rng)) * S;
      sh.cy = (0.2 + 0.6 * unit(rng)) * S;
      sh.rx = (0.08 + 0.14 * unit(rng)) * S;
      sh.ry = (0.08 + 0.14 * unit(rng)) * S;
      bool clear = true;
      for (const auto& other : out.shapes) {
        const double dx = sh.cx - other.cx, dy = sh.cy - other.cy;
        const double reach = std::max(sh.rx, sh.ry) + std::max(other.rx, other.ry) + 2.0;
        if (dx * dx + dy * dy < reach * reach) clear = false;
      }
      if (clear) {
        out.shapes.push_back(sh);
        break;
      }
    }
  }

  out.sample.image = Tensor<float>({spec.channels, S, S});
  out.sample.mask = Tensor<uint8_t>({S, S});
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double v = 0.05;  // background band
      int label = 0;
      for (const auto& sh : out.shapes) {  // later shapes paint on top
        if (sh.contains(x, y)) {
          v = sh.intensity;
          label = sh.cls;
        }
      }
      out.sample.mask[static_cast<std::size_t>(y) * S + x] = static_cast<uint8_t>(label);
      for (int ch = 0; ch < spec.channels; ++ch) {
        const double scale = spec.channels > 1 ? 0.5 + 0.5 * ch / (spec.channels - 1) : 1.0;
        out.sample.image[(static_cast<std::size_t>(ch) * S + y) * S + x] =
            static_cast<float>(v * scale + gauss(rng));
      }
    }
  }
  return out;
}

uint64_t synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  std::ostringstream manifest;
  uint64_t digest = 0;
  for (int i = 0; i < spec.n_images; ++i) {
    SynthSample s = synth_sample(spec, i);
    char img[32], msk[32];
    std::snprintf(img, sizeof img, "img_%05d.dtt", i);
    std::snprintf(msk, sizeof msk, "msk_%05d.dtt", i);
    dtt_write(s.sample.image, (fs::path(out_dir) / img).string());
    dtt_write(s.sample.mask, (fs::path(out_dir) / msk).string());
    manifest << img << '\t' << msk << '\n';
    digest += sample_digest(s.sample);
  }
  std::ofstream mf(fs::path(out_dir) / "manifest.tsv");
  if (!mf) throw std::runtime_error("cannot write manifest under " + out_dir);
  mf << manifest.str();
  return digest;
}

// ---------------------------------------------------------------------------
// image export
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void export_pgm_impl(const Tensor<T>& t, const std::string& path) {
  if (t.ndim() != 2) throw std::invalid_argument("export_pgm: expected a 2-d tensor");
  const int H = t.extent(0), W = t.extent(1);
  T lo = t[0], hi = t[0];
  for (std::size_t i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<std::size_t>(W) * H);
  for (std::size_t i = 0; i < t.numel(); ++i)
    row[i] = hi > lo
                 ? static_cast<uint8_t>(std::lround((t[i] - lo) / double(hi - lo) * 255.0))
                 : 128;  // degenerate range
  f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
}

}  // namespace

void export_pgm(const Tensor<float>& t, const std::string& path) { export_pgm_impl(t, path); }
void export_pgm(const Tensor<double>& t, const std::string& path) { export_pgm_impl(t, path); }

void export_ppm(const Tensor<uint8_t>& labels, const std::vector<Rgb>& palette,
                const std::string& path) {
  if (labels.ndim() != 2) throw std::invalid_argument("export_ppm: expected a 2-d label map");
  const int H = labels.extent(0), W = labels.extent(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  for (std::size_t i = 0; i < labels.numel(); ++i) {
    const uint8_t l = labels[i];
    if (l >= palette.size())
      throw std::invalid_argument("export_ppm: label " + std::to_string(l) +
                                  " has no palette entry");
    f.write(reinterpret_cast<const char*>(palette[l].data()), 3);
  }
}

std::vector<Rgb> default_palette(int n_classes) {
  static const std::vector<Rgb> base = {{0, 0, 0},     {220, 40, 40},  {40, 180, 60},
                                        {250, 220, 40}, {60, 90, 230}, {200, 60, 200},
                                        {40, 200, 200}, {240, 140, 30}};
  std::vector<Rgb> p;
  for (int i = 0; i < n_classes; ++i) p.push_back(base[i % base.size()]);
  return p;
}

}  // namespace dtnet::io

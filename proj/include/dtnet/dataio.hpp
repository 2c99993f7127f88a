#pragma once

// DTT tensor container, dataset manifests, the seeded synthetic shapes
// corpus, and PGM/PPM image export.
//
// DTT layout (little-endian throughout): 8-byte magic "DTTENSOR", version
// byte (1), dtype byte (1 = real-32, 2 = real-64, 3 = uint-8), ndim byte,
// ndim 32-bit extents, row-major payload.

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dtnet/tensor.hpp"

namespace dtnet::io {

enum class DttDtype : uint8_t { F32 = 1, F64 = 2, U8 = 3 };

template <typename T>
constexpr DttDtype dtt_dtype_of();
template <>
constexpr DttDtype dtt_dtype_of<float>() { return DttDtype::F32; }
template <>
constexpr DttDtype dtt_dtype_of<double>() { return DttDtype::F64; }
template <>
constexpr DttDtype dtt_dtype_of<uint8_t>() { return DttDtype::U8; }

void dtt_write_raw(const std::string& path, DttDtype dtype, const std::vector<int>& shape,
                   const void* payload, std::size_t payload_bytes);
/// Reads the header, validates magic/version/length, and returns the raw
/// payload. Throws std::runtime_error with expected-vs-actual byte counts on
/// truncation.
void dtt_read_raw(const std::string& path, DttDtype& dtype, std::vector<int>& shape,
                  std::vector<uint8_t>& payload);

template <typename T>
void dtt_write(const Tensor<T>& t, const std::string& path) {
  dtt_write_raw(path, dtt_dtype_of<T>(), t.shape(), t.data(), t.numel() * sizeof(T));
}

template <typename T>
Tensor<T> dtt_read(const std::string& path) {
  DttDtype dtype;
  std::vector<int> shape;
  std::vector<uint8_t> payload;
  dtt_read_raw(path, dtype, shape, payload);
  if (dtype != dtt_dtype_of<T>())
    throw std::runtime_error(path + ": dtype mismatch (file holds dtype " +
                             std::to_string(static_cast<int>(dtype)) + ")");
  Tensor<T> t(shape);
  std::memcpy(t.data(), payload.data(), payload.size());
  return t;
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

struct Sample {
  Tensor<float> image;   // [C, S, S]
  Tensor<uint8_t> mask;  // [S, S]
};

struct Dataset {
  std::vector<Sample> samples;
  int channels = 0;
  int size = 0;
  int num_classes = 0;  // 1 + max label seen
  uint64_t digest = 0;  // order-independent content hash
};

uint64_t sample_digest(const Sample& s);

/// Reads a manifest of `image<TAB>mask` lines and all referenced DTT files.
Dataset load_dataset(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// synthetic shapes corpus
// ---------------------------------------------------------------------------

struct SynthSpec {
  int n_images = 200;
  int size = 64;        // divisible by 32
  int n_classes = 5;    // background + (n_classes - 1) shape classes
  int channels = 1;
  uint64_t seed = 1;
  double noise = 0.03;  // additive Gaussian intensity noise

  void validate() const;
};

struct ShapeSpec {
  int cls = 0;
  bool ellipse = true;  // rectangle otherwise
  double cx = 0, cy = 0, rx = 0, ry = 0;
  double intensity = 0;

  bool contains(int x, int y) const;
};

/// Pure function of (spec.seed, index): one image, its mask, and the analytic
/// shapes that generated it.
struct SynthSample {
  Sample sample;
  std::vector<ShapeSpec> shapes;
};
SynthSample synth_sample(const SynthSpec& spec, int index);

/// Writes images, masks, and a manifest under out_dir; returns the dataset
/// digest.
uint64_t synth_generate(const SynthSpec& spec, const std::string& out_dir);

// ---------------------------------------------------------------------------
// image export
// ---------------------------------------------------------------------------

/// Binary PGM (P5), min-max normalized to 0..255. A constant image maps to
/// mid-gray 128.
void export_pgm(const Tensor<float>& t, const std::string& path);
void export_pgm(const Tensor<double>& t, const std::string& path);

using Rgb = std::array<uint8_t, 3>;
/// Binary PPM (P6) painting label map entries with palette colors.
void export_ppm(const Tensor<uint8_t>& labels, const std::vector<Rgb>& palette,
                const std::string& path);

/// Default palette: background black, then saturated distinct colors.
std::vector<Rgb> default_palette(int n_classes);

}  // namespace dtnet::io

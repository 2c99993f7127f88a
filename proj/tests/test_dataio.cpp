#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dtnet/dataio.hpp"

using namespace dtnet;
namespace fs = std::filesystem;

namespace {
std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

std::string tmp_file(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("dtt header bytes for a float32 2x2 tensor") {
  const std::string path = tmp_file("dtnet_hdr.dtt");
  Tensor<float> t({2, 2}, std::vector<float>{1, 2, 3, 4});
  io::dtt_write(t, path);
  std::vector<uint8_t> bytes = slurp(path);
  REQUIRE(bytes.size() == 8 + 3 + 8 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "DTTENSOR");
  CHECK(bytes[8] == 1);   // version
  CHECK(bytes[9] == 1);   // dtype real-32
  CHECK(bytes[10] == 2);  // ndim
  // little-endian extents 2, 2
  CHECK(bytes[11] == 2);
  CHECK(bytes[12] == 0);
  CHECK(bytes[13] == 0);
  CHECK(bytes[14] == 0);
  CHECK(bytes[15] == 2);
  float first;
  std::memcpy(&first, bytes.data() + 19, 4);
  CHECK(first == 1.0f);
  fs::remove(path);
}

TEST_CASE("dtt roundtrips each dtype exactly") {
  const std::string path = tmp_file("dtnet_rt.dtt");
  {
    Tensor<float> t({2, 3}, std::vector<float>{0.5f, -1.25f, 3e-8f, 0, 1e9f, -0.0f});
    io::dtt_write(t, path);
    Tensor<float> r = io::dtt_read<float>(path);
    CHECK(r.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(r[i] == t[i]);
  }
  {
    Tensor<double> t({4}, std::vector<double>{1e-300, -2.5, 0, 7});
    io::dtt_write(t, path);
    Tensor<double> r = io::dtt_read<double>(path);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(r[i] == t[i]);
  }
  {
    Tensor<uint8_t> t({2, 2}, std::vector<uint8_t>{0, 128, 255, 7});
    io::dtt_write(t, path);
    Tensor<uint8_t> r = io::dtt_read<uint8_t>(path);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(r[i] == t[i]);
  }
  fs::remove(path);
}

TEST_CASE("dtt read rejects truncation, bad magic, and dtype mismatch") {
  const std::string path = tmp_file("dtnet_bad.dtt");
  Tensor<float> t({2, 2}, std::vector<float>{1, 2, 3, 4});
  io::dtt_write(t, path);

  std::vector<uint8_t> bytes = slurp(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS_AS(io::dtt_read<float>(path), std::runtime_error);

  bytes[0] = 'X';
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(io::dtt_read<float>(path), std::runtime_error);

  io::dtt_write(t, path);
  CHECK_THROWS_AS(io::dtt_read<double>(path), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("synthetic samples are a pure function of seed and index") {
  io::SynthSpec spec;
  spec.size = 32;
  spec.seed = 99;
  io::SynthSample a = io::synth_sample(spec, 4);
  io::SynthSample b = io::synth_sample(spec, 4);
  CHECK(io::sample_digest(a.sample) == io::sample_digest(b.sample));

  io::SynthSpec other = spec;
  other.seed = 100;
  io::SynthSample c = io::synth_sample(other, 4);
  CHECK(io::sample_digest(a.sample) != io::sample_digest(c.sample));
  io::SynthSample d = io::synth_sample(spec, 5);
  CHECK(io::sample_digest(a.sample) != io::sample_digest(d.sample));
}

TEST_CASE("mask pixels agree with the analytic shape geometry") {
  io::SynthSpec spec;
  spec.size = 32;
  spec.seed = 3;
  for (int idx = 0; idx < 20; ++idx) {
    io::SynthSample s = io::synth_sample(spec, idx);
    for (int y = 0; y < spec.size; ++y)
      for (int x = 0; x < spec.size; ++x) {
        // Later shapes paint over earlier ones.
        int expected = 0;
        for (const auto& sh : s.shapes)
          if (sh.contains(x, y)) expected = sh.cls;
        CHECK(s.sample.mask[static_cast<std::size_t>(y) * spec.size + x] == expected);
      }
  }
}

TEST_CASE("most images contain at least one foreground class") {
  io::SynthSpec spec;
  spec.size = 32;
  spec.seed = 21;
  int with_fg = 0;
  const int n = 50;
  for (int idx = 0; idx < n; ++idx) {
    io::SynthSample s = io::synth_sample(spec, idx);
    bool fg = false;
    for (std::size_t i = 0; i < s.sample.mask.numel(); ++i) fg |= s.sample.mask[i] != 0;
    with_fg += fg;
  }
  CHECK(with_fg >= n * 8 / 10);
}

TEST_CASE("generated corpus loads back with the reported digest") {
  const std::string dir = tmp_file("dtnet_synth_dir");
  fs::remove_all(dir);
  io::SynthSpec spec;
  spec.n_images = 6;
  spec.size = 32;
  spec.seed = 8;
  const uint64_t digest = io::synth_generate(spec, dir);
  io::Dataset d = io::load_dataset(dir + "/manifest.tsv");
  CHECK(d.samples.size() == 6);
  CHECK(d.size == 32);
  CHECK(d.digest == digest);
  fs::remove_all(dir);
}

TEST_CASE("pgm export normalizes to the full byte range") {
  const std::string path = tmp_file("dtnet.pgm");
  Tensor<float> t({2, 2}, std::vector<float>{-1.0f, 0.0f, 1.0f, 3.0f});
  io::export_pgm(t, path);
  std::vector<uint8_t> bytes = slurp(path);
  REQUIRE(bytes.size() == 15);
  CHECK(std::string(bytes.begin(), bytes.begin() + 11) == "P5\n2 2\n255\n");
  // Payload is the last four bytes: min maps to 0, max to 255.
  REQUIRE(bytes.size() >= 4);
  CHECK(bytes[bytes.size() - 4] == 0);
  CHECK(bytes[bytes.size() - 1] == 255);
  fs::remove(path);
}

TEST_CASE("a constant image exports as mid-gray") {
  const std::string path = tmp_file("dtnet_const.pgm");
  io::export_pgm(Tensor<float>({2, 2}, 3.5f), path);
  std::vector<uint8_t> bytes = slurp(path);
  for (std::size_t i = bytes.size() - 4; i < bytes.size(); ++i) CHECK(bytes[i] == 128);
  fs::remove(path);
}

TEST_CASE("ppm export paints labels with the palette") {
  const std::string path = tmp_file("dtnet.ppm");
  Tensor<uint8_t> labels({1, 2}, std::vector<uint8_t>{0, 2});
  std::vector<io::Rgb> pal = io::default_palette(3);
  io::export_ppm(labels, pal, path);
  std::vector<uint8_t> bytes = slurp(path);
  REQUIRE(bytes.size() >= 6);
  CHECK(bytes[bytes.size() - 6] == pal[0][0]);
  CHECK(bytes[bytes.size() - 5] == pal[0][1]);
  CHECK(bytes[bytes.size() - 3] == pal[2][0]);
  CHECK(bytes[bytes.size() - 2] == pal[2][1]);
  CHECK(bytes[bytes.size() - 1] == pal[2][2]);
  fs::remove(path);
}

TEST_CASE("synth spec validation") {
  io::SynthSpec spec;
  spec.size = 33;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.size = 32;
  spec.n_classes = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

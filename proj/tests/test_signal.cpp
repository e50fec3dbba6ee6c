#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>

#include "owr/binary_io.hpp"
#include "owr/error.hpp"
#include "owr/signal.hpp"
#include "test_util.hpp"

using namespace owr;
using namespace owr::signal;

namespace {

constexpr double kPi = 3.14159265358979323846;

SynthClassProfile single_tone(double f0) {
  SynthClassProfile p;
  p.class_id = "tone";
  p.tone_set = {f0};
  p.sample_rate = 1.0e6;
  return p;
}

IQRecord exponential(std::size_t n, double cycles_per_sample) {
  IQRecord r;
  r.sample_rate = 1.0e6;
  r.source_id = "test";
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = 2.0 * kPi * cycles_per_sample * static_cast<double>(i);
    r.samples.emplace_back(static_cast<float>(std::cos(ph)), static_cast<float>(std::sin(ph)));
  }
  return r;
}

// |DFT|^2 / n by the textbook sum, folded onto one-sided bins.
std::vector<double> dft_one_sided(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{0, 0};
    for (std::size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * t) / static_cast<double>(n));
    p[k] = std::norm(acc) / static_cast<double>(n);
  }
  std::vector<double> out(n / 2 + 1);
  out[0] = p[0];
  out[n / 2] = p[n / 2];
  for (std::size_t k = 1; k < n / 2; ++k) out[k] = p[k] + p[n - k];
  return out;
}

}  // namespace

TEST_CASE("empirical SNR matches the request, measured before mixing") {
  for (double snr : {40.0, 20.0, 0.0, -5.0}) {
    const auto parts = synthesize_components(single_tone(50e3), 4e-3, snr, 11);
    double ps = 0, pn = 0;
    for (std::size_t i = 0; i < parts.signal.size(); ++i) {
      ps += std::norm(parts.signal[i]);
      pn += std::norm(parts.noise[i]);
    }
    const double measured = 10.0 * std::log10(ps / pn);
    CHECK(std::abs(measured - snr) < 0.5);
  }
}

TEST_CASE("noiseless constant-envelope burst") {
  const auto r = generate_burst(single_tone(50e3), 1e-3, kNoiseless, 3);
  for (const auto& s : r.samples) CHECK(std::abs(std::abs(s) - 1.0f) < 1e-5f);
}

TEST_CASE("generate_burst is a pure function of its arguments") {
  auto p = single_tone(120e3);
  p.tone_set = {120e3, 250e3};
  p.hop_period = 1e-4;
  p.bandwidth = 5e3;
  p.am_depth = 0.3;
  p.burst_duty = 0.7;
  const auto a = generate_burst(p, 2e-3, 10.0, 99);
  const auto b = generate_burst(p, 2e-3, 10.0, 99);
  CHECK(a == b);
  const auto c = generate_burst(p, 2e-3, 10.0, 100);
  CHECK_FALSE(a == c);
}

TEST_CASE("invalid profiles and short bursts") {
  auto p = single_tone(600e3);  // beyond Nyquist
  CHECK_THROWS_AS(generate_burst(p, 1e-3, 10.0, 1), Error);
  try {
    generate_burst(p, 1e-3, 10.0, 1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  auto q = single_tone(10e3);
  q.burst_duty = 0.0;
  CHECK_THROWS_AS(q.validate(), Error);
  try {
    generate_burst(single_tone(10e3), 10e-6, 10.0, 1, 64);
    FAIL("expected too-short error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidInput);
  }
  std::vector<SynthClassProfile> dup{single_tone(1e3), single_tone(1e3)};
  dup[1].class_id = "other";
  CHECK_THROWS_AS(validate_profiles(dup), Error);  // identical fields under distinct ids
}

TEST_CASE("exact-bin exponential concentrates in its bin, matching a direct DFT") {
  const std::size_t n = 64;
  for (std::size_t m : {1u, 5u, 17u, 31u}) {
    const auto rec = exponential(n, static_cast<double>(m) / n);
    const Eigen::MatrixXd p = stft_power(rec, n, n, Window::kRectangular);
    REQUIRE(p.rows() == 1);
    REQUIRE(p.cols() == static_cast<Eigen::Index>(n / 2 + 1));
    std::vector<std::complex<double>> x;
    for (const auto& s : rec.samples) x.emplace_back(s.real(), s.imag());
    const auto oracle = dft_one_sided(x);
    for (std::size_t k = 0; k <= n / 2; ++k) CHECK(std::abs(p(0, k) - oracle[k]) < 1e-6 * oracle[m]);
    for (std::size_t k = 0; k <= n / 2; ++k) {
      if (k == m) continue;
      CHECK(10.0 * std::log10(p(0, k) / p(0, m) + 1e-300) < -100.0);
    }
  }
}

TEST_CASE("Parseval holds per frame for the rectangular window") {
  const auto rec = generate_burst(single_tone(77e3), 1e-3, 5.0, 8);
  const std::size_t n = 128, hop = 32;
  const Eigen::MatrixXd p = stft_power(rec, n, hop, Window::kRectangular);
  for (Eigen::Index f = 0; f < p.rows(); ++f) {
    double energy = 0;
    for (std::size_t t = 0; t < n; ++t) energy += std::norm(std::complex<double>(rec.samples[f * hop + t]));
    CHECK(std::abs(p.row(f).sum() - energy) <= 1e-6 * energy);
  }
}

TEST_CASE("frame count formula") {
  for (std::size_t len : {64u, 65u, 100u, 127u, 128u, 1000u}) {
    for (std::size_t hop : {1u, 16u, 64u}) {
      const auto rec = exponential(len, 0.1);
      const auto s = stft_spectrogram(rec, 64, hop, Window::kHann);
      CHECK(s.n_frames == (len - 64) / hop + 1);
      CHECK(s.n_bins == 33);
    }
  }
  CHECK(stft_spectrogram(exponential(64, 0.1), 64, 64).n_frames == 1);
  CHECK_THROWS_AS(stft_spectrogram(exponential(63, 0.1), 64, 64), Error);
  CHECK_THROWS_AS(stft_spectrogram(exponential(128, 0.1), 48, 16), Error);
  CHECK_THROWS_AS(parse_window("kaiser"), Error);
}

TEST_CASE("normalised spectrogram spans [0,1]; all-zero input gives zeros") {
  const auto rec = generate_burst(single_tone(200e3), 2e-3, 10.0, 5);
  const auto s = stft_spectrogram(rec, 64, 32);
  float lo = 1, hi = 0;
  for (float v : s.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);

  IQRecord zero;
  zero.sample_rate = 1e6;
  zero.source_id = "zero";
  zero.samples.assign(256, {0.0f, 0.0f});
  const auto z = stft_spectrogram(zero, 64, 64);
  for (float v : z.values) CHECK(v == 0.0f);
}

TEST_CASE("I/Q file layout and round trip") {
  const auto dir = testutil::scratch("iq");
  {
    std::ofstream f(dir / "eight.iq", std::ios::binary);
    const float v[8] = {1, 2, 3, 4, 5, 6, 7, 8};
    f.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  ManifestEntry e;
  e.path = "eight.iq";
  e.sample_rate = 2e6;
  e.carrier_freq = 915e6;
  e.label = "x";
  e.source_id = "unit";
  const auto r = ingest_iq(dir / "eight.iq", e);
  REQUIRE(r.samples.size() == 4);
  CHECK(r.samples[1] == std::complex<float>(3, 4));
  CHECK(r.sample_rate == 2e6);
  CHECK(r.label == std::optional<std::string>("x"));

  { std::ofstream(dir / "empty.iq", std::ios::binary); }
  CHECK_THROWS_AS(ingest_iq(dir / "empty.iq", e), Error);
  {
    std::ofstream f(dir / "odd.iq", std::ios::binary);
    f.write("abcdefghijkl", 12);
  }
  CHECK_THROWS_AS(ingest_iq(dir / "odd.iq", e), Error);
  {
    std::ofstream f(dir / "nan.iq", std::ios::binary);
    const float v[2] = {NAN, 0};
    f.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  CHECK_THROWS_AS(ingest_iq(dir / "nan.iq", e), Error);
  try {
    ingest_iq(dir / "missing.iq", e);
    FAIL("expected missing file error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::kMissingArtifact);
  }

  auto p = single_tone(33e3);
  const auto burst = generate_burst(p, 1e-3, 15.0, 21);
  write_iq(dir / "burst.iq", burst);
  ManifestEntry be{"burst.iq", burst.sample_rate, burst.carrier_freq, burst.label, burst.source_id, 15.0, std::nullopt};
  CHECK(ingest_iq(dir / "burst.iq", be) == burst);
}

TEST_CASE("manifest lines round trip; missing fields are errors") {
  ManifestEntry e{"a/b.iq", 1e6, 2.4e9, "cls", "src", 20.0, "train"};
  const auto back = parse_manifest_line(manifest_line(e));
  CHECK(back.path == e.path);
  CHECK(back.label == e.label);
  CHECK(back.snr_db == e.snr_db);
  CHECK(back.split == e.split);
  CHECK_THROWS_AS(parse_manifest_line(R"({"path":"x","sample_rate":1,"carrier_freq":0,"label":"a"})"), Error);
  CHECK_THROWS_AS(parse_manifest_line("not json"), Error);
  const auto dir = testutil::scratch("manifest");
  std::vector<ManifestEntry> rows{e, e};
  rows[1].label.reset();
  write_manifest(dir / "m.jsonl", rows);
  const auto read = read_manifest(dir / "m.jsonl");
  REQUIRE(read.size() == 2);
  CHECK_FALSE(read[1].label.has_value());
}

TEST_CASE("spectrogram cache: 16-byte header, float32 body, lossless") {
  const auto dir = testutil::scratch("cache");
  const auto s = stft_spectrogram(generate_burst(single_tone(90e3), 1e-3, 10.0, 4), 64, 32);
  write_spectrogram_cache(dir / "s.owrf", s);
  const auto bytes = read_file(dir / "s.owrf");
  CHECK(bytes.size() == 16 + 4 * s.n_frames * s.n_bins);
  CHECK(std::string(bytes.data(), 4) == "OWRF");
  const auto back = read_spectrogram_cache(dir / "s.owrf");
  CHECK(back.n_frames == s.n_frames);
  CHECK(back.n_bins == s.n_bins);
  CHECK(back.values == s.values);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  write_file_atomic(dir / "t.owrf", truncated);
  CHECK_THROWS_AS(read_spectrogram_cache(dir / "t.owrf"), Error);
}

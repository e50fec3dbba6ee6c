#include "owr/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include "owr/binary_io.hpp"
#include "owr/error.hpp"

namespace owr::signal {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void IQRecord::validate() const {
  require(!samples.empty(), ErrorKind::kInvalidInput, "IQ record '" + source_id + "' is empty");
  require(sample_rate > 0.0 && std::isfinite(sample_rate), ErrorKind::kInvalidInput,
          "IQ record '" + source_id + "' has non-positive sample rate");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i].real()) || !std::isfinite(samples[i].imag())) {
      fail(ErrorKind::kInvalidInput,
           "IQ record '" + source_id + "' has a non-finite sample at index " + std::to_string(i));
    }
  }
}

void SynthClassProfile::validate() const {
  const auto where = "profile '" + class_id + "': ";
  require(!class_id.empty(), ErrorKind::kConfig, "profile with empty class id");
  require(!tone_set.empty(), ErrorKind::kConfig, where + "tone_set is empty");
  require(all_finite(tone_set), ErrorKind::kConfig, where + "non-finite tone");
  require(sample_rate > 0.0 && std::isfinite(sample_rate), ErrorKind::kConfig,
          where + "sample_rate must be positive");
  require(hop_period >= 0.0 && std::isfinite(hop_period), ErrorKind::kConfig,
          where + "hop_period must be >= 0");
  require(bandwidth >= 0.0 && std::isfinite(bandwidth), ErrorKind::kConfig,
          where + "bandwidth must be >= 0");
  require(burst_duty > 0.0 && burst_duty <= 1.0, ErrorKind::kConfig,
          where + "burst_duty must lie in (0,1]");
  require(am_depth >= 0.0 && am_depth < 1.0, ErrorKind::kConfig,
          where + "am_depth must lie in [0,1)");
  const double nyquist = sample_rate / 2.0;
  for (double f : tone_set) {
    require(std::abs(f) + bandwidth / 2.0 <= nyquist, ErrorKind::kConfig,
            where + "tone " + std::to_string(f) + " Hz exceeds +/- sample_rate/2");
  }
}

void validate_profiles(std::span<const SynthClassProfile> profiles) {
  std::set<std::string> ids;
  for (const auto& p : profiles) {
    p.validate();
    require(ids.insert(p.class_id).second, ErrorKind::kConfig,
            "duplicate class id '" + p.class_id + "'");
  }
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      auto a = profiles[i];
      auto b = profiles[j];
      a.class_id = b.class_id;
      require(!(a == b), ErrorKind::kConfig,
              "profiles '" + profiles[i].class_id + "' and '" + profiles[j].class_id +
                  "' are identical apart from their id");
    }
  }
}

BurstComponents synthesize_components(const SynthClassProfile& profile, double duration,
                                      double snr_db, std::uint64_t seed,
                                      std::size_t min_samples) {
  profile.validate();
  require(duration > 0.0 && std::isfinite(duration), ErrorKind::kInvalidInput,
          "burst duration must be positive");
  require(!std::isnan(snr_db) && snr_db != -std::numeric_limits<double>::infinity(),
          ErrorKind::kInvalidInput, "snr_db must be finite or +inf");
  const double fs = profile.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  require(n >= std::max<std::size_t>(min_samples, 1), ErrorKind::kInvalidInput,
          "burst of " + std::to_string(n) + " samples is shorter than " +
              std::to_string(min_samples));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double period = profile.hop_period > 0.0 ? profile.hop_period : duration;
  const double t0 = unit(rng) * period;
  const double am_rate = 4.0 / duration;
  const double am_phase = unit(rng) * kTwoPi;
  const bool hopping = profile.hop_period > 0.0;
  const std::size_t n_tones = profile.tone_set.size();

  std::vector<double> phase(n_tones);
  for (auto& p : phase) p = unit(rng) * kTwoPi;

  BurstComponents out;
  out.signal.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs + t0;
    const auto dwell = static_cast<std::size_t>(std::floor(t / period));
    const double u = t / period - static_cast<double>(dwell);
    const double envelope = 1.0 + profile.am_depth * std::sin(kTwoPi * am_rate * t + am_phase);
    const bool on = u < profile.burst_duty;

    std::complex<double> s{0.0, 0.0};
    if (hopping) {
      const std::size_t k = dwell % n_tones;
      const double f = profile.tone_set[k] + profile.bandwidth * (u - 0.5);
      phase[k] = std::fmod(phase[k] + kTwoPi * f / fs, kTwoPi);
      if (on) s = std::polar(envelope, phase[k]);
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(n_tones));
      for (std::size_t k = 0; k < n_tones; ++k) {
        const double f = profile.tone_set[k] + profile.bandwidth * (u - 0.5);
        phase[k] = std::fmod(phase[k] + kTwoPi * f / fs, kTwoPi);
        if (on) s += std::polar(envelope * scale, phase[k]);
      }
    }
    out.signal[i] = s;
  }

  out.noise.assign(n, {0.0, 0.0});
  if (std::isinf(snr_db)) return out;

  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  double noise_power = 0.0;
  for (auto& v : out.noise) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    v = {re, im};
    noise_power += std::norm(v);
  }
  noise_power /= static_cast<double>(n);
  double signal_power = 0.0;
  for (const auto& v : out.signal) signal_power += std::norm(v);
  signal_power /= static_cast<double>(n);
  if (signal_power <= 0.0) signal_power = 1.0;

  const double target = signal_power / std::pow(10.0, snr_db / 10.0);
  const double gain = std::sqrt(target / noise_power);
  for (auto& v : out.noise) v *= gain;
  return out;
}

IQRecord generate_burst(const SynthClassProfile& profile, double duration, double snr_db,
                        std::uint64_t seed, std::size_t min_samples) {
  const auto parts = synthesize_components(profile, duration, snr_db, seed, min_samples);
  IQRecord rec;
  rec.sample_rate = profile.sample_rate;
  rec.carrier_freq = profile.carrier_freq;
  rec.label = profile.class_id;
  rec.source_id = "synth:" + profile.class_id + ":" + std::to_string(seed);
  rec.samples.resize(parts.signal.size());
  for (std::size_t i = 0; i < parts.signal.size(); ++i) {
    const auto x = parts.signal[i] + parts.noise[i];
    rec.samples[i] = {static_cast<float>(x.real()), static_cast<float>(x.imag())};
  }
  return rec;
}

// Manifest -----------------------------------------------------------------

std::string manifest_line(const ManifestEntry& entry) {
  nlohmann::ordered_json j;
  j["path"] = entry.path;
  j["sample_rate"] = entry.sample_rate;
  j["carrier_freq"] = entry.carrier_freq;
  j["label"] = entry.label ? nlohmann::ordered_json(*entry.label) : nlohmann::ordered_json();
  j["source_id"] = entry.source_id;
  if (entry.snr_db) j["snr_db"] = *entry.snr_db;
  if (entry.split) j["split"] = *entry.split;
  return j.dump();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidInput, std::string("manifest line is not JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kInvalidInput, "manifest line is not a JSON object");
  for (const char* key : {"path", "sample_rate", "carrier_freq", "label", "source_id"}) {
    require(j.contains(key), ErrorKind::kInvalidInput,
            std::string("manifest entry missing field '") + key + "'");
  }
  ManifestEntry e;
  try {
    e.path = j.at("path").get<std::string>();
    e.sample_rate = j.at("sample_rate").get<double>();
    e.carrier_freq = j.at("carrier_freq").get<double>();
    if (!j.at("label").is_null()) e.label = j.at("label").get<std::string>();
    e.source_id = j.at("source_id").get<std::string>();
    if (j.contains("snr_db")) e.snr_db = j.at("snr_db").get<double>();
    if (j.contains("split")) e.split = j.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kInvalidInput, std::string("manifest field has wrong type: ") + ex.what());
  }
  return e;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const Error& e) {
      fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::string text;
  for (const auto& e : entries) {
    text += manifest_line(e);
    text += '\n';
  }
  write_text_atomic(path, text);
}

// Raw I/Q --------------------------------------------------------------------

void write_iq(const std::filesystem::path& path, const IQRecord& record) {
  record.validate();
  ByteWriter w;
  for (const auto& s : record.samples) {
    w.put<float>(s.real());
    w.put<float>(s.imag());
  }
  write_file_atomic(path, w.bytes());
}

IQRecord ingest_iq(const std::filesystem::path& path, const ManifestEntry& entry) {
  const auto bytes = read_file(path);
  constexpr std::size_t kSampleBytes = 2 * sizeof(float);
  require(!bytes.empty(), ErrorKind::kInvalidInput, path.string() + ": empty I/Q file");
  require(bytes.size() % kSampleBytes == 0, ErrorKind::kInvalidInput,
          path.string() + ": truncated I/Q file (" + std::to_string(bytes.size()) +
              " bytes is not a multiple of 8)");
  require(!entry.source_id.empty(), ErrorKind::kInvalidInput,
          path.string() + ": manifest entry has empty source_id");

  IQRecord rec;
  rec.sample_rate = entry.sample_rate;
  rec.carrier_freq = entry.carrier_freq;
  rec.label = entry.label;
  rec.source_id = entry.source_id;
  rec.samples.resize(bytes.size() / kSampleBytes);
  ByteReader r(bytes, path.string());
  for (auto& s : rec.samples) {
    const float re = r.get<float>();
    const float im = r.get<float>();
    s = {re, im};
  }
  rec.validate();
  return rec;
}

// STFT -----------------------------------------------------------------------

Window parse_window(const std::string& name) {
  if (name == "hann") return Window::kHann;
  if (name == "rectangular" || name == "rect") return Window::kRectangular;
  fail(ErrorKind::kInvalidInput, "unknown window '" + name + "'");
}

std::string window_name(Window window) {
  return window == Window::kHann ? "hann" : "rectangular";
}

namespace {

std::vector<double> window_taps(Window window, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (window == Window::kHann) {
    // Periodic Hann, the usual STFT choice.
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return w;
}

}  // namespace

Eigen::MatrixXd stft_power(const IQRecord& record, std::size_t fft_size, std::size_t frame_hop,
                           Window window) {
  record.validate();
  require(fft_size >= 2 && std::has_single_bit(fft_size), ErrorKind::kInvalidInput,
          "fft_size must be a power of two >= 2");
  require(frame_hop > 0 && frame_hop <= fft_size, ErrorKind::kInvalidInput,
          "frame_hop must lie in (0, fft_size]");
  const std::size_t n = record.samples.size();
  require(n >= fft_size, ErrorKind::kInvalidInput,
          "record '" + record.source_id + "' has " + std::to_string(n) +
              " samples, fewer than fft_size " + std::to_string(fft_size));

  const std::size_t frames = (n - fft_size) / frame_hop + 1;
  const std::size_t bins = fft_size / 2 + 1;
  const auto taps = window_taps(window, fft_size);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(fft_size);
  std::vector<std::complex<double>> out;
  Eigen::MatrixXd power(frames, bins);
  const double scale = 1.0 / static_cast<double>(fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * frame_hop;
    for (std::size_t i = 0; i < fft_size; ++i) {
      const auto& s = record.samples[start + i];
      in[i] = std::complex<double>(s.real(), s.imag()) * taps[i];
    }
    fft.fwd(out, in);
    power(f, 0) = std::norm(out[0]) * scale;
    for (std::size_t k = 1; k < bins - 1; ++k) {
      power(f, k) = (std::norm(out[k]) + std::norm(out[fft_size - k])) * scale;
    }
    power(f, bins - 1) = std::norm(out[fft_size / 2]) * scale;
  }
  return power;
}

Spectrogram stft_spectrogram(const IQRecord& record, std::size_t fft_size, std::size_t frame_hop,
                             Window window) {
  const Eigen::MatrixXd power = stft_power(record, fft_size, frame_hop, window);
  const Eigen::MatrixXd db =
      power.unaryExpr([](double p) { return 10.0 * std::log10(p + kLogPowerEpsilon); });
  const double lo = db.minCoeff();
  const double hi = db.maxCoeff();

  Spectrogram spec;
  spec.n_frames = static_cast<std::size_t>(power.rows());
  spec.n_bins = static_cast<std::size_t>(power.cols());
  spec.frame_hop = frame_hop;
  spec.fft_size = fft_size;
  spec.window = window;
  spec.label = record.label;
  spec.values.assign(spec.n_frames * spec.n_bins, 0.0f);
  const double range = hi - lo;
  if (range > 0.0) {
    for (std::size_t f = 0; f < spec.n_frames; ++f) {
      for (std::size_t b = 0; b < spec.n_bins; ++b) {
        const double v = (db(f, b) - lo) / range;
        spec.values[f * spec.n_bins + b] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
    }
  }
  return spec;
}

// Spectrogram cache ------------------------------------------------------------

namespace {
constexpr std::uint16_t kCacheVersion = 1;
}

void write_spectrogram_cache(const std::filesystem::path& path, const Spectrogram& spec) {
  require(spec.values.size() == spec.n_frames * spec.n_bins, ErrorKind::kInvalidInput,
          "spectrogram shape does not match its value count");
  ByteWriter w;
  w.magic("OWRF");
  w.put<std::uint16_t>(kCacheVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_frames));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_bins));
  w.put_span<float>(spec.values);
  write_file_atomic(path, w.bytes());
}

Spectrogram read_spectrogram_cache(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("OWRF");
  const auto version = r.get<std::uint16_t>();
  require(version == kCacheVersion, ErrorKind::kInvalidInput,
          path.string() + ": unsupported spectrogram cache version " + std::to_string(version));
  r.get<std::uint16_t>();
  Spectrogram spec;
  spec.n_frames = r.get<std::uint32_t>();
  spec.n_bins = r.get<std::uint32_t>();
  require(spec.n_bins >= 2, ErrorKind::kInvalidInput, path.string() + ": bad bin count");
  spec.fft_size = 2 * (spec.n_bins - 1);
  spec.values.resize(spec.n_frames * spec.n_bins);
  r.get_into<float>(spec.values);
  require(r.remaining() == 0, ErrorKind::kInvalidInput, path.string() + ": trailing bytes");
  for (float v : spec.values) {
    require(v >= 0.0f && v <= 1.0f, ErrorKind::kInvalidInput,
            path.string() + ": value outside [0,1]");
  }
  return spec;
}

}  // namespace owr::signal

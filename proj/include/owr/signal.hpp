#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace owr::signal {

/// One complex-baseband capture x(t) = s_c(t) + n(t).
struct IQRecord {
  std::vector<std::complex<float>> samples;
  double sample_rate = 0.0;   // Hz
  double carrier_freq = 0.0;  // Hz
  std::optional<std::string> label;
  std::string source_id;

  /// Throws kInvalidInput on empty samples, non-positive rate, or non-finite values.
  void validate() const;
  bool operator==(const IQRecord&) const = default;
};

/// Parametric emitter used as a stand-in for real captures.
///
/// Each dwell of length `hop_period` (the whole record when 0) transmits the
/// next tone of `tone_set` as a linear chirp spanning `bandwidth` Hz, gated on
/// for the leading `burst_duty` fraction of the dwell. Without hopping all tones
/// are summed. `am_depth` applies sinusoidal envelope modulation.
struct SynthClassProfile {
  std::string class_id;
  std::vector<double> tone_set;  // baseband offsets, Hz
  double hop_period = 0.0;       // s
  double bandwidth = 0.0;        // Hz
  double burst_duty = 1.0;
  double am_depth = 0.0;
  double sample_rate = 1.0e6;
  double carrier_freq = 2.4e9;

  void validate() const;
  bool operator==(const SynthClassProfile&) const = default;
};

/// Rejects duplicate class ids and identical profiles under distinct ids.
void validate_profiles(std::span<const SynthClassProfile> profiles);

/// Disables the noise term of generate_burst.
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Signal and noise before mixing, kept separate for power accounting.
struct BurstComponents {
  std::vector<std::complex<double>> signal;
  std::vector<std::complex<double>> noise;
};

BurstComponents synthesize_components(const SynthClassProfile& profile, double duration,
                                      double snr_db, std::uint64_t seed,
                                      std::size_t min_samples = 64);

/// Deterministic labeled burst. The noise is scaled so that the empirical
/// power ratio over the record equals snr_db.
IQRecord generate_burst(const SynthClassProfile& profile, double duration, double snr_db,
                        std::uint64_t seed, std::size_t min_samples = 64);

/// One manifest row: a JSON object per line.
struct ManifestEntry {
  std::string path;
  double sample_rate = 0.0;
  double carrier_freq = 0.0;
  std::optional<std::string> label;
  std::string source_id;
  std::optional<double> snr_db;
  std::optional<std::string> split;

  bool operator==(const ManifestEntry&) const = default;
};

std::string manifest_line(const ManifestEntry& entry);
ManifestEntry parse_manifest_line(const std::string& line);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Interleaved little-endian float32 I,Q without header.
void write_iq(const std::filesystem::path& path, const IQRecord& record);

/// Loads raw I/Q; `path` overrides `entry.path` (which may be relative to a manifest).
IQRecord ingest_iq(const std::filesystem::path& path, const ManifestEntry& entry);

enum class Window { kHann, kRectangular };

Window parse_window(const std::string& name);
std::string window_name(Window window);

/// Normalized log-power time-frequency matrix, row-major [n_frames x n_bins].
struct Spectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::size_t frame_hop = 0;
  std::size_t fft_size = 0;
  Window window = Window::kHann;
  std::vector<float> values;
  std::optional<std::string> label;

  float at(std::size_t frame, std::size_t bin) const { return values[frame * n_bins + bin]; }
};

/// Floor added before the log so that silent bins stay finite.
inline constexpr double kLogPowerEpsilon = 1e-12;

/// Linear power per frame and one-sided bin, |X_k|^2 / fft_size, with the
/// negative-frequency half folded onto the positive bins. For a rectangular
/// window each row sums to the frame energy.
Eigen::MatrixXd stft_power(const IQRecord& record, std::size_t fft_size, std::size_t frame_hop,
                           Window window);

/// 10*log10(power + eps), then min-max scaled to [0,1]; a constant matrix maps to zeros.
Spectrogram stft_spectrogram(const IQRecord& record, std::size_t fft_size, std::size_t frame_hop,
                             Window window = Window::kHann);

/// Cache file: "OWRF", u16 version, u16 reserved, u32 n_frames, u32 n_bins,
/// then row-major float32 values. Only the matrix is persisted.
void write_spectrogram_cache(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram read_spectrogram_cache(const std::filesystem::path& path);

}  // namespace owr::signal

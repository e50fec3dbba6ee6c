#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "owr/discovery.hpp"
#include "owr/embedding.hpp"
#include "owr/incremental.hpp"
#include "owr/signal.hpp"

namespace owr {

struct SignalSettings {
  double sample_rate = 1.0e6;
  double carrier_freq = 2.4e9;
  double duration = 2.048e-3;  // s
  std::size_t fft_size = 64;
  std::size_t frame_hop = 64;
  signal::Window window = signal::Window::kHann;
  std::vector<double> snr_db{20.0};
  std::size_t samples_per_class = 300;
  /// Known classes: [0, train) train, [train, train+stream) stream, rest eval.
  /// Novel classes: [0, train+stream) stream, rest eval.
  double train_fraction = 0.6;
  double stream_fraction = 0.2;
  std::vector<signal::SynthClassProfile> known;
  std::vector<signal::SynthClassProfile> novel;

  std::size_t n_frames() const;
  std::size_t n_bins() const { return fft_size / 2 + 1; }
  bool operator==(const SignalSettings&) const = default;
};

struct TrainSettings {
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  int epochs = 40;
  int warmup_epochs = 1;
  bool operator==(const TrainSettings&) const = default;
};

struct IncrementalSettings {
  std::size_t n_min = 100;
  std::size_t old_max = 5;
  std::size_t new_max = 60;
  std::size_t memory_capacity = 1000;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  int fine_tune_epochs = 30;
  double plateau_tolerance = 1e-4;
  int plateau_patience = 5;
  bool truth_purity = false;
  bool flush_at_end = true;
  bool operator==(const IncrementalSettings&) const = default;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  SignalSettings signal;
  std::vector<std::size_t> hidden_widths{256, 128};
  std::size_t embed_dim = 64;
  embedding::Activation activation = embedding::Activation::kRelu;
  embedding::LossConfig loss;
  TrainSettings train;
  double shrinkage = openset::kDefaultShrinkage;
  discovery::DiscoveryConfig discovery;
  IncrementalSettings incremental;
  std::int64_t max_update_steps = 10000;  // per update
  /// Dataset directory; relative paths resolve against the config file.
  std::filesystem::path data_dir;

  embedding::EncoderConfig encoder() const;
  incremental::SessionConfig session() const;
  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

/// INI text with sections seeds, signal, encoder, loss, train, openset, discovery,
/// incremental, budget, paths and one [profile:<id>] per class. Unknown sections
/// or keys are config errors. Without profile sections, known_classes and
/// novel_classes in [signal] expand to built-in profiles.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const PipelineConfig& cfg);

/// Built-in, mutually separable synthetic classes numbered from first_index.
std::vector<signal::SynthClassProfile> builtin_profiles(std::size_t count, std::size_t first_index,
                                                        double sample_rate, double carrier_freq);

}  // namespace owr

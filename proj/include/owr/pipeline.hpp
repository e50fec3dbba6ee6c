#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "owr/checkpoint.hpp"
#include "owr/config.hpp"
#include "owr/evaluation.hpp"
#include "owr/incremental.hpp"

namespace owr::pipeline {

inline const std::string kSplitTrain = "train";
inline const std::string kSplitStream = "stream";
inline const std::string kSplitEval = "eval";

struct DatasetItem {
  signal::ManifestEntry entry;  // path is relative to the dataset root
  signal::IQRecord record;
  bool novel = false;
};

/// Every (class, snr, index) burst of the config, in a fixed order.
std::vector<DatasetItem> synthesize_dataset(const PipelineConfig& cfg);

/// Writes iq/<class>/<snr>_<index>.iq plus manifest.jsonl (all rows),
/// known.jsonl and unknown.jsonl. Returns the written file paths, relative.
std::vector<std::string> write_dataset(const std::filesystem::path& root,
                                       std::span<const DatasetItem> items);

/// Loads manifest.jsonl rows whose split is in `splits` (all rows if empty).
std::vector<DatasetItem> load_dataset(const std::filesystem::path& root,
                                      const std::vector<std::string>& splits = {});

using Samples = std::vector<incremental::StreamSample>;

Samples to_samples(std::span<const DatasetItem> items, const PipelineConfig& cfg);
Samples select_split(std::span<const DatasetItem> items, const std::string& split, bool novel,
                     const PipelineConfig& cfg);
/// The stream split of every class, shuffled with the stream-order seed.
Samples stream_samples(std::span<const DatasetItem> items, const PipelineConfig& cfg);

using EpochCallback = std::function<void(int epoch, const embedding::EpochStats&)>;

/// Init, CE-only warm start, center reset, then composite-loss epochs.
/// Class ids follow the sorted truth labels.
embedding::TrainState train_encoder(const Samples& training, const PipelineConfig& cfg,
                                    const EpochCallback& on_epoch = {});

/// Registry view used to score predictions against truth.
evaluation::LabelMap label_map(std::span<const ClassEntry> registry);

enum class PredictMode { kHead, kGate };

std::vector<ClassId> predict(const embedding::TrainState& model,
                             std::span<const openset::ClassStatistics> stats, const Samples& samples,
                             PredictMode mode);

evaluation::EvalReport evaluate(const Checkpoint& ck, const Samples& samples, PredictMode mode);

/// Embeddings of the samples as rows.
Eigen::MatrixXd embed_rows(const embedding::TrainState& model, const Samples& samples);

}  // namespace owr::pipeline

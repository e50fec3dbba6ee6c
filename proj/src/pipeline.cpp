#include "owr/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "owr/error.hpp"
#include "owr/seed.hpp"

namespace owr::pipeline {

namespace {

std::string snr_tag(double snr) {
  if (std::isinf(snr)) return "clean";
  char buf[32];
  std::snprintf(buf, sizeof buf, "snr%+g", snr);
  return buf;
}

std::string split_for(std::size_t index, std::size_t count, bool novel, const SignalSettings& s) {
  const auto train_end = static_cast<std::size_t>(std::floor(s.train_fraction * static_cast<double>(count)));
  const auto stream_end = static_cast<std::size_t>(
      std::floor((s.train_fraction + s.stream_fraction) * static_cast<double>(count)));
  if (novel) return index < stream_end ? kSplitStream : kSplitEval;
  if (index < train_end) return kSplitTrain;
  return index < stream_end ? kSplitStream : kSplitEval;
}

}  // namespace

std::vector<DatasetItem> synthesize_dataset(const PipelineConfig& cfg) {
  cfg.validate();
  const auto& s = cfg.signal;
  std::vector<DatasetItem> out;
  auto add = [&](const signal::SynthClassProfile& p, bool novel) {
    for (std::size_t k = 0; k < s.snr_db.size(); ++k) {
      for (std::size_t i = 0; i < s.samples_per_class; ++i) {
        const auto seed = derive_seed(
            cfg.seed, "signal/" + p.class_id + "/" + std::to_string(k) + "/" + std::to_string(i));
        DatasetItem item;
        item.record = signal::generate_burst(p, s.duration, s.snr_db[k], seed, s.fft_size);
        item.novel = novel;
        char name[48];
        std::snprintf(name, sizeof name, "%s_%05zu.iq", snr_tag(s.snr_db[k]).c_str(), i);
        auto& e = item.entry;
        e.path = "iq/" + p.class_id + "/" + name;
        e.sample_rate = item.record.sample_rate;
        e.carrier_freq = item.record.carrier_freq;
        e.label = p.class_id;
        e.source_id = item.record.source_id;
        e.snr_db = s.snr_db[k];
        e.split = split_for(i, s.samples_per_class, novel, s);
        out.push_back(std::move(item));
      }
    }
  };
  for (const auto& p : s.known) add(p, false);
  for (const auto& p : s.novel) add(p, true);
  return out;
}

std::vector<std::string> write_dataset(const std::filesystem::path& root,
                                       std::span<const DatasetItem> items) {
  std::vector<std::string> written;
  std::vector<signal::ManifestEntry> all, known, unknown;
  for (const auto& item : items) {
    const auto path = root / item.entry.path;
    std::filesystem::create_directories(path.parent_path());
    signal::write_iq(path, item.record);
    written.push_back(item.entry.path);
    all.push_back(item.entry);
    (item.novel ? unknown : known).push_back(item.entry);
  }
  signal::write_manifest(root / "manifest.jsonl", all);
  signal::write_manifest(root / "known.jsonl", known);
  signal::write_manifest(root / "unknown.jsonl", unknown);
  written.insert(written.end(), {"manifest.jsonl", "known.jsonl", "unknown.jsonl"});
  return written;
}

std::vector<DatasetItem> load_dataset(const std::filesystem::path& root,
                                      const std::vector<std::string>& splits) {
  std::vector<DatasetItem> out;
  for (const auto& [file, novel] : {std::pair{"known.jsonl", false}, std::pair{"unknown.jsonl", true}}) {
    const auto manifest = root / file;
    if (!std::filesystem::exists(manifest)) {
      fail(ErrorKind::kMissingArtifact, "dataset manifest not found: " + manifest.string());
    }
    for (auto& e : signal::read_manifest(manifest)) {
      if (!splits.empty() &&
          (!e.split || std::find(splits.begin(), splits.end(), *e.split) == splits.end())) {
        continue;
      }
      DatasetItem item;
      item.record = signal::ingest_iq(root / e.path, e);
      item.entry = std::move(e);
      item.novel = novel;
      out.push_back(std::move(item));
    }
  }
  return out;
}

Samples to_samples(std::span<const DatasetItem> items, const PipelineConfig& cfg) {
  Samples out;
  out.reserve(items.size());
  for (const auto& item : items) {
    auto spec = std::make_shared<signal::Spectrogram>(signal::stft_spectrogram(
        item.record, cfg.signal.fft_size, cfg.signal.frame_hop, cfg.signal.window));
    out.push_back({std::move(spec), item.entry.label});
  }
  return out;
}

Samples select_split(std::span<const DatasetItem> items, const std::string& split, bool novel,
                     const PipelineConfig& cfg) {
  std::vector<DatasetItem> chosen;
  for (const auto& item : items) {
    if (item.novel == novel && item.entry.split == split) chosen.push_back(item);
  }
  return to_samples(chosen, cfg);
}

Samples stream_samples(std::span<const DatasetItem> items, const PipelineConfig& cfg) {
  std::vector<DatasetItem> chosen;
  for (const auto& item : items) {
    if (item.entry.split == kSplitStream) chosen.push_back(item);
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, "stream/order"));
  for (std::size_t i = chosen.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(chosen[i - 1], chosen[pick(rng)]);
  }
  return to_samples(chosen, cfg);
}

embedding::TrainState train_encoder(const Samples& training, const PipelineConfig& cfg,
                                    const EpochCallback& on_epoch) {
  std::set<std::string> names;
  for (const auto& s : training) {
    require(s.truth.has_value(), ErrorKind::kInvalidInput, "training samples must be labelled");
    names.insert(*s.truth);
  }
  require(names.size() >= 2, ErrorKind::kInvalidInput, "training needs at least 2 classes");
  std::vector<signal::Spectrogram> specs;
  std::vector<ClassId> labels;
  for (const auto& s : training) {
    specs.push_back(*s.spec);
    labels.push_back(
        class_id(static_cast<std::int32_t>(std::distance(names.begin(), names.find(*s.truth)))));
  }
  const auto data = embedding::make_training_set(specs, labels);
  auto state = embedding::init_state(cfg.encoder(), names.size());

  embedding::TrainOptions opts;
  opts.learning_rate = cfg.train.learning_rate;
  opts.batch_size = cfg.train.batch_size;
  for (int e = 0; e < cfg.train.warmup_epochs; ++e) {
    opts.shuffle_seed = derive_seed(cfg.seed, "train/warmup/" + std::to_string(e));
    embedding::warm_start(state, data, opts);
  }
  for (int e = 0; e < cfg.train.epochs; ++e) {
    opts.shuffle_seed = derive_seed(cfg.seed, "train/epoch/" + std::to_string(e));
    const auto stats = embedding::train_epoch(state, data, cfg.loss, opts);
    if (on_epoch) on_epoch(e, stats);
  }
  return state;
}

evaluation::LabelMap label_map(std::span<const ClassEntry> registry) {
  evaluation::LabelMap m;
  for (const auto& c : registry) {
    if (c.provenance == "original") {
      m.to_truth[c.id] = c.name;
      m.original_known.insert(c.name);
    } else {
      m.to_truth[c.id] = c.majority_truth;
    }
  }
  return m;
}

Eigen::MatrixXd embed_rows(const embedding::TrainState& model, const Samples& samples) {
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(model.config.input_dim()),
                         static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    inputs.col(static_cast<Eigen::Index>(i)) = embedding::flatten_input(*samples[i].spec);
  }
  return embedding::encode_batch(model, inputs).transpose();
}

std::vector<ClassId> predict(const embedding::TrainState& model,
                             std::span<const openset::ClassStatistics> stats, const Samples& samples,
                             PredictMode mode) {
  if (samples.empty()) return {};
  const Eigen::MatrixXd z = embed_rows(model, samples);
  std::vector<ClassId> out;
  out.reserve(samples.size());
  if (mode == PredictMode::kHead) {
    const Eigen::MatrixXd lg = embedding::logits(model, z.transpose());
    for (Eigen::Index i = 0; i < lg.cols(); ++i) {
      Eigen::Index best = 0;
      lg.col(i).maxCoeff(&best);
      out.push_back(class_id(static_cast<std::int32_t>(best)));
    }
  } else {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      out.push_back(openset::decide(z.row(i).transpose(), stats).predicted);
    }
  }
  return out;
}

evaluation::EvalReport evaluate(const Checkpoint& ck, const Samples& samples, PredictMode mode) {
  std::vector<std::string> truth;
  for (const auto& s : samples) {
    require(s.truth.has_value(), ErrorKind::kInvalidInput, "evaluation samples must be labelled");
    truth.push_back(*s.truth);
  }
  const auto pred = predict(ck.state, ck.stats, samples, mode);
  return evaluation::score_session(pred, truth, label_map(ck.classes));
}

}  // namespace owr::pipeline

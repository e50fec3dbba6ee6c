#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "owr/checkpoint.hpp"
#include "owr/discovery.hpp"
#include "owr/embedding.hpp"
#include "owr/openset.hpp"
#include "owr/signal.hpp"

namespace owr::incremental {

using SpectrogramRef = std::shared_ptr<const signal::Spectrogram>;

/// One stream element. `truth` is carried for evaluation only and never
/// influences a decision unless truth purity is explicitly enabled.
struct StreamSample {
  SpectrogramRef spec;
  std::optional<std::string> truth;
};

/// Disables discovery: the buffer never reaches this size.
inline constexpr std::size_t kNeverTrigger = std::numeric_limits<std::size_t>::max();

struct SessionConfig {
  embedding::LossConfig loss;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  int fine_tune_epochs = 30;
  /// Early stop once the epoch loss moves by at most this for plateau_patience epochs in a row.
  double plateau_tolerance = 1e-4;
  int plateau_patience = 5;
  std::size_t old_max = 5;
  std::size_t new_max = 60;
  std::size_t memory_capacity = 1000;  // M_max
  std::size_t n_min = 100;
  /// Optimizer-step ceiling for a single incremental update.
  std::int64_t max_update_steps = 10000;
  double shrinkage = openset::kDefaultShrinkage;
  discovery::DiscoveryConfig discovery;
  /// Filter clusters by ground-truth purity (evaluation mode) instead of the proxy.
  bool truth_purity = false;
  bool flush_at_end = true;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SessionConfig&) const = default;
};

struct Exemplar {
  SpectrogramRef spec;
  Embedding z;
  std::size_t arrival = 0;
  std::optional<std::string> truth;
};

/// Capacity-bounded exemplar store.
class ReplayMemory {
 public:
  ReplayMemory() = default;
  ReplayMemory(std::size_t capacity, std::size_t per_class_cap)
      : capacity_(capacity), per_class_cap_(per_class_cap) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t per_class_cap() const { return per_class_cap_; }
  /// min(old_max, capacity / classes): the per-class quota that keeps the total bounded.
  std::size_t quota(std::size_t num_classes) const;
  std::size_t total() const;
  const std::map<ClassId, std::vector<Exemplar>>& classes() const { return store_; }
  std::map<ClassId, std::vector<Exemplar>>& classes() { return store_; }

  /// Replaces a class's exemplars; throws kBudgetExceeded past the per-class cap.
  void set(ClassId id, std::vector<Exemplar> exemplars);
  /// Throws kBudgetExceeded if any bound is violated.
  void check() const;

 private:
  std::size_t capacity_ = 0;
  std::size_t per_class_cap_ = 0;
  std::map<ClassId, std::vector<Exemplar>> store_;
};

struct BufferEntry {
  Embedding z;
  SpectrogramRef spec;
  std::size_t arrival = 0;
  std::optional<std::string> truth;
};

struct UnknownBuffer {
  std::vector<BufferEntry> entries;
  std::size_t n_min = 100;
};

/// Line-delimited JSON events with monotone sequence numbers.
class SessionLog {
 public:
  void append(const std::string& event, nlohmann::ordered_json payload);
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const;

 private:
  std::vector<std::string> lines_;
  std::uint64_t next_seq_ = 0;
};

struct DiscoveryRecord {
  std::size_t session = 0;
  discovery::ClusterReport report;
  std::vector<BufferEntry> buffer;  // snapshot handed to discovery
  std::vector<ClassId> new_classes;
};

struct SessionState {
  embedding::TrainState model;
  std::vector<openset::ClassStatistics> stats;
  ReplayMemory memory;
  UnknownBuffer buffer;
  std::vector<ClassEntry> registry;
  SessionLog log;
  std::vector<DiscoveryRecord> discoveries;
  std::size_t next_arrival = 0;
  std::vector<std::int64_t> update_steps;  // optimizer steps used by each update
  std::vector<ClassId> stale_classes;      // kept prior statistics at the last update

  Checkpoint checkpoint() const;
  /// Registry ids unique and dense, statistics for every class, memory bounds held.
  void check_invariants() const;
};

/// The `cap` samples nearest their mean, ties broken by arrival index, returned
/// in that order. A cap at or above the class size keeps everything.
std::vector<std::size_t> select_exemplars(std::span<const Embedding> embeddings,
                                          std::span<const std::size_t> arrival, std::size_t cap);

/// Builds a session from a trained model and its labelled training set:
/// registry from the sorted labels, statistics on current embeddings, memory
/// from select_exemplars.
SessionState start_session(embedding::TrainState model, std::span<const StreamSample> training,
                           const SessionConfig& cfg);

/// Re-embeds with the current model.
SessionState resume_session(Checkpoint ck, std::span<const StreamSample> memory_source,
                            const SessionConfig& cfg);

struct StreamDecision {
  std::size_t index = 0;
  ClassId predicted = kUnknownClass;
  ClassId nearest = kUnknownClass;
  double distance = 0.0;
  bool accepted = false;
};

/// Called after every discovery pass, e.g. to persist a checkpoint.
using DiscoveryHook = std::function<void(const SessionState&, const DiscoveryRecord&)>;

/// Gates each sample; buffers rejects; runs discovery and an update whenever the
/// buffer reaches n_min, and optionally flushes a tail buffer of at least 2*s_min.
std::vector<StreamDecision> process_stream(SessionState& state, std::span<const StreamSample> stream,
                                           const SessionConfig& cfg,
                                           const DiscoveryHook& on_discovery = {});

struct NovelCluster {
  int cluster = 0;
  std::vector<BufferEntry> members;
  std::optional<std::string> majority_truth;
};

struct UpdateItem {
  SpectrogramRef spec;
  ClassId label{};
  bool replay = false;
};

struct UpdateSet {
  std::vector<UpdateItem> items;
  std::vector<ClassId> new_classes;
  std::vector<NovelCluster> clusters;  // aligned with new_classes
  std::size_t old_count = 0;
  std::size_t new_count = 0;
};

/// <= old_max exemplars per old class from memory, <= new_max per new cluster
/// (nearest its mean), new ids from first_new_id upward. Throws on no clusters.
UpdateSet assemble_update_set(std::span<const NovelCluster> clusters, const ReplayMemory& memory,
                              std::size_t old_max, std::size_t new_max, ClassId first_new_id);

struct UpdateSummary {
  std::int64_t steps = 0;
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<ClassId> stale;
};

/// Grows the head, fine-tunes on class-balanced batches under the step
/// ceiling, refits every class with samples (memory and all cluster members),
/// and refreshes memory. Classes left with < 2 samples keep prior statistics.
UpdateSummary incremental_update(SessionState& state, const UpdateSet& update, std::size_t session,
                                 const SessionConfig& cfg);

/// Runs discovery on the current buffer, updates when clusters survive, clears the buffer.
const DiscoveryRecord& run_discovery(SessionState& state, const SessionConfig& cfg);

/// Discovery over a buffer snapshot with the session-derived seed; run_discovery
/// goes through here, so a saved buffer reproduces the streaming report exactly.
discovery::ClusterReport discover_buffer(std::span<const BufferEntry> entries, std::size_t session,
                                         const SessionConfig& cfg);

/// Unknown-buffer snapshot on disk: "OWUB", version, session, then per entry
/// arrival, optional truth and the embedding. Spectrograms are not stored.
void save_buffer(const std::filesystem::path& path, std::size_t session,
                 std::span<const BufferEntry> entries);

struct SavedBuffer {
  std::size_t session = 0;
  std::vector<BufferEntry> entries;  // spec is null
};

SavedBuffer load_buffer(const std::filesystem::path& path);

}  // namespace owr::incremental

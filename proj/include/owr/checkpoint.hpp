#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "owr/embedding.hpp"
#include "owr/openset.hpp"

namespace owr {

/// One row of the class table stored with a model.
struct ClassEntry {
  ClassId id{};
  std::string name;        // original label, or novel-<session>-<cluster>
  std::string provenance;  // "original" or "discovered"
  std::optional<std::string> majority_truth;  // evaluation only

  bool operator==(const ClassEntry&) const = default;
};

struct Checkpoint {
  embedding::TrainState state;
  std::vector<ClassEntry> classes;
  std::vector<openset::ClassStatistics> stats;
};

/// Binary layout, little-endian:
///   "OWCK" u16 version
///   encoder config, u64 step_count
///   class table, flat parameters (encoder, head W, head b, centers)
///   Adam first and second moments in the same layout
///   "STATS" u32 count, then per class: i32 id, u32 D, mu, sigma, f64 tau, u64 n, u8 degenerate
/// Written atomically.
std::vector<char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const char> bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace owr

#include "owr/incremental.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "owr/binary_io.hpp"
#include "owr/error.hpp"
#include "owr/seed.hpp"

namespace owr::incremental {

namespace {

nlohmann::ordered_json ids_json(std::span<const ClassId> ids) {
  auto arr = nlohmann::ordered_json::array();
  for (auto id : ids) arr.push_back(to_int(id));
  return arr;
}

Eigen::MatrixXd embed_all(const embedding::TrainState& model, std::span<const SpectrogramRef> specs) {
  if (specs.empty()) return Eigen::MatrixXd(static_cast<Eigen::Index>(model.embed_dim()), 0);
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(model.config.input_dim()),
                         static_cast<Eigen::Index>(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(specs[i]->n_frames == model.config.n_frames && specs[i]->n_bins == model.config.n_bins,
            ErrorKind::kInvalidInput, "spectrogram shape does not match the encoder");
    inputs.col(static_cast<Eigen::Index>(i)) = embedding::flatten_input(*specs[i]);
  }
  return embedding::encode_batch(model, inputs);
}

std::optional<std::string> majority(std::span<const BufferEntry> members) {
  std::map<std::string, std::size_t> votes;
  for (const auto& m : members) {
    if (!m.truth) return std::nullopt;
    ++votes[*m.truth];
  }
  std::optional<std::string> best;
  std::size_t top = 0;
  bool tie = false;
  for (const auto& [label, count] : votes) {
    if (count > top) {
      top = count;
      best = label;
      tie = false;
    } else if (count == top) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

std::vector<Exemplar> pick(std::vector<Exemplar> pool, std::size_t cap) {
  std::vector<Embedding> z;
  std::vector<std::size_t> arrival;
  for (const auto& e : pool) {
    z.push_back(e.z);
    arrival.push_back(e.arrival);
  }
  std::vector<Exemplar> out;
  for (auto i : select_exemplars(z, arrival, cap)) out.push_back(std::move(pool[i]));
  return out;
}

}  // namespace

void SessionConfig::validate() const {
  loss.validate();
  discovery.validate();
  require(learning_rate >= 0.0, ErrorKind::kConfig, "incremental learning rate must be >= 0");
  require(batch_size > 0, ErrorKind::kConfig, "incremental batch_size must be positive");
  require(fine_tune_epochs >= 0, ErrorKind::kConfig, "fine_tune_epochs must be >= 0");
  require(plateau_patience >= 1, ErrorKind::kConfig, "plateau_patience must be >= 1");
  require(n_min >= 2, ErrorKind::kConfig, "n_min must be >= 2");
  require(max_update_steps >= 0, ErrorKind::kConfig, "max_update_steps must be >= 0");
  require(shrinkage >= 0.0 && shrinkage <= 1.0, ErrorKind::kConfig, "shrinkage must lie in [0,1]");
}

// Replay memory ----------------------------------------------------------------

std::size_t ReplayMemory::quota(std::size_t num_classes) const {
  if (num_classes == 0) return per_class_cap_;
  return std::min(per_class_cap_, capacity_ / num_classes);
}

std::size_t ReplayMemory::total() const {
  std::size_t n = 0;
  for (const auto& [_, ex] : store_) n += ex.size();
  return n;
}

void ReplayMemory::set(ClassId id, std::vector<Exemplar> exemplars) {
  if (exemplars.size() > per_class_cap_) {
    fail(ErrorKind::kBudgetExceeded, "replay memory: class " + to_string(id) + " would hold " +
                                         std::to_string(exemplars.size()) + " > old_max " +
                                         std::to_string(per_class_cap_));
  }
  store_[id] = std::move(exemplars);
}

void ReplayMemory::check() const {
  for (const auto& [id, ex] : store_) {
    if (ex.size() > per_class_cap_) {
      fail(ErrorKind::kBudgetExceeded, "replay memory: class " + to_string(id) + " holds " +
                                           std::to_string(ex.size()) + " > old_max " +
                                           std::to_string(per_class_cap_));
    }
  }
  if (total() > capacity_) {
    fail(ErrorKind::kBudgetExceeded, "replay memory holds " + std::to_string(total()) +
                                         " > M_max " + std::to_string(capacity_));
  }
}

// Session log ---------------------------------------------------------------------

void SessionLog::append(const std::string& event, nlohmann::ordered_json payload) {
  nlohmann::ordered_json j;
  j["seq"] = next_seq_++;
  j["event"] = event;
  for (auto& [k, v] : payload.items()) j[k] = v;
  lines_.push_back(j.dump());
}

std::string SessionLog::text() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out += '\n';
  }
  return out;
}

// Session state -------------------------------------------------------------------

Checkpoint SessionState::checkpoint() const { return Checkpoint{model, registry, stats}; }

void SessionState::check_invariants() const {
  for (std::size_t i = 0; i < registry.size(); ++i) {
    require(to_int(registry[i].id) == static_cast<std::int32_t>(i), ErrorKind::kNumerical,
            "class registry ids are not dense");
  }
  require(model.num_classes() == registry.size(), ErrorKind::kNumerical,
          "classifier head does not cover the registry");
  require(stats.size() == registry.size(), ErrorKind::kNumerical,
          "statistics missing for a registered class");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    require(stats[i].class_id == registry[i].id, ErrorKind::kNumerical,
            "statistics are out of registry order");
  }
  memory.check();
}

std::vector<std::size_t> select_exemplars(std::span<const Embedding> embeddings,
                                          std::span<const std::size_t> arrival, std::size_t cap) {
  require(embeddings.size() == arrival.size(), ErrorKind::kInvalidInput,
          "select_exemplars: embedding/arrival size mismatch");
  const std::size_t n = embeddings.size();
  if (n == 0 || cap == 0) return {};
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(embeddings.front().size());
  for (const auto& z : embeddings) mean += z;
  mean /= static_cast<double>(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = (embeddings[i] - mean).squaredNorm();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return arrival[a] < arrival[b];
  });
  order.resize(std::min(cap, n));
  return order;
}

SessionState start_session(embedding::TrainState model, std::span<const StreamSample> training,
                           const SessionConfig& cfg) {
  cfg.validate();
  std::set<std::string> names;
  for (const auto& s : training) {
    require(s.truth.has_value(), ErrorKind::kInvalidInput, "training samples must be labelled");
    names.insert(*s.truth);
  }
  require(!names.empty(), ErrorKind::kInvalidInput, "start_session: no training samples");
  require(model.num_classes() == names.size(), ErrorKind::kInvalidInput,
          "model head has " + std::to_string(model.num_classes()) + " classes but training data has " +
              std::to_string(names.size()));

  SessionState st;
  st.model = std::move(model);
  st.memory = ReplayMemory(cfg.memory_capacity, cfg.old_max);
  st.buffer.n_min = cfg.n_min;
  for (const auto& name : names) {
    st.registry.push_back(
        {class_id(static_cast<std::int32_t>(st.registry.size())), name, "original", name});
  }
  auto id_of = [&](const std::string& name) {
    return class_id(static_cast<std::int32_t>(std::distance(names.begin(), names.find(name))));
  };

  std::vector<SpectrogramRef> specs;
  for (const auto& s : training) specs.push_back(s.spec);
  const Eigen::MatrixXd z = embed_all(st.model, specs);

  std::map<ClassId, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < training.size(); ++i) members[id_of(*training[i].truth)].push_back(i);

  const std::size_t quota = st.memory.quota(names.size());
  for (const auto& [id, idx] : members) {
    Eigen::MatrixXd batch(z.rows(), static_cast<Eigen::Index>(idx.size()));
    std::vector<Exemplar> pool;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      batch.col(static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(idx[j]));
      pool.push_back({training[idx[j]].spec, z.col(static_cast<Eigen::Index>(idx[j])), idx[j],
                      training[idx[j]].truth});
    }
    st.stats.push_back(openset::fit_single_class(id, batch, cfg.shrinkage));
    st.memory.set(id, pick(std::move(pool), quota));
  }
  st.next_arrival = training.size();
  st.check_invariants();

  nlohmann::ordered_json payload;
  payload["classes"] = st.registry.size();
  payload["training_samples"] = training.size();
  payload["memory"] = st.memory.total();
  st.log.append("session-start", std::move(payload));
  return st;
}

SessionState resume_session(Checkpoint ck, std::span<const StreamSample> memory_source,
                            const SessionConfig& cfg) {
  cfg.validate();
  SessionState st;
  st.model = std::move(ck.state);
  st.registry = std::move(ck.classes);
  st.stats = std::move(ck.stats);
  st.memory = ReplayMemory(cfg.memory_capacity, cfg.old_max);
  st.buffer.n_min = cfg.n_min;

  std::map<std::string, ClassId> by_name;
  for (const auto& c : st.registry) by_name[c.name] = c.id;
  std::vector<SpectrogramRef> specs;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < memory_source.size(); ++i) {
    if (memory_source[i].truth && by_name.contains(*memory_source[i].truth)) {
      specs.push_back(memory_source[i].spec);
      index.push_back(i);
    }
  }
  const Eigen::MatrixXd z = embed_all(st.model, specs);
  std::map<ClassId, std::vector<Exemplar>> pools;
  for (std::size_t j = 0; j < index.size(); ++j) {
    const auto& s = memory_source[index[j]];
    pools[by_name.at(*s.truth)].push_back({s.spec, z.col(static_cast<Eigen::Index>(j)), index[j], s.truth});
  }
  const std::size_t quota = st.memory.quota(st.registry.size());
  for (auto& [id, pool] : pools) st.memory.set(id, pick(std::move(pool), quota));
  st.next_arrival = memory_source.size();
  st.check_invariants();

  nlohmann::ordered_json payload;
  payload["classes"] = st.registry.size();
  payload["memory"] = st.memory.total();
  st.log.append("session-start", std::move(payload));
  return st;
}

// Streaming ---------------------------------------------------------------------

std::vector<StreamDecision> process_stream(SessionState& state, std::span<const StreamSample> stream,
                                           const SessionConfig& cfg, const DiscoveryHook& on_discovery) {
  cfg.validate();
  state.buffer.n_min = cfg.n_min;
  std::vector<StreamDecision> out;
  out.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    StreamDecision d;
    d.index = i;
    Embedding z;
    try {
      z = embedding::encode(state.model, *stream[i].spec);
      const auto dec = openset::decide(z, state.stats);
      d.predicted = dec.predicted;
      d.nearest = dec.nearest;
      d.accepted = dec.accepted;
      for (const auto& [id, dist] : dec.distances) {
        if (id == dec.nearest) d.distance = dist;
      }
    } catch (const Error& e) {
      fail(e.kind(), "stream position " + std::to_string(i) + ": " + e.what());
    }
    out.push_back(d);

    nlohmann::ordered_json payload;
    payload["index"] = i;
    payload["predicted"] = to_int(d.predicted);
    payload["nearest"] = to_int(d.nearest);
    payload["distance"] = d.distance;
    payload["accepted"] = d.accepted;
    state.log.append("decision", std::move(payload));

    if (!d.accepted) {
      state.buffer.entries.push_back({std::move(z), stream[i].spec, state.next_arrival, stream[i].truth});
    }
    ++state.next_arrival;
    if (state.buffer.entries.size() >= state.buffer.n_min) {
      const auto& rec = run_discovery(state, cfg);
      if (on_discovery) on_discovery(state, rec);
    }
    state.memory.check();
  }

  const std::size_t tail = state.buffer.entries.size();
  if (cfg.flush_at_end && tail > 0 && tail >= 2 * cfg.discovery.s_min && tail < state.buffer.n_min) {
    nlohmann::ordered_json payload;
    payload["buffer_size"] = tail;
    state.log.append("flush", std::move(payload));
    const auto& rec = run_discovery(state, cfg);
    if (on_discovery) on_discovery(state, rec);
  }
  return out;
}

const DiscoveryRecord& run_discovery(SessionState& state, const SessionConfig& cfg) {
  const std::size_t session = state.discoveries.size() + 1;
  auto& entries = state.buffer.entries;
  require(!entries.empty(), ErrorKind::kInvalidInput, "run_discovery: unknown buffer is empty");

  DiscoveryRecord rec;
  rec.session = session;
  rec.report = discover_buffer(entries, session, cfg);
  rec.buffer = entries;

  nlohmann::ordered_json payload;
  payload["session"] = session;
  payload["buffer_size"] = entries.size();
  payload["k_star"] = rec.report.k_star;
  payload["k_elbow"] = rec.report.k_elbow;
  payload["k_score"] = rec.report.k_score;
  payload["rule"] = discovery::rule_name(rec.report.rule);
  payload["model"] = discovery::model_name(rec.report.chosen_model);
  payload["accepted_clusters"] = rec.report.accepted_clusters.size();
  payload["purity_mode"] = rec.report.proxy_purity ? "proxy" : "truth";
  state.log.append("discovery-trigger", std::move(payload));

  std::vector<NovelCluster> clusters;
  for (const auto& ac : rec.report.accepted_clusters) {
    NovelCluster nc;
    nc.cluster = ac.cluster;
    for (auto m : ac.members) nc.members.push_back(entries[m]);
    nc.majority_truth = majority(nc.members);
    clusters.push_back(std::move(nc));
  }

  if (clusters.empty()) {
    nlohmann::ordered_json summary;
    summary["session"] = session;
    summary["noop"] = true;
    summary["new_classes"] = nlohmann::ordered_json::array();
    state.log.append("update-summary", std::move(summary));
  } else {
    const auto first = class_id(static_cast<std::int32_t>(state.registry.size()));
    const auto update = assemble_update_set(clusters, state.memory, cfg.old_max, cfg.new_max, first);
    incremental_update(state, update, session, cfg);
    rec.new_classes = update.new_classes;
  }
  entries.clear();
  state.discoveries.push_back(std::move(rec));
  return state.discoveries.back();
}

discovery::ClusterReport discover_buffer(std::span<const BufferEntry> entries, std::size_t session,
                                         const SessionConfig& cfg) {
  require(!entries.empty(), ErrorKind::kInvalidInput, "discovery: unknown buffer is empty");
  Eigen::MatrixXd z(static_cast<Eigen::Index>(entries.size()), entries.front().z.size());
  std::vector<std::string> truth;
  bool all_truth = true;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) = entries[i].z.transpose();
    if (entries[i].truth) truth.push_back(*entries[i].truth);
    else all_truth = false;
  }
  auto dcfg = cfg.discovery;
  dcfg.seed = derive_seed(cfg.seed, "discovery/" + std::to_string(session));
  std::optional<std::span<const std::string>> truth_view;
  if (cfg.truth_purity && all_truth) truth_view = std::span<const std::string>(truth);
  return discovery::discover(z, truth_view, dcfg);
}

void save_buffer(const std::filesystem::path& path, std::size_t session,
                 std::span<const BufferEntry> entries) {
  ByteWriter w;
  w.magic("OWUB");
  w.put<std::uint16_t>(1);
  w.put<std::uint64_t>(session);
  w.put<std::uint64_t>(entries.size());
  w.put<std::uint64_t>(entries.empty() ? 0 : static_cast<std::uint64_t>(entries.front().z.size()));
  for (const auto& e : entries) {
    w.put<std::uint64_t>(e.arrival);
    w.put<std::uint8_t>(e.truth ? 1 : 0);
    if (e.truth) w.put_string(*e.truth);
    w.put_span(std::span<const double>(e.z.data(), static_cast<std::size_t>(e.z.size())));
  }
  write_file_atomic(path, w.bytes());
}

SavedBuffer load_buffer(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("OWUB");
  const auto version = r.get<std::uint16_t>();
  require(version == 1, ErrorKind::kInvalidInput, path.string() + ": unsupported buffer version");
  SavedBuffer out;
  out.session = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    BufferEntry e;
    e.arrival = r.get<std::uint64_t>();
    if (r.get<std::uint8_t>()) e.truth = r.get_string();
    e.z.resize(static_cast<Eigen::Index>(d));
    r.get_into(std::span<double>(e.z.data(), d));
    out.entries.push_back(std::move(e));
  }
  require(r.remaining() == 0, ErrorKind::kInvalidInput, path.string() + ": trailing bytes");
  return out;
}

// Updates -----------------------------------------------------------------------

UpdateSet assemble_update_set(std::span<const NovelCluster> clusters, const ReplayMemory& memory,
                              std::size_t old_max, std::size_t new_max, ClassId first_new_id) {
  require(!clusters.empty(), ErrorKind::kInvalidInput, "assemble_update_set: no accepted clusters");
  UpdateSet set;
  for (const auto& [id, ex] : memory.classes()) {
    const std::size_t take = std::min(old_max, ex.size());
    for (std::size_t i = 0; i < take; ++i) set.items.push_back({ex[i].spec, id, true});
    set.old_count += take;
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto id = class_id(to_int(first_new_id) + static_cast<std::int32_t>(c));
    std::vector<Embedding> z;
    std::vector<std::size_t> arrival;
    for (const auto& m : clusters[c].members) {
      z.push_back(m.z);
      arrival.push_back(m.arrival);
    }
    for (auto i : select_exemplars(z, arrival, new_max)) {
      set.items.push_back({clusters[c].members[i].spec, id, false});
      ++set.new_count;
    }
    set.new_classes.push_back(id);
    set.clusters.push_back(clusters[c]);
  }
  return set;
}

UpdateSummary incremental_update(SessionState& state, const UpdateSet& update, std::size_t session,
                                 const SessionConfig& cfg) {
  require(!update.items.empty(), ErrorKind::kInvalidInput, "incremental_update: empty update set");
  require(update.new_classes.size() == update.clusters.size(), ErrorKind::kInvalidInput,
          "incremental_update: cluster/class mismatch");
  for (std::size_t c = 0; c < update.new_classes.size(); ++c) {
    require(to_int(update.new_classes[c]) == static_cast<std::int32_t>(state.registry.size()),
            ErrorKind::kInvalidInput, "incremental_update: new class ids must extend the registry");
    state.registry.push_back({update.new_classes[c],
                              "novel-" + std::to_string(session) + "-" +
                                  std::to_string(update.clusters[c].cluster),
                              "discovered", update.clusters[c].majority_truth});
  }
  embedding::add_classes(state.model, update.new_classes.size(),
                         derive_seed(cfg.seed, "head/" + std::to_string(session)));

  std::vector<signal::Spectrogram> specs;
  std::vector<ClassId> labels;
  for (const auto& item : update.items) {
    specs.push_back(*item.spec);
    labels.push_back(item.label);
  }
  const auto train = embedding::make_training_set(specs, labels);
  embedding::reset_centers(state.model, train, update.new_classes);

  UpdateSummary summary;
  const std::int64_t start = state.model.step_count;
  embedding::TrainOptions opts;
  opts.learning_rate = cfg.learning_rate;
  opts.batch_size = cfg.batch_size;
  opts.balance_classes = true;
  opts.max_step_count = start + cfg.max_update_steps;
  double previous = std::numeric_limits<double>::infinity();
  int since = 0;
  for (int epoch = 0; epoch < cfg.fine_tune_epochs; ++epoch) {
    opts.shuffle_seed =
        derive_seed(cfg.seed, "update/" + std::to_string(session) + "/" + std::to_string(epoch));
    const auto es = embedding::train_epoch(state.model, train, cfg.loss, opts);
    ++summary.epochs;
    summary.final_loss = es.mean_loss.total;
    if (std::abs(es.mean_loss.total - previous) > cfg.plateau_tolerance) {
      since = 0;
    } else if (++since >= cfg.plateau_patience) {
      break;
    }
    previous = es.mean_loss.total;
  }
  summary.steps = state.model.step_count - start;
  if (summary.steps > cfg.max_update_steps) {
    fail(ErrorKind::kBudgetExceeded, "incremental update used " + std::to_string(summary.steps) +
                                         " optimizer steps > cap " + std::to_string(cfg.max_update_steps));
  }
  state.update_steps.push_back(summary.steps);

  // Refit statistics and refresh memory on the updated encoder.
  std::map<ClassId, std::vector<Exemplar>> pools;
  for (const auto& [id, ex] : state.memory.classes()) pools[id] = ex;
  for (std::size_t c = 0; c < update.clusters.size(); ++c) {
    auto& pool = pools[update.new_classes[c]];
    for (const auto& m : update.clusters[c].members) pool.push_back({m.spec, m.z, m.arrival, m.truth});
  }
  std::vector<openset::ClassStatistics> refit;
  const std::size_t quota = state.memory.quota(state.registry.size());
  ReplayMemory refreshed(state.memory.capacity(), state.memory.per_class_cap());
  for (const auto& entry : state.registry) {
    auto it = pools.find(entry.id);
    std::vector<Exemplar> pool = it == pools.end() ? std::vector<Exemplar>{} : std::move(it->second);
    std::vector<SpectrogramRef> refs;
    for (const auto& e : pool) refs.push_back(e.spec);
    const Eigen::MatrixXd z = embed_all(state.model, refs);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].z = z.col(static_cast<Eigen::Index>(i));

    if (pool.size() >= 2) {
      refit.push_back(openset::fit_single_class(entry.id, z, cfg.shrinkage));
    } else {
      const bool is_new = std::find(update.new_classes.begin(), update.new_classes.end(), entry.id) !=
                          update.new_classes.end();
      if (is_new) {
        fail(ErrorKind::kInvalidInput, "class " + to_string(entry.id) + " has " +
                                           std::to_string(pool.size()) +
                                           " sample(s) after the update; statistics need 2");
      }
      refit.push_back(state.stats[static_cast<std::size_t>(to_int(entry.id))]);
      summary.stale.push_back(entry.id);
    }
    if (!pool.empty()) refreshed.set(entry.id, pick(std::move(pool), quota));
  }
  state.stats = std::move(refit);
  state.memory = std::move(refreshed);
  state.stale_classes = summary.stale;
  state.check_invariants();

  nlohmann::ordered_json payload;
  payload["session"] = session;
  payload["noop"] = false;
  payload["new_classes"] = ids_json(update.new_classes);
  payload["train_size"] = {update.old_count, update.new_count};
  payload["epochs"] = summary.epochs;
  payload["steps"] = summary.steps;
  payload["final_loss"] = summary.final_loss;
  payload["stale_classes"] = ids_json(summary.stale);
  payload["memory"] = state.memory.total();
  std::size_t largest = 0;
  for (const auto& [id, ex] : state.memory.classes()) largest = std::max(largest, ex.size());
  payload["memory_max_per_class"] = largest;
  state.log.append("update-summary", std::move(payload));
  return summary;
}

}  // namespace owr::incremental

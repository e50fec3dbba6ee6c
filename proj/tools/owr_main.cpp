#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "owr/binary_io.hpp"
#include "owr/checkpoint.hpp"
#include "owr/config.hpp"
#include "owr/error.hpp"
#include "owr/pipeline.hpp"
#include "owr/seed.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace owr;

namespace {

bool g_verbose = false;

void say(const std::string& msg) {
  if (g_verbose) std::cerr << "[owr] " << msg << '\n';
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Collects everything a command writes, then describes it in run_manifest.json.
class RunDir {
 public:
  RunDir(fs::path root, std::string command) : root_(std::move(root)), command_(std::move(command)) {
    fs::create_directories(root_);
  }

  const fs::path& root() const { return root_; }

  void text(const std::string& name, const std::string& content) {
    write_text_atomic(root_ / name, content);
    record(name);
  }

  void record(const std::string& name) { files_.push_back(name); }

  void finish(const PipelineConfig& cfg, double seconds) {
    json timing;
    timing["command"] = command_;
    timing["wall_time_s"] = seconds;
    write_text_atomic(root_ / "timing.json", timing.dump(2) + "\n");

    json m;
    m["command"] = command_;
    m["seed"] = cfg.seed;
    auto files = json::array();
    for (const auto& name : files_) {
      const auto bytes = read_file(root_ / name);
      json f;
      f["path"] = name;
      f["bytes"] = bytes.size();
      f["fnv1a64"] = hex64(fnv1a64(std::string_view(bytes.data(), bytes.size())));
      files.push_back(f);
    }
    m["files"] = files;
    m["volatile"] = json::array({"timing.json"});
    write_text_atomic(root_ / "run_manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::string command_;
  std::vector<std::string> files_;
};

fs::path data_dir(const std::string& flag, const PipelineConfig& cfg) {
  fs::path p = flag.empty() ? cfg.data_dir : fs::path(flag);
  if (p.empty()) fail(ErrorKind::kConfig, "no dataset directory: pass --data or set [paths] data");
  if (!fs::exists(p)) fail(ErrorKind::kMissingArtifact, "dataset directory not found: " + p.string());
  return p;
}

Checkpoint require_checkpoint(const std::string& path) {
  if (path.empty()) fail(ErrorKind::kMissingArtifact, "--checkpoint is required");
  return load_checkpoint(path);
}

std::string class_name(const Checkpoint& ck, ClassId id) {
  if (id == kUnknownClass) return evaluation::kUnknownColumn;
  return ck.classes.at(static_cast<std::size_t>(to_int(id))).name;
}

json eval_json(const Checkpoint& ck, const pipeline::Samples& samples, RunDir& run,
               const std::string& prefix) {
  const auto closed = pipeline::evaluate(ck, samples, pipeline::PredictMode::kHead);
  const auto open = pipeline::evaluate(ck, samples, pipeline::PredictMode::kGate);
  run.text(prefix + "confusion_closed.csv", closed.confusion_csv());
  run.text(prefix + "confusion_open.csv", open.confusion_csv());

  const Eigen::MatrixXd z = pipeline::embed_rows(ck.state, samples);
  if (z.rows() >= 2) {
    const auto proj = evaluation::project_2d(z);
    const auto pred = pipeline::predict(ck.state, ck.stats, samples, pipeline::PredictMode::kGate);
    std::vector<std::string> truth, names;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      truth.push_back(*samples[i].truth);
      names.push_back(class_name(ck, pred[i]));
    }
    run.text(prefix + "projection.csv", evaluation::projection_csv(proj, truth, names));
  }
  json j;
  j["samples"] = samples.size();
  j["closed_set"] = closed.to_json();
  j["open_set"] = open.to_json();
  return j;
}

json registry_json(const std::vector<ClassEntry>& classes) {
  auto arr = json::array();
  for (const auto& c : classes) {
    json e;
    e["id"] = to_int(c.id);
    e["name"] = c.name;
    e["provenance"] = c.provenance;
    e["majority_truth"] = c.majority_truth ? json(*c.majority_truth) : json(nullptr);
    arr.push_back(e);
  }
  return arr;
}

void cmd_generate(const PipelineConfig& cfg, RunDir& run) {
  const auto items = pipeline::synthesize_dataset(cfg);
  say("writing " + std::to_string(items.size()) + " bursts");
  for (const auto& name : pipeline::write_dataset(run.root(), items)) run.record(name);
}

void cmd_train(const PipelineConfig& cfg, RunDir& run, const std::string& data_flag) {
  const auto items = pipeline::load_dataset(data_dir(data_flag, cfg), {pipeline::kSplitTrain});
  const auto training = pipeline::to_samples(items, cfg);
  say("training on " + std::to_string(training.size()) + " samples");
  std::string log;
  const auto model = pipeline::train_encoder(training, cfg, [&](int epoch, const embedding::EpochStats& s) {
    json j;
    j["epoch"] = epoch;
    j["loss"] = s.mean_loss.total;
    j["center"] = s.mean_loss.center;
    j["separation"] = s.mean_loss.separation;
    j["cross_entropy"] = s.mean_loss.cross_entropy;
    j["train_accuracy"] = s.train_accuracy;
    log += j.dump() + "\n";
    say("epoch " + std::to_string(epoch) + " loss " + std::to_string(s.mean_loss.total));
  });
  run.text("train_log.jsonl", log);
  const auto state = incremental::start_session(model, training, cfg.session());
  save_checkpoint(run.root() / "model.owck", state.checkpoint());
  run.record("model.owck");
}

void cmd_eval(const PipelineConfig& cfg, RunDir& run, const std::string& data_flag,
              const std::string& ckpt, const std::string& split) {
  const auto ck = require_checkpoint(ckpt);
  const auto items = pipeline::load_dataset(data_dir(data_flag, cfg), {split});
  const auto samples = pipeline::to_samples(items, cfg);
  require(!samples.empty(), ErrorKind::kInvalidInput, "split '" + split + "' has no samples");
  json report;
  report["split"] = split;
  report["classes"] = registry_json(ck.classes);
  report["evaluation"] = eval_json(ck, samples, run, "");
  run.text("report.json", report.dump(2) + "\n");
}

void write_discovery(RunDir& run, const incremental::DiscoveryRecord& rec) {
  const auto tag = std::to_string(rec.session);
  incremental::save_buffer(run.root() / ("buffer_" + tag + ".owub"), rec.session, rec.buffer);
  run.record("buffer_" + tag + ".owub");
  run.text("cluster_report_" + tag + ".json", rec.report.to_json().dump(2) + "\n");
  run.text("cluster_scores_" + tag + ".csv", rec.report.score_table_csv());
}

void cmd_stream(const PipelineConfig& cfg, RunDir& run, const std::string& data_flag,
                const std::string& ckpt) {
  auto ck = require_checkpoint(ckpt);
  const auto root = data_dir(data_flag, cfg);
  const auto all = pipeline::load_dataset(root);
  const auto training = pipeline::select_split(all, pipeline::kSplitTrain, false, cfg);
  const auto stream = pipeline::stream_samples(all, cfg);
  auto eval = pipeline::select_split(all, pipeline::kSplitEval, false, cfg);
  const auto eval_new = pipeline::select_split(all, pipeline::kSplitEval, true, cfg);
  eval.insert(eval.end(), eval_new.begin(), eval_new.end());

  const auto scfg = cfg.session();
  auto state = incremental::resume_session(std::move(ck), training, scfg);
  say("streaming " + std::to_string(stream.size()) + " samples");
  const auto decisions = incremental::process_stream(
      state, stream, scfg, [&](const incremental::SessionState& st, const incremental::DiscoveryRecord& rec) {
        write_discovery(run, rec);
        const auto name = "checkpoint_" + std::to_string(rec.session) + ".owck";
        save_checkpoint(run.root() / name, st.checkpoint());
        run.record(name);
        say("discovery " + std::to_string(rec.session) + ": k*=" + std::to_string(rec.report.k_star) +
            ", new classes " + std::to_string(rec.new_classes.size()));
      });
  state.check_invariants();
  run.text("session_log.jsonl", state.log.text());
  const auto final_ck = state.checkpoint();
  save_checkpoint(run.root() / "final.owck", final_ck);
  run.record("final.owck");

  std::size_t rejected = 0;
  for (const auto& d : decisions) rejected += d.accepted ? 0 : 1;
  json report;
  report["stream_samples"] = decisions.size();
  report["rejected"] = rejected;
  report["discoveries"] = state.discoveries.size();
  if (state.discoveries.empty()) report["note"] = "no discovery triggered";
  auto steps = json::array();
  for (auto s : state.update_steps) steps.push_back(s);
  report["update_steps"] = steps;
  report["budget"] = {{"max_update_steps", scfg.max_update_steps},
                      {"memory_capacity", scfg.memory_capacity},
                      {"old_max", scfg.old_max},
                      {"memory_used", state.memory.total()}};
  report["classes"] = registry_json(final_ck.classes);
  if (!eval.empty()) report["evaluation"] = eval_json(final_ck, eval, run, "");
  run.text("report.json", report.dump(2) + "\n");
}

void cmd_discover(const PipelineConfig& cfg, RunDir& run, const std::string& buffer_path) {
  if (buffer_path.empty()) fail(ErrorKind::kMissingArtifact, "--buffer is required");
  const auto saved = incremental::load_buffer(buffer_path);
  const auto report = incremental::discover_buffer(saved.entries, saved.session, cfg.session());
  run.text("cluster_report.json", report.to_json().dump(2) + "\n");
  run.text("cluster_scores.csv", report.score_table_csv());
}

int report_error(ErrorKind kind, const std::string& message) {
  json j;
  j["error"] = {{"kind", to_string(kind)}, {"message", message}, {"exit_code", exit_code(kind)}};
  std::cerr << j.dump() << '\n';
  return exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental open-set RF emitter recognition"};
  app.require_subcommand(1);
  std::string config_path, out_dir, data_flag, ckpt, split = pipeline::kSplitEval, buffer;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "pipeline config (INI)")->required();
  app.add_option("--out", out_dir, "run directory")->required();
  app.add_option("--seed", seed, "overrides [seeds] root");
  app.add_flag("--verbose", g_verbose, "progress on stderr");

  auto* gen = app.add_subcommand("generate", "synthesize a labelled I/Q dataset");
  auto* train = app.add_subcommand("train", "train the encoder and fit class statistics");
  train->add_option("--data", data_flag, "dataset directory");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  eval->add_option("--data", data_flag, "dataset directory");
  eval->add_option("--checkpoint", ckpt, "checkpoint file");
  eval->add_option("--split", split, "train, stream or eval");
  auto* stream = app.add_subcommand("stream", "run an incremental session over the stream split");
  stream->add_option("--data", data_flag, "dataset directory");
  stream->add_option("--checkpoint", ckpt, "checkpoint file");
  auto* disc = app.add_subcommand("discover", "re-run discovery on a saved unknown buffer");
  disc->add_option("--buffer", buffer, "buffer file written by stream");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorKind::kConfig, e.what());
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto cfg = load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.validate();
    }
    std::string command = app.get_subcommands().front()->get_name();
    RunDir run(out_dir, command);
    run.text("config.ini", serialize_config(cfg));
    if (*gen) cmd_generate(cfg, run);
    else if (*train) cmd_train(cfg, run, data_flag);
    else if (*eval) cmd_eval(cfg, run, data_flag, ckpt, split);
    else if (*stream) cmd_stream(cfg, run, data_flag, ckpt);
    else if (*disc) cmd_discover(cfg, run, buffer);
    run.finish(cfg, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    say(command + " done");
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(ErrorKind::kIo, e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::kIo, e.what());
  }
  return 0;
}

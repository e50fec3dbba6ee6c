// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "owr/pipeline.hpp"
#include "scenarios.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace owr;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Budget observations gathered from every session the suite runs.
struct BudgetLedger {
  int checks = 0;
  std::vector<std::string> violations;

  void memory(const incremental::SessionState& st, const incremental::SessionConfig& cfg, const std::string& where) {
    ++checks;
    if (st.memory.total() > cfg.memory_capacity)
      violations.push_back(where + ": memory " + std::to_string(st.memory.total()));
    for (const auto& [id, ex] : st.memory.classes())
      if (ex.size() > cfg.old_max)
        violations.push_back(where + ": class " + std::to_string(to_int(id)) + " holds " + std::to_string(ex.size()));
  }
  void steps(std::int64_t used, std::int64_t cap, const std::string& where) {
    ++checks;
    if (used > cap) violations.push_back(where + ": " + std::to_string(used) + " steps > " + std::to_string(cap));
  }
};

BudgetLedger budgets;

void criterion_composite() {
  const double km = discovery::composite_score(0.444, 1399.6, 0.947, 0.698);
  const double gmm = discovery::composite_score(0.388, 1222.7, 1.234, 0.702);
  report(1, "composite score", std::abs(km - 0.770) <= 0.001 && std::abs(gmm - 0.682) <= 0.001,
         "K-Means row Q=" + fmt("%.4f", km) + ", GMM row Q=" + fmt("%.4f", gmm));
}

void criterion_replay(const fs::path& config_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(config_path);
  const auto items = pipeline::synthesize_dataset(cfg);
  const auto train = pipeline::select_split(items, pipeline::kSplitTrain, false, cfg);
  const auto stream = pipeline::stream_samples(items, cfg);
  auto eval = pipeline::select_split(items, pipeline::kSplitEval, false, cfg);
  const auto eval_new = pipeline::select_split(items, pipeline::kSplitEval, true, cfg);
  eval.insert(eval.end(), eval_new.begin(), eval_new.end());
  const auto model = pipeline::train_encoder(train, cfg);

  bool ok = cfg.signal.known.size() == 6 && cfg.signal.novel.size() == 2 &&
            cfg.signal.samples_per_class == 300 && cfg.signal.snr_db == std::vector<double>{20.0};
  std::string detail;
  for (std::size_t old_max : {0u, 5u, 10u}) {
    auto sc = cfg.session();
    sc.old_max = old_max;
    sc.n_min = incremental::kNeverTrigger;  // one update, from the end-of-stream flush
    auto st = incremental::start_session(model, train, sc);
    const std::string where = "replay old_max=" + std::to_string(old_max);
    incremental::process_stream(st, stream, sc, [&](const incremental::SessionState& s, const incremental::DiscoveryRecord&) {
      budgets.memory(s, sc, where);
    });
    budgets.memory(st, sc, where);
    for (auto used : st.update_steps) budgets.steps(used, sc.max_update_steps, where);
    const auto r = pipeline::evaluate(st.checkpoint(), eval, pipeline::PredictMode::kHead);
    const bool new_classes = st.registry.size() == 8;
    const bool shape = old_max == 0 ? r.acc_old <= 20.0 : (r.acc_old >= 95.0 && r.acc_new >= 90.0);
    ok = ok && new_classes && shape;
    detail += "old_max=" + std::to_string(old_max) + ": Acc_old " + fmt("%.1f", r.acc_old) + " Acc_new " +
              fmt("%.1f", r.acc_new) + (new_classes ? "" : " (classes " + std::to_string(st.registry.size()) + ")") + "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(2, "replay ablation", ok && secs < 300.0, detail + fmt("%.0f s", secs));
}

void criterion_gate() {
  double self = 0, self0 = 0, far = 1, inv = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    self = std::max(self, scenarios::self_rejection_rate(seed));
    self0 = std::max(self0, scenarios::self_rejection_rate(seed, 0.0));
    far = std::min(far, scenarios::far_class_rejection_rate(seed));
    inv = std::max(inv, scenarios::linear_invariance_error(seed));
  }
  report(3, "open-set gate", self <= 0.02 && self0 <= 0.02 && far >= 0.95 && inv <= 1e-6,
         "self-rejection " + fmt("%.1f%%", 100 * self) + " (lambda 0: " + fmt("%.1f%%", 100 * self0) +
             "), 10-sigma class rejected " + fmt("%.1f%%", 100 * far) + ", invariance error " + fmt("%.1e", inv));
}

void criterion_clustering(const fs::path& data_dir) {
  const auto corpus = scenarios::load_instances((data_dir / "small_2d_instances.txt").string());
  const auto km = scenarios::kmeans_vs_brute_force(corpus);
  const auto em = scenarios::em_monotonicity(corpus, 10);
  const auto [sil, oracle] = scenarios::collinear_silhouette();
  const bool ok = km.instances > 0 && km.mismatches == 0 && em.worst_drop <= 1e-9 && std::abs(sil - oracle) <= 1e-6;
  report(4, "clustering oracles", ok,
         "k-means optimal on " + std::to_string(km.instances - km.mismatches) + "/" + std::to_string(km.instances) +
             " instances, EM worst drop " + fmt("%.1e", em.worst_drop) + " over " + std::to_string(em.runs) +
             " runs, silhouette " + fmt("%.6f", sil) + " vs " + fmt("%.6f", oracle));
}

void criterion_gradient() {
  double worst = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) worst = std::max(worst, scenarios::gradient_check(seed));
  report(5, "gradient check", worst <= 1e-4, "worst relative error " + fmt("%.2e", worst));
}

void criterion_selection() {
  using namespace discovery;
  int passed = 0, total = 0;
  auto expect = [&](bool c) {
    ++total;
    passed += c ? 1 : 0;
  };
  const std::vector<int> k6{1, 2, 3, 4, 5, 6}, k4{1, 2, 3, 4};
  expect(detect_elbow(k6, std::vector<double>{100, 50, 25, 24, 23, 22}).k == 3);
  expect(detect_elbow(k4, std::vector<double>{90, 30, 28, 27}).k == 2);
  const auto lin = detect_elbow(k6, std::vector<double>{60, 50, 40, 30, 20, 10});
  expect(lin.k == 1 && lin.warning);
  const auto a = select_k_rule(3, 0.72, 5, 0.77);
  expect(a.k_star == 3 && a.rule == SelectionRule::kElbow);
  const auto b = select_k_rule(3, 0.60, 5, 0.77);
  expect(b.k_star == 5 && b.rule == SelectionRule::kScore);
  expect(select_k_rule(4, 0.1, 4, 0.9).k_star == 4);
  report(6, "selection rule", passed == total, std::to_string(passed) + "/" + std::to_string(total) + " cases exact");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OWR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// generate -> train -> stream through the command-line tool.
bool end_to_end(const fs::path& config, const fs::path& dir) {
  const std::string c = "--config " + config.string() + " --out ";
  return run_cli(c + (dir / "data").string() + " generate") == 0 &&
         run_cli(c + (dir / "train").string() + " train --data " + (dir / "data").string()) == 0 &&
         run_cli(c + (dir / "stream").string() + " stream --data " + (dir / "data").string() + " --checkpoint " +
                 (dir / "train" / "model.owck").string()) == 0;
}

void criterion_determinism_and_budget(const fs::path& config) {
  const auto a = testutil::scratch("accept_a"), b = testutil::scratch("accept_b");
  const bool ran = end_to_end(config, a) && end_to_end(config, b);
  std::size_t compared = 0;
  std::vector<std::string> differ;
  if (ran) {
    for (const auto* stage : {"data", "train", "stream"}) {
      const auto m = nlohmann::json::parse(slurp(a / stage / "run_manifest.json"));
      for (const auto& f : m["files"]) {
        const auto name = f["path"].get<std::string>();
        ++compared;
        if (slurp(a / stage / name) != slurp(b / stage / name)) differ.push_back(std::string(stage) + "/" + name);
      }
      if (slurp(a / stage / "run_manifest.json") != slurp(b / stage / "run_manifest.json"))
        differ.push_back(std::string(stage) + "/run_manifest.json");
    }
  }
  const auto stream_dir = a / "stream";
  const bool has_core = fs::exists(stream_dir / "session_log.jsonl") && fs::exists(stream_dir / "report.json") &&
                        fs::exists(stream_dir / "final.owck");
  report(7, "determinism", ran && has_core && differ.empty() && compared > 0,
         ran ? std::to_string(compared) + " files compared, " + std::to_string(differ.size()) + " differ" +
                   (differ.empty() ? "" : " (first: " + differ.front() + ")")
             : "end-to-end run failed");

  if (ran) {
    const auto r = nlohmann::json::parse(slurp(stream_dir / "report.json"));
    const auto& bud = r["budget"];
    ++budgets.checks;
    if (bud["memory_used"].get<std::size_t>() > bud["memory_capacity"].get<std::size_t>())
      budgets.violations.push_back("cli stream: memory");
    for (const auto& s : r["update_steps"]) budgets.steps(s.get<std::int64_t>(), bud["max_update_steps"].get<std::int64_t>(), "cli stream");
    // Every update the session logged.
    std::istringstream log(slurp(stream_dir / "session_log.jsonl"));
    for (std::string line; std::getline(log, line);) {
      const auto j = nlohmann::json::parse(line);
      if (j.value("event", "") != "update-summary" || j.value("noop", true)) continue;
      ++budgets.checks;
      if (j["memory"].get<std::size_t>() > bud["memory_capacity"].get<std::size_t>())
        budgets.violations.push_back("cli stream: session memory");
      if (j["memory_max_per_class"].get<std::size_t>() > bud["old_max"].get<std::size_t>())
        budgets.violations.push_back("cli stream: per-class memory");
      budgets.steps(j["steps"].get<std::int64_t>(), bud["max_update_steps"].get<std::int64_t>(), "cli stream log");
    }
  }

  // The cap is enforced, not only observed: a 2-step ceiling must abort the update.
  const auto tight = testutil::scratch("accept_tight") / "tight.ini";
  std::ofstream(tight) << slurp(config) << "\n[budget]\nmax_update_steps = 2\n";
  const auto tdir = testutil::scratch("accept_tight_run");
  std::string c = "--config " + tight.string() + " --out ";
  const int code = run_cli(c + (tdir / "stream").string() + " stream --data " + (a / "data").string() +
                           " --checkpoint " + (a / "train" / "model.owck").string());
  const bool enforced = code == 4;
  report(8, "budgets", ran && budgets.violations.empty() && enforced && budgets.checks > 0,
         std::to_string(budgets.checks) + " checks, " + std::to_string(budgets.violations.size()) +
             " violations" + (budgets.violations.empty() ? "" : " (" + budgets.violations.front() + ")") +
             ", step cap 2 exits with code " + std::to_string(code));
}

}  // namespace

int main() {
  const fs::path config = fs::path(OWR_SOURCE_DIR) / "configs" / "synthetic.ini";
  try {
    criterion_composite();
    criterion_replay(config);
    criterion_gate();
    criterion_clustering(fs::path(OWR_TEST_DATA_DIR));
    criterion_gradient();
    criterion_selection();
    criterion_determinism_and_budget(config);
  } catch (const std::exception& e) {
    std::cout << "FAIL  aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

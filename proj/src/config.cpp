#include "owr/config.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "owr/binary_io.hpp"
#include "owr/error.hpp"

namespace owr {

namespace pt = boost::property_tree;

namespace {

const std::string kProfilePrefix = "profile:";

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) out += fmt(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

// Reads one INI section and remembers which keys were consumed.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  template <class T>
  void read(const std::string& key, T& out) {
    const auto raw = take(key);
    if (!raw) return;
    out = convert<T>(key, *raw);
  }

  void read_list(const std::string& key, std::vector<double>& out) {
    if (auto raw = take(key)) {
      out.clear();
      for (const auto& item : split_list(*raw)) out.push_back(convert<double>(key, item));
    }
  }

  void read_list(const std::string& key, std::vector<std::size_t>& out) {
    if (auto raw = take(key)) {
      out.clear();
      for (const auto& item : split_list(*raw)) out.push_back(convert<std::size_t>(key, item));
    }
  }

  std::optional<std::string> take(const std::string& key) {
    if (!tree_) return std::nullopt;
    used_.insert(key);
    if (auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'))) return trim(*v);
    return std::nullopt;
  }

  void finish() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.contains(key)) fail(ErrorKind::kConfig, "unknown key '" + key + "' in [" + name_ + "]");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key, const std::string& raw) const {
    const std::string where = "[" + name_ + "] " + key + " = '" + raw + "'";
    try {
      std::size_t pos = 0;
      if constexpr (std::is_same_v<T, bool>) {
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        fail(ErrorKind::kConfig, where + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        return raw;
      } else if constexpr (std::is_floating_point_v<T>) {
        T v = static_cast<T>(std::stod(raw, &pos));
        if (pos == raw.size()) return v;
      } else if constexpr (std::is_signed_v<T>) {
        auto v = std::stoll(raw, &pos);
        if (pos == raw.size()) return static_cast<T>(v);
      } else {
        if (!raw.empty() && raw[0] != '-') {
          auto v = std::stoull(raw, &pos);
          if (pos == raw.size()) return static_cast<T>(v);
        }
      }
    } catch (const std::logic_error&) {
    }
    fail(ErrorKind::kConfig, where + ": not a valid value");
  }

  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> used_;
};

}  // namespace

std::size_t SignalSettings::n_frames() const {
  const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
  if (n < fft_size || frame_hop == 0) return 0;
  return (n - fft_size) / frame_hop + 1;
}

std::vector<signal::SynthClassProfile> builtin_profiles(std::size_t count, std::size_t first_index,
                                                        double sample_rate, double carrier_freq) {
  std::vector<signal::SynthClassProfile> out;
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = first_index + j;
    const double lane = static_cast<double>(i % 8);
    const double shift = static_cast<double>(i / 8) * 0.013;
    const double f1 = (0.04 + 0.055 * lane + shift) * sample_rate;
    signal::SynthClassProfile p;
    char name[32];
    std::snprintf(name, sizeof name, "emitter-%02zu", i);
    p.class_id = name;
    p.tone_set = {f1, f1 + 0.0275 * sample_rate};
    p.hop_period = i % 2 == 0 ? 256.0 / sample_rate : 0.0;
    p.bandwidth = 0.01 * sample_rate;
    p.burst_duty = 1.0 - 0.1 * static_cast<double>(i % 3);
    p.am_depth = 0.3 * static_cast<double>(i % 2);
    p.sample_rate = sample_rate;
    p.carrier_freq = carrier_freq;
    out.push_back(std::move(p));
  }
  return out;
}

embedding::EncoderConfig PipelineConfig::encoder() const {
  embedding::EncoderConfig e;
  e.n_frames = signal.n_frames();
  e.n_bins = signal.n_bins();
  e.hidden_widths = hidden_widths;
  e.embed_dim = embed_dim;
  e.activation = activation;
  e.seed = seed;
  return e;
}

incremental::SessionConfig PipelineConfig::session() const {
  incremental::SessionConfig s;
  s.loss = loss;
  s.learning_rate = incremental.learning_rate;
  s.batch_size = incremental.batch_size;
  s.fine_tune_epochs = incremental.fine_tune_epochs;
  s.plateau_tolerance = incremental.plateau_tolerance;
  s.plateau_patience = incremental.plateau_patience;
  s.old_max = incremental.old_max;
  s.new_max = incremental.new_max;
  s.memory_capacity = incremental.memory_capacity;
  s.n_min = incremental.n_min;
  s.max_update_steps = max_update_steps;
  s.shrinkage = shrinkage;
  s.discovery = discovery;
  s.truth_purity = incremental.truth_purity;
  s.flush_at_end = incremental.flush_at_end;
  s.seed = seed;
  return s;
}

void PipelineConfig::validate() const {
  const auto& s = signal;
  require(s.sample_rate > 0.0 && std::isfinite(s.sample_rate), ErrorKind::kConfig,
          "signal.sample_rate must be positive");
  require(s.duration > 0.0, ErrorKind::kConfig, "signal.duration must be positive");
  require(s.fft_size >= 2 && (s.fft_size & (s.fft_size - 1)) == 0, ErrorKind::kConfig,
          "signal.fft_size must be a power of two");
  require(s.frame_hop > 0 && s.frame_hop <= s.fft_size, ErrorKind::kConfig,
          "signal.frame_hop must lie in (0, fft_size]");
  require(s.n_frames() >= 1, ErrorKind::kConfig, "signal.duration is shorter than one FFT frame");
  require(!s.snr_db.empty(), ErrorKind::kConfig, "signal.snr_db needs at least one value");
  for (double v : s.snr_db) {
    require(!std::isnan(v) && v != -std::numeric_limits<double>::infinity(), ErrorKind::kConfig,
            "signal.snr_db values must be finite or inf");
  }
  require(s.samples_per_class >= 1, ErrorKind::kConfig, "signal.samples_per_class must be >= 1");
  require(s.train_fraction > 0.0 && s.stream_fraction >= 0.0 &&
              s.train_fraction + s.stream_fraction <= 1.0,
          ErrorKind::kConfig, "signal split fractions must be positive and sum to <= 1");
  require(s.known.size() >= 2, ErrorKind::kConfig, "need at least 2 known class profiles");
  std::vector<signal::SynthClassProfile> all = s.known;
  all.insert(all.end(), s.novel.begin(), s.novel.end());
  for (const auto& p : all) {
    require(p.sample_rate == s.sample_rate, ErrorKind::kConfig,
            "profile " + p.class_id + " sample rate differs from signal.sample_rate");
  }
  try {
    signal::validate_profiles(all);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what());
  }
  try {
    encoder().validate();
    loss.validate();
    session().validate();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what());
  }
  require(train.learning_rate >= 0.0 && train.batch_size > 0 && train.epochs >= 0 &&
              train.warmup_epochs >= 0,
          ErrorKind::kConfig, "train settings out of range");
  require(max_update_steps >= 0, ErrorKind::kConfig, "budget.max_update_steps must be >= 0");
  if (!data_dir.empty()) {
    require(std::filesystem::exists(data_dir.parent_path()) || data_dir.parent_path().empty(),
            ErrorKind::kConfig, "paths.data parent directory does not exist: " + data_dir.string());
  }
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::kConfig, std::string("config syntax: ") + e.what());
  }

  static const std::set<std::string> kSections = {"seeds",     "signal",      "encoder",
                                                  "loss",      "train",       "openset",
                                                  "discovery", "incremental", "budget",
                                                  "paths"};
  std::map<std::string, const pt::ptree*> sections;
  std::vector<std::pair<std::string, const pt::ptree*>> profiles;
  for (const auto& [name, child] : tree) {
    if (child.empty() && !child.data().empty()) {
      fail(ErrorKind::kConfig, "key '" + name + "' appears outside any section");
    }
    if (name.rfind(kProfilePrefix, 0) == 0) {
      profiles.emplace_back(name.substr(kProfilePrefix.size()), &child);
    } else if (kSections.contains(name)) {
      sections[name] = &child;
    } else {
      fail(ErrorKind::kConfig, "unknown section [" + name + "]");
    }
  }
  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    return Section(name, it == sections.end() ? nullptr : it->second);
  };

  PipelineConfig c;
  {
    auto s = section("seeds");
    s.read("root", c.seed);
    s.finish();
  }
  std::size_t known_classes = 6, novel_classes = 2;
  {
    auto s = section("signal");
    auto& g = c.signal;
    s.read("sample_rate", g.sample_rate);
    s.read("carrier_freq", g.carrier_freq);
    s.read("duration", g.duration);
    s.read("fft_size", g.fft_size);
    s.read("frame_hop", g.frame_hop);
    if (auto w = s.take("window")) {
      try {
        g.window = signal::parse_window(*w);
      } catch (const Error& e) {
        fail(ErrorKind::kConfig, e.what());
      }
    }
    s.read_list("snr_db", g.snr_db);
    s.read("samples_per_class", g.samples_per_class);
    s.read("train_fraction", g.train_fraction);
    s.read("stream_fraction", g.stream_fraction);
    s.read("known_classes", known_classes);
    s.read("novel_classes", novel_classes);
    s.finish();
  }
  if (profiles.empty()) {
    c.signal.known = builtin_profiles(known_classes, 0, c.signal.sample_rate, c.signal.carrier_freq);
    c.signal.novel =
        builtin_profiles(novel_classes, known_classes, c.signal.sample_rate, c.signal.carrier_freq);
  } else {
    for (const auto& [id, tree_ptr] : profiles) {
      Section s(kProfilePrefix + id, tree_ptr);
      signal::SynthClassProfile p;
      p.class_id = id;
      p.sample_rate = c.signal.sample_rate;
      p.carrier_freq = c.signal.carrier_freq;
      std::string role = "known";
      s.read("role", role);
      s.read_list("tones", p.tone_set);
      s.read("hop_period", p.hop_period);
      s.read("bandwidth", p.bandwidth);
      s.read("burst_duty", p.burst_duty);
      s.read("am_depth", p.am_depth);
      s.read("carrier_freq", p.carrier_freq);
      s.finish();
      if (role == "known") c.signal.known.push_back(std::move(p));
      else if (role == "novel") c.signal.novel.push_back(std::move(p));
      else fail(ErrorKind::kConfig, "[profile:" + id + "] role must be known or novel");
    }
  }
  {
    auto s = section("encoder");
    s.read_list("hidden", c.hidden_widths);
    s.read("embed_dim", c.embed_dim);
    if (auto a = s.take("activation")) {
      try {
        c.activation = embedding::parse_activation(*a);
      } catch (const Error& e) {
        fail(ErrorKind::kConfig, e.what());
      }
    }
    s.finish();
  }
  {
    auto s = section("loss");
    s.read("center", c.loss.eta1);
    s.read("separation", c.loss.eta2);
    s.read("cross_entropy", c.loss.eta3);
    s.read("margin", c.loss.margin);
    s.finish();
  }
  {
    auto s = section("train");
    s.read("learning_rate", c.train.learning_rate);
    s.read("batch_size", c.train.batch_size);
    s.read("epochs", c.train.epochs);
    s.read("warmup_epochs", c.train.warmup_epochs);
    s.finish();
  }
  {
    auto s = section("openset");
    s.read("shrinkage", c.shrinkage);
    s.finish();
  }
  {
    auto s = section("discovery");
    auto& d = c.discovery;
    s.read("k_max", d.k_max);
    s.read("pca_threshold_dim", d.pca_threshold_dim);
    s.read("pca_target_dim", d.pca_target_dim);
    s.read("elbow_tolerance", d.elbow_tolerance);
    s.read("purity_threshold", d.tau_p);
    s.read("s_min", d.s_min);
    s.read("s_max", d.s_max);
    s.read("em_max_iters", d.em_max_iters);
    s.read("em_tol", d.em_tol);
    s.read("kmeans_restarts", d.kmeans_restarts);
    s.read("min_samples", d.min_samples);
    s.read("q_min", d.q_min);
    s.finish();
  }
  {
    auto s = section("incremental");
    auto& n = c.incremental;
    s.read("n_min", n.n_min);
    s.read("old_max", n.old_max);
    s.read("new_max", n.new_max);
    s.read("memory_capacity", n.memory_capacity);
    s.read("learning_rate", n.learning_rate);
    s.read("batch_size", n.batch_size);
    s.read("fine_tune_epochs", n.fine_tune_epochs);
    s.read("plateau_tolerance", n.plateau_tolerance);
    s.read("plateau_patience", n.plateau_patience);
    s.read("truth_purity", n.truth_purity);
    s.read("flush_at_end", n.flush_at_end);
    s.finish();
  }
  {
    auto s = section("budget");
    s.read("max_update_steps", c.max_update_steps);
    s.finish();
  }
  {
    auto s = section("paths");
    if (auto d = s.take("data"); d && !d->empty()) {
      std::filesystem::path p(*d);
      c.data_dir = p.is_absolute() || base_dir.empty() ? p : (base_dir / p).lexically_normal();
    }
    s.finish();
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::kConfig, "config file not found: " + path.string());
  }
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()),
                      std::filesystem::absolute(path).parent_path());
}

std::string serialize_config(const PipelineConfig& c) {
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };

  o << "[seeds]\n";
  kv("root", std::to_string(c.seed));

  const auto& g = c.signal;
  o << "\n[signal]\n";
  kv("sample_rate", fmt(g.sample_rate));
  kv("carrier_freq", fmt(g.carrier_freq));
  kv("duration", fmt(g.duration));
  kv("fft_size", std::to_string(g.fft_size));
  kv("frame_hop", std::to_string(g.frame_hop));
  kv("window", signal::window_name(g.window));
  kv("snr_db", join(g.snr_db));
  kv("samples_per_class", std::to_string(g.samples_per_class));
  kv("train_fraction", fmt(g.train_fraction));
  kv("stream_fraction", fmt(g.stream_fraction));

  auto profile = [&](const signal::SynthClassProfile& p, const char* role) {
    o << "\n[" << kProfilePrefix << p.class_id << "]\n";
    kv("role", role);
    kv("tones", join(p.tone_set));
    kv("hop_period", fmt(p.hop_period));
    kv("bandwidth", fmt(p.bandwidth));
    kv("burst_duty", fmt(p.burst_duty));
    kv("am_depth", fmt(p.am_depth));
    kv("carrier_freq", fmt(p.carrier_freq));
  };
  for (const auto& p : g.known) profile(p, "known");
  for (const auto& p : g.novel) profile(p, "novel");

  o << "\n[encoder]\n";
  kv("hidden", join(c.hidden_widths));
  kv("embed_dim", std::to_string(c.embed_dim));
  kv("activation", embedding::activation_name(c.activation));

  o << "\n[loss]\n";
  kv("center", fmt(c.loss.eta1));
  kv("separation", fmt(c.loss.eta2));
  kv("cross_entropy", fmt(c.loss.eta3));
  kv("margin", fmt(c.loss.margin));

  o << "\n[train]\n";
  kv("learning_rate", fmt(c.train.learning_rate));
  kv("batch_size", std::to_string(c.train.batch_size));
  kv("epochs", std::to_string(c.train.epochs));
  kv("warmup_epochs", std::to_string(c.train.warmup_epochs));

  o << "\n[openset]\n";
  kv("shrinkage", fmt(c.shrinkage));

  const auto& d = c.discovery;
  o << "\n[discovery]\n";
  kv("k_max", std::to_string(d.k_max));
  kv("pca_threshold_dim", std::to_string(d.pca_threshold_dim));
  kv("pca_target_dim", std::to_string(d.pca_target_dim));
  kv("elbow_tolerance", fmt(d.elbow_tolerance));
  kv("purity_threshold", fmt(d.tau_p));
  kv("s_min", std::to_string(d.s_min));
  kv("s_max", std::to_string(d.s_max));
  kv("em_max_iters", std::to_string(d.em_max_iters));
  kv("em_tol", fmt(d.em_tol));
  kv("kmeans_restarts", std::to_string(d.kmeans_restarts));
  kv("min_samples", std::to_string(d.min_samples));
  kv("q_min", fmt(d.q_min));

  const auto& n = c.incremental;
  o << "\n[incremental]\n";
  kv("n_min", std::to_string(n.n_min));
  kv("old_max", std::to_string(n.old_max));
  kv("new_max", std::to_string(n.new_max));
  kv("memory_capacity", std::to_string(n.memory_capacity));
  kv("learning_rate", fmt(n.learning_rate));
  kv("batch_size", std::to_string(n.batch_size));
  kv("fine_tune_epochs", std::to_string(n.fine_tune_epochs));
  kv("plateau_tolerance", fmt(n.plateau_tolerance));
  kv("plateau_patience", std::to_string(n.plateau_patience));
  kv("truth_purity", b(n.truth_purity));
  kv("flush_at_end", b(n.flush_at_end));

  o << "\n[budget]\n";
  kv("max_update_steps", std::to_string(c.max_update_steps));

  o << "\n[paths]\n";
  kv("data", c.data_dir.string());
  return o.str();
}

}  // namespace owr

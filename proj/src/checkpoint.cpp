#include "owr/checkpoint.hpp"

#include "owr/binary_io.hpp"
#include "owr/error.hpp"

namespace owr {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

void put_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
  w.put_span<double>(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

Eigen::VectorXd get_vector(ByteReader& r, Eigen::Index expected) {
  const auto n = r.get<std::uint64_t>();
  require(static_cast<Eigen::Index>(n) == expected, ErrorKind::kInvalidInput,
          "checkpoint parameter block has " + std::to_string(n) + " values, expected " +
              std::to_string(expected));
  Eigen::VectorXd v(expected);
  r.get_into<double>(std::span<double>(v.data(), static_cast<std::size_t>(expected)));
  return v;
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  const auto& cfg = ck.state.config;
  ByteWriter w;
  w.magic("OWCK");
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.n_frames));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.n_bins));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.hidden_widths.size()));
  for (auto h : cfg.hidden_widths) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.embed_dim));
  w.put<std::uint8_t>(cfg.activation == embedding::Activation::kRelu ? 0 : 1);
  w.put<std::uint64_t>(cfg.seed);
  w.put<std::int64_t>(ck.state.step_count);

  require(ck.classes.size() == ck.state.num_classes(), ErrorKind::kInvalidInput,
          "checkpoint class table does not match head size");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.classes.size()));
  for (const auto& c : ck.classes) {
    w.put<std::int32_t>(to_int(c.id));
    w.put_string(c.name);
    w.put_string(c.provenance);
    w.put<std::uint8_t>(c.majority_truth ? 1 : 0);
    if (c.majority_truth) w.put_string(*c.majority_truth);
  }

  put_vector(w, ck.state.params.flatten());
  put_vector(w, ck.state.adam_m.flatten());
  put_vector(w, ck.state.adam_v.flatten());

  w.magic("STATS");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.stats.size()));
  for (const auto& s : ck.stats) {
    w.put<std::int32_t>(to_int(s.class_id));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.mu.size()));
    w.put_span<double>(std::span<const double>(s.mu.data(), static_cast<std::size_t>(s.mu.size())));
    w.put_span<double>(
        std::span<const double>(s.sigma.data(), static_cast<std::size_t>(s.sigma.size())));
    w.put<double>(s.tau);
    w.put<std::uint64_t>(s.n_samples);
    w.put<std::uint8_t>(s.degenerate ? 1 : 0);
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const char> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  r.expect_magic("OWCK");
  const auto version = r.get<std::uint16_t>();
  require(version == kCheckpointVersion, ErrorKind::kInvalidInput,
          source + ": unsupported checkpoint version " + std::to_string(version));

  embedding::EncoderConfig cfg;
  cfg.n_frames = r.get<std::uint32_t>();
  cfg.n_bins = r.get<std::uint32_t>();
  cfg.hidden_widths.resize(r.get<std::uint32_t>());
  for (auto& h : cfg.hidden_widths) h = r.get<std::uint32_t>();
  cfg.embed_dim = r.get<std::uint32_t>();
  cfg.activation = r.get<std::uint8_t>() == 0 ? embedding::Activation::kRelu : embedding::Activation::kTanh;
  cfg.seed = r.get<std::uint64_t>();
  cfg.validate();
  const auto step_count = r.get<std::int64_t>();

  Checkpoint ck;
  ck.classes.resize(r.get<std::uint32_t>());
  for (auto& c : ck.classes) {
    c.id = class_id(r.get<std::int32_t>());
    c.name = r.get_string();
    c.provenance = r.get_string();
    if (r.get<std::uint8_t>() != 0) c.majority_truth = r.get_string();
  }

  ck.state = embedding::init_state(cfg, ck.classes.size());
  ck.state.step_count = step_count;
  const auto n = ck.state.params.size();
  ck.state.params.unflatten(get_vector(r, n));
  ck.state.adam_m.unflatten(get_vector(r, n));
  ck.state.adam_v.unflatten(get_vector(r, n));

  r.expect_magic("STATS");
  const auto n_stats = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_stats; ++i) {
    const auto id = class_id(r.get<std::int32_t>());
    const auto d = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    Eigen::VectorXd mu(d);
    Eigen::MatrixXd sigma(d, d);
    r.get_into<double>(std::span<double>(mu.data(), static_cast<std::size_t>(d)));
    r.get_into<double>(std::span<double>(sigma.data(), static_cast<std::size_t>(d * d)));
    const double tau = r.get<double>();
    const auto count = r.get<std::uint64_t>();
    const bool degenerate = r.get<std::uint8_t>() != 0;
    ck.stats.push_back(openset::make_statistics(id, std::move(mu), std::move(sigma), tau,
                                                static_cast<std::size_t>(count), degenerate));
  }
  require(r.remaining() == 0, ErrorKind::kInvalidInput, source + ": trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_checkpoint(bytes, path.string());
}

}  // namespace owr

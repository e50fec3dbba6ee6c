#include "owr/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "owr/error.hpp"
#include "owr/seed.hpp"

namespace owr::embedding {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  fail(ErrorKind::kConfig, "unknown activation '" + name + "'");
}

std::string activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

std::vector<std::size_t> EncoderConfig::layer_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.push_back(input_dim());
  sizes.insert(sizes.end(), hidden_widths.begin(), hidden_widths.end());
  sizes.push_back(embed_dim);
  return sizes;
}

std::size_t EncoderConfig::encoder_parameter_count() const {
  const auto sizes = layer_sizes();
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
  return n;
}

void EncoderConfig::validate() const {
  require(n_frames > 0 && n_bins > 0, ErrorKind::kConfig, "encoder input dims must be positive");
  require(embed_dim >= 2, ErrorKind::kConfig, "embed_dim must be >= 2");
  require(!hidden_widths.empty(), ErrorKind::kConfig, "hidden_widths must be non-empty");
  for (auto w : hidden_widths) require(w > 0, ErrorKind::kConfig, "hidden width must be > 0");
}

void LossConfig::validate() const {
  require(eta1 >= 0.0 && eta2 >= 0.0 && eta3 >= 0.0, ErrorKind::kConfig,
          "loss weights must be non-negative");
  require(margin >= 0.0 && std::isfinite(margin), ErrorKind::kConfig, "margin must be >= 0");
}

Parameters Parameters::zeros_like() const {
  Parameters p;
  p.encoder = Eigen::VectorXd::Zero(encoder.size());
  p.head_w = Eigen::MatrixXd::Zero(head_w.rows(), head_w.cols());
  p.head_b = Eigen::VectorXd::Zero(head_b.size());
  p.centers = Eigen::MatrixXd::Zero(centers.rows(), centers.cols());
  return p;
}

Eigen::Index Parameters::size() const {
  return encoder.size() + head_w.size() + head_b.size() + centers.size();
}

Eigen::VectorXd Parameters::flatten() const {
  Eigen::VectorXd flat(size());
  flat << encoder, head_w.reshaped(), head_b, centers.reshaped();
  return flat;
}

void Parameters::unflatten(const Eigen::VectorXd& flat) {
  require(flat.size() == size(), ErrorKind::kInvalidInput, "flat parameter size mismatch");
  Eigen::Index off = 0;
  auto take = [&](Eigen::Index n) {
    auto seg = flat.segment(off, n);
    off += n;
    return seg;
  };
  encoder = take(encoder.size());
  head_w.reshaped() = take(head_w.size());
  head_b = take(head_b.size());
  centers.reshaped() = take(centers.size());
}

bool Parameters::all_finite() const {
  return encoder.allFinite() && head_w.allFinite() && head_b.allFinite() && centers.allFinite();
}

namespace {

struct LayerView {
  Eigen::Map<const Eigen::MatrixXd> w;
  Eigen::Map<const Eigen::VectorXd> b;
};

struct LayerSpan {
  Eigen::Index offset;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<LayerSpan> layer_spans(const EncoderConfig& cfg) {
  const auto sizes = cfg.layer_sizes();
  std::vector<LayerSpan> spans;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto rows = static_cast<Eigen::Index>(sizes[l + 1]);
    const auto cols = static_cast<Eigen::Index>(sizes[l]);
    spans.push_back({off, rows, cols});
    off += rows * (cols + 1);
  }
  return spans;
}

LayerView layer(const Eigen::VectorXd& flat, const LayerSpan& s) {
  return {Eigen::Map<const Eigen::MatrixXd>(flat.data() + s.offset, s.rows, s.cols),
          Eigen::Map<const Eigen::VectorXd>(flat.data() + s.offset + s.rows * s.cols, s.rows)};
}

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& x) {
  if (a == Activation::kRelu) return x.cwiseMax(0.0);
  return x.array().tanh().matrix();
}

// d act / d pre, evaluated elementwise and multiplied into `delta`.
void apply_activation_grad(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& delta) {
  if (a == Activation::kRelu) {
    delta.array() *= (pre.array() > 0.0).cast<double>();
  } else {
    delta.array() *= 1.0 - pre.array().tanh().square();
  }
}

struct ForwardPass {
  std::vector<Eigen::MatrixXd> pre;  // per layer
  std::vector<Eigen::MatrixXd> act;  // act[0] = input, act[L] = embeddings
};

ForwardPass forward(const TrainState& state, const Eigen::MatrixXd& inputs) {
  require(static_cast<std::size_t>(inputs.rows()) == state.config.input_dim(),
          ErrorKind::kInvalidInput,
          "input dimension " + std::to_string(inputs.rows()) + " does not match encoder input " +
              std::to_string(state.config.input_dim()));
  const auto spans = layer_spans(state.config);
  ForwardPass fp;
  fp.act.push_back(inputs);
  for (std::size_t l = 0; l < spans.size(); ++l) {
    const auto v = layer(state.params.encoder, spans[l]);
    Eigen::MatrixXd pre = v.w * fp.act.back();
    pre.colwise() += v.b;
    const bool last = l + 1 == spans.size();
    fp.act.push_back(last ? pre : activate(state.config.activation, pre));
    fp.pre.push_back(std::move(pre));
  }
  return fp;
}

void fill_uniform(double* data, Eigen::Index n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < n; ++i) data[i] = u(rng);
}

}  // namespace

TrainState init_state(const EncoderConfig& config, std::size_t num_classes) {
  config.validate();
  TrainState st;
  st.config = config;
  st.params.encoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config.encoder_parameter_count()));
  std::mt19937_64 rng(derive_seed(config.seed, "encoder/init"));
  for (const auto& s : layer_spans(config)) {
    fill_uniform(st.params.encoder.data() + s.offset, s.rows * s.cols,
                 1.0 / std::sqrt(static_cast<double>(s.cols)), rng);
  }
  const auto d = static_cast<Eigen::Index>(config.embed_dim);
  st.params.head_w.resize(0, d);
  st.params.head_b.resize(0);
  st.params.centers.resize(0, d);
  st.adam_m = st.params.zeros_like();
  st.adam_v = st.params.zeros_like();
  add_classes(st, num_classes, derive_seed(config.seed, "head/init"));
  return st;
}

void add_classes(TrainState& state, std::size_t count, std::uint64_t seed) {
  const auto d = state.params.head_w.cols();
  const auto old_c = state.params.head_w.rows();
  const auto new_c = old_c + static_cast<Eigen::Index>(count);
  std::mt19937_64 rng(seed);

  auto grow = [&](Parameters& p, bool init) {
    p.head_w.conservativeResize(new_c, d);
    p.head_b.conservativeResize(new_c);
    p.centers.conservativeResize(new_c, d);
    for (Eigen::Index r = old_c; r < new_c; ++r) {
      p.head_b(r) = 0.0;
      p.centers.row(r).setZero();
      if (init) {
        for (Eigen::Index c = 0; c < d; ++c) {
          p.head_w(r, c) = std::uniform_real_distribution<double>(
              -1.0 / std::sqrt(static_cast<double>(d)), 1.0 / std::sqrt(static_cast<double>(d)))(rng);
        }
      } else {
        p.head_w.row(r).setZero();
      }
    }
  };
  grow(state.params, true);
  grow(state.adam_m, false);
  grow(state.adam_v, false);
}

Eigen::VectorXd flatten_input(const signal::Spectrogram& spec) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(spec.values.size()));
  for (std::size_t i = 0; i < spec.values.size(); ++i) x(static_cast<Eigen::Index>(i)) = spec.values[i];
  return x;
}

Embedding encode(const TrainState& state, const signal::Spectrogram& spec) {
  require(spec.n_frames == state.config.n_frames && spec.n_bins == state.config.n_bins,
          ErrorKind::kInvalidInput,
          "spectrogram is " + std::to_string(spec.n_frames) + "x" + std::to_string(spec.n_bins) +
              " but encoder expects " + std::to_string(state.config.n_frames) + "x" +
              std::to_string(state.config.n_bins));
  Eigen::MatrixXd z = encode_batch(state, flatten_input(spec));
  return z.col(0);
}

Eigen::MatrixXd encode_batch(const TrainState& state, const Eigen::MatrixXd& inputs) {
  auto fp = forward(state, inputs);
  if (!fp.act.back().allFinite()) fail(ErrorKind::kNumerical, "encoder produced non-finite embedding");
  return std::move(fp.act.back());
}

Eigen::MatrixXd logits(const TrainState& state, const Eigen::MatrixXd& embeddings) {
  Eigen::MatrixXd out = state.params.head_w * embeddings;
  out.colwise() += state.params.head_b;
  return out;
}

LossBreakdown composite_loss(const Eigen::MatrixXd& embeddings, const Eigen::MatrixXd& logits,
                             std::span<const ClassId> labels, const Eigen::MatrixXd& centers,
                             const LossConfig& cfg, LossGradients* grads) {
  const auto batch = static_cast<Eigen::Index>(labels.size());
  require(batch > 0, ErrorKind::kInvalidInput, "composite_loss: empty batch");
  require(embeddings.cols() == batch && logits.cols() == batch, ErrorKind::kInvalidInput,
          "composite_loss: batch size mismatch");
  require(embeddings.rows() == centers.cols(), ErrorKind::kInvalidInput,
          "composite_loss: embedding/center dimension mismatch");
  require(logits.rows() == centers.rows(), ErrorKind::kInvalidInput,
          "composite_loss: logits/center class count mismatch");
  for (ClassId y : labels) {
    require(to_int(y) >= 0 && to_int(y) < centers.rows(), ErrorKind::kInvalidInput,
            "composite_loss: unknown label " + to_string(y));
  }

  if (grads) {
    grads->d_embeddings = Eigen::MatrixXd::Zero(embeddings.rows(), batch);
    grads->d_logits = Eigen::MatrixXd::Zero(logits.rows(), batch);
    grads->d_centers = Eigen::MatrixXd::Zero(centers.rows(), centers.cols());
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  LossBreakdown out;

  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto y = to_int(labels[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd diff = embeddings.col(i) - centers.row(y).transpose();
    out.center += diff.squaredNorm();
    if (grads) {
      grads->d_embeddings.col(i) += (cfg.eta1 * 2.0 * inv_b) * diff;
      grads->d_centers.row(y) -= (cfg.eta1 * 2.0 * inv_b) * diff.transpose();
    }
  }
  out.center *= inv_b;

  std::set<std::int32_t> present;
  for (ClassId y : labels) present.insert(to_int(y));
  const std::vector<std::int32_t> cls(present.begin(), present.end());
  if (cls.size() >= 2) {
    const double pairs = static_cast<double>(cls.size() * (cls.size() - 1) / 2);
    for (std::size_t a = 0; a < cls.size(); ++a) {
      for (std::size_t b = a + 1; b < cls.size(); ++b) {
        const Eigen::VectorXd delta = (centers.row(cls[a]) - centers.row(cls[b])).transpose();
        const double dist = delta.norm();
        if (dist >= cfg.margin) continue;
        const double hinge = cfg.margin - dist;
        out.separation += hinge * hinge;
        if (grads && dist > 0.0) {
          const Eigen::VectorXd g = (-2.0 * hinge / (dist * pairs)) * delta;
          grads->d_centers.row(cls[a]) += cfg.eta2 * g.transpose();
          grads->d_centers.row(cls[b]) -= cfg.eta2 * g.transpose();
        }
      }
    }
    out.separation /= pairs;
  }

  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto y = to_int(labels[static_cast<std::size_t>(i)]);
    const auto col = logits.col(i);
    const double mx = col.maxCoeff();
    const Eigen::VectorXd e = (col.array() - mx).exp().matrix();
    const double sum = e.sum();
    out.cross_entropy += (mx + std::log(sum)) - col(y);
    if (grads) {
      Eigen::VectorXd p = e / sum;
      p(y) -= 1.0;
      grads->d_logits.col(i) = (cfg.eta3 * inv_b) * p;
    }
  }
  out.cross_entropy *= inv_b;

  out.total = cfg.eta1 * out.center + cfg.eta2 * out.separation + cfg.eta3 * out.cross_entropy;
  return out;
}

namespace {

struct BatchResult {
  LossBreakdown loss;
  std::size_t correct = 0;
};

BatchResult batch_loss(const TrainState& state, const Eigen::MatrixXd& inputs,
                       std::span<const ClassId> labels, const LossConfig& cfg, Parameters* grad) {
  require(static_cast<std::size_t>(inputs.cols()) == labels.size(), ErrorKind::kInvalidInput,
          "inputs/labels size mismatch");
  const auto fp = forward(state, inputs);
  const Eigen::MatrixXd& z = fp.act.back();
  const Eigen::MatrixXd lg = logits(state, z);

  BatchResult res;
  for (Eigen::Index i = 0; i < lg.cols(); ++i) {
    Eigen::Index best = 0;
    lg.col(i).maxCoeff(&best);
    if (best == to_int(labels[static_cast<std::size_t>(i)])) ++res.correct;
  }

  LossGradients lgrad;
  res.loss = composite_loss(z, lg, labels, state.params.centers, cfg, grad ? &lgrad : nullptr);
  if (!grad) return res;

  *grad = state.params.zeros_like();
  grad->head_w = lgrad.d_logits * z.transpose();
  grad->head_b = lgrad.d_logits.rowwise().sum();
  grad->centers = lgrad.d_centers;

  Eigen::MatrixXd delta = lgrad.d_embeddings + state.params.head_w.transpose() * lgrad.d_logits;
  const auto spans = layer_spans(state.config);
  for (std::size_t l = spans.size(); l-- > 0;) {
    const auto& s = spans[l];
    Eigen::Map<Eigen::MatrixXd> dw(grad->encoder.data() + s.offset, s.rows, s.cols);
    Eigen::Map<Eigen::VectorXd> db(grad->encoder.data() + s.offset + s.rows * s.cols, s.rows);
    dw.noalias() = delta * fp.act[l].transpose();
    db = delta.rowwise().sum();
    if (l == 0) break;
    const auto v = layer(state.params.encoder, s);
    Eigen::MatrixXd next = v.w.transpose() * delta;
    apply_activation_grad(state.config.activation, fp.pre[l - 1], next);
    delta = std::move(next);
  }
  return res;
}

void adam_step(Eigen::Ref<Eigen::VectorXd> p, Eigen::Ref<Eigen::VectorXd> m,
               Eigen::Ref<Eigen::VectorXd> v, const Eigen::Ref<const Eigen::VectorXd>& g,
               const TrainOptions& o, double bc1, double bc2) {
  m = o.beta1 * m + (1.0 - o.beta1) * g;
  v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double mhat = m(i) / bc1;
    const double vhat = v(i) / bc2;
    p(i) -= o.learning_rate * (mhat / (std::sqrt(vhat) + o.adam_epsilon));
  }
}

void apply_adam(TrainState& st, const Parameters& g, const TrainOptions& o) {
  st.step_count += 1;
  const double t = static_cast<double>(st.step_count);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  adam_step(st.params.encoder, st.adam_m.encoder, st.adam_v.encoder, g.encoder, o, bc1, bc2);
  adam_step(st.params.head_w.reshaped(), st.adam_m.head_w.reshaped(), st.adam_v.head_w.reshaped(),
            g.head_w.reshaped(), o, bc1, bc2);
  adam_step(st.params.head_b, st.adam_m.head_b, st.adam_v.head_b, g.head_b, o, bc1, bc2);
  adam_step(st.params.centers.reshaped(), st.adam_m.centers.reshaped(),
            st.adam_v.centers.reshaped(), g.centers.reshaped(), o, bc1, bc2);
}

std::vector<std::size_t> epoch_order(const TrainingSet& data, const TrainOptions& opts,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> order;
  if (!opts.balance_classes) {
    order.resize(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  } else {
    std::map<std::int32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[to_int(data.labels[i])].push_back(i);
    std::size_t target = 0;
    for (const auto& [_, idx] : by_class) target = std::max(target, idx.size());
    for (auto& [_, idx] : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < target; ++k) order.push_back(idx[k % idx.size()]);
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

LossBreakdown loss_and_gradient(const TrainState& state, const Eigen::MatrixXd& inputs,
                                std::span<const ClassId> labels, const LossConfig& cfg,
                                Parameters* grad) {
  return batch_loss(state, inputs, labels, cfg, grad).loss;
}

TrainingSet make_training_set(std::span<const signal::Spectrogram> specs,
                              std::span<const ClassId> labels) {
  require(specs.size() == labels.size(), ErrorKind::kInvalidInput,
          "spectrogram/label count mismatch");
  TrainingSet ts;
  if (specs.empty()) return ts;
  const auto dim = static_cast<Eigen::Index>(specs.front().values.size());
  ts.inputs.resize(dim, static_cast<Eigen::Index>(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(static_cast<Eigen::Index>(specs[i].values.size()) == dim, ErrorKind::kInvalidInput,
            "spectrograms in a training set must share one shape");
    ts.inputs.col(static_cast<Eigen::Index>(i)) = flatten_input(specs[i]);
  }
  ts.labels.assign(labels.begin(), labels.end());
  return ts;
}

EpochStats train_epoch(TrainState& state, const TrainingSet& data, const LossConfig& cfg,
                       const TrainOptions& opts) {
  cfg.validate();
  require(data.size() > 0, ErrorKind::kInvalidInput, "train_epoch: no training data");
  require(opts.batch_size > 0, ErrorKind::kConfig, "batch_size must be positive");
  require(opts.learning_rate >= 0.0, ErrorKind::kConfig, "learning rate must be >= 0");

  std::mt19937_64 rng(opts.shuffle_seed);
  const auto order = epoch_order(data, opts, rng);

  EpochStats stats;
  std::size_t seen = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t end = std::min(order.size(), start + opts.batch_size);
    const auto b = static_cast<Eigen::Index>(end - start);
    Eigen::MatrixXd x(data.inputs.rows(), b);
    std::vector<ClassId> y(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto src = order[start + static_cast<std::size_t>(i)];
      x.col(i) = data.inputs.col(static_cast<Eigen::Index>(src));
      y[static_cast<std::size_t>(i)] = data.labels[src];
    }

    Parameters grad;
    const auto res = batch_loss(state, x, y, cfg, &grad);
    const auto batch_index = std::to_string(stats.batches);
    require(std::isfinite(res.loss.center), ErrorKind::kNumerical,
            "non-finite L_cen in batch " + batch_index);
    require(std::isfinite(res.loss.separation), ErrorKind::kNumerical,
            "non-finite L_sep in batch " + batch_index);
    require(std::isfinite(res.loss.cross_entropy), ErrorKind::kNumerical,
            "non-finite L_CE in batch " + batch_index);
    if (opts.max_step_count >= 0 && state.step_count >= opts.max_step_count) {
      fail(ErrorKind::kBudgetExceeded,
           "optimizer step budget of " + std::to_string(opts.max_step_count) + " exhausted");
    }
    apply_adam(state, grad, opts);
    require(state.params.all_finite(), ErrorKind::kNumerical,
            "non-finite parameters after batch " + batch_index);

    stats.mean_loss.total += res.loss.total * static_cast<double>(b);
    stats.mean_loss.center += res.loss.center * static_cast<double>(b);
    stats.mean_loss.separation += res.loss.separation * static_cast<double>(b);
    stats.mean_loss.cross_entropy += res.loss.cross_entropy * static_cast<double>(b);
    seen += static_cast<std::size_t>(b);
    correct += res.correct;
    ++stats.batches;
  }
  const double n = static_cast<double>(seen);
  stats.mean_loss.total /= n;
  stats.mean_loss.center /= n;
  stats.mean_loss.separation /= n;
  stats.mean_loss.cross_entropy /= n;
  stats.train_accuracy = static_cast<double>(correct) / n;
  return stats;
}

void reset_centers(TrainState& state, const TrainingSet& data, std::span<const ClassId> classes) {
  const Eigen::MatrixXd z = encode_batch(state, data.inputs);
  for (ClassId c : classes) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(z.rows());
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == c) {
        sum += z.col(static_cast<Eigen::Index>(i));
        ++count;
      }
    }
    if (count > 0) state.params.centers.row(to_int(c)) = (sum / static_cast<double>(count)).transpose();
  }
}

EpochStats warm_start(TrainState& state, const TrainingSet& data, const TrainOptions& opts) {
  const LossConfig ce_only{0.0, 0.0, 1.0, 0.0};
  auto stats = train_epoch(state, data, ce_only, opts);
  std::set<std::int32_t> present;
  for (ClassId y : data.labels) present.insert(to_int(y));
  std::vector<ClassId> cls;
  for (auto c : present) cls.push_back(class_id(c));
  reset_centers(state, data, cls);
  return stats;
}

std::vector<ClassId> predict_head(const TrainState& state, const Eigen::MatrixXd& inputs) {
  const Eigen::MatrixXd lg = logits(state, encode_batch(state, inputs));
  std::vector<ClassId> out(static_cast<std::size_t>(lg.cols()));
  for (Eigen::Index i = 0; i < lg.cols(); ++i) {
    Eigen::Index best = 0;
    lg.col(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = class_id(static_cast<std::int32_t>(best));
  }
  return out;
}

}  // namespace owr::embedding

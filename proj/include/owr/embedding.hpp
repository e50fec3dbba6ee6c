#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "owr/signal.hpp"
#include "owr/types.hpp"

namespace owr::embedding {

enum class Activation { kRelu, kTanh };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

/// Flatten + MLP encoder shape. The last layer is linear and produces the embedding.
struct EncoderConfig {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<std::size_t> hidden_widths{256, 128};
  std::size_t embed_dim = 64;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return n_frames * n_bins; }
  /// Widths of every layer boundary: input, hidden..., embedding.
  std::vector<std::size_t> layer_sizes() const;
  std::size_t encoder_parameter_count() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Weights of the composite feature loss
///   L = eta1 * L_cen + eta2 * L_sep + eta3 * L_CE.
struct LossConfig {
  double eta1 = 0.5;
  double eta2 = 0.3;
  double eta3 = 0.2;
  double margin = 1.0;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// Every trainable quantity. Head and center rows are indexed by ClassId.
struct Parameters {
  Eigen::VectorXd encoder;  // per layer: W (out x in, column-major) then b
  Eigen::MatrixXd head_w;   // C x D
  Eigen::VectorXd head_b;   // C
  Eigen::MatrixXd centers;  // C x D

  Parameters zeros_like() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  Eigen::Index size() const;
  bool all_finite() const;
};

struct TrainState {
  EncoderConfig config;
  Parameters params;
  Parameters adam_m;
  Parameters adam_v;
  std::int64_t step_count = 0;

  std::size_t num_classes() const { return static_cast<std::size_t>(params.head_w.rows()); }
  std::size_t embed_dim() const { return config.embed_dim; }
};

/// Uniform fan-in initialisation, seeded by config.seed. Centers start at zero.
TrainState init_state(const EncoderConfig& config, std::size_t num_classes);

/// Appends head rows and centers for `count` new classes (seeded fan-in init).
void add_classes(TrainState& state, std::size_t count, std::uint64_t seed);

Eigen::VectorXd flatten_input(const signal::Spectrogram& spec);

/// Finite D-vector for one spectrogram. Throws on dimension mismatch.
Embedding encode(const TrainState& state, const signal::Spectrogram& spec);

/// Column-per-sample batch encode: inputs is input_dim x N, result D x N.
Eigen::MatrixXd encode_batch(const TrainState& state, const Eigen::MatrixXd& inputs);

/// Head logits, C x N.
Eigen::MatrixXd logits(const TrainState& state, const Eigen::MatrixXd& embeddings);

struct LossBreakdown {
  double total = 0.0;
  double center = 0.0;      // L_cen
  double separation = 0.0;  // L_sep
  double cross_entropy = 0.0;
};

struct LossGradients {
  Eigen::MatrixXd d_embeddings;  // D x B
  Eigen::MatrixXd d_logits;      // C x B
  Eigen::MatrixXd d_centers;     // C x D
};

/// Composite feature loss over one batch.
///   L_cen = mean_i |z_i - c_{y_i}|^2
///   L_sep = mean over distinct class pairs (a,b) present in the batch of
///           max(0, margin - |c_a - c_b|)^2   (0 when fewer than two classes)
///   L_CE  = mean_i -log softmax(logits_i)[y_i]
/// Throws kInvalidInput on an empty batch or a label outside the center table.
LossBreakdown composite_loss(const Eigen::MatrixXd& embeddings, const Eigen::MatrixXd& logits,
                             std::span<const ClassId> labels, const Eigen::MatrixXd& centers,
                             const LossConfig& cfg, LossGradients* grads = nullptr);

/// Loss and full backpropagated gradient for one batch at the current parameters.
LossBreakdown loss_and_gradient(const TrainState& state, const Eigen::MatrixXd& inputs,
                                std::span<const ClassId> labels, const LossConfig& cfg,
                                Parameters* grad = nullptr);

/// Column-per-sample training inputs with their labels.
struct TrainingSet {
  Eigen::MatrixXd inputs;
  std::vector<ClassId> labels;

  std::size_t size() const { return labels.size(); }
};

TrainingSet make_training_set(std::span<const signal::Spectrogram> specs,
                              std::span<const ClassId> labels);

struct TrainOptions {
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t shuffle_seed = 0;
  /// Oversample each class up to the largest class count within the epoch.
  bool balance_classes = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Abort with kBudgetExceeded once state.step_count would pass this value.
  std::int64_t max_step_count = -1;
};

struct EpochStats {
  LossBreakdown mean_loss;
  std::size_t batches = 0;
  double train_accuracy = 0.0;  // head argmax over the epoch's batches, pre-update
};

/// One pass of Adam over `data` in seed-shuffled mini-batches. Encoder, head
/// and centers all step on the composite loss. A non-finite loss aborts with
/// kNumerical naming the term and batch.
EpochStats train_epoch(TrainState& state, const TrainingSet& data, const LossConfig& cfg,
                       const TrainOptions& opts);

/// CE-only warmup epoch, then centers set to per-class embedding means.
EpochStats warm_start(TrainState& state, const TrainingSet& data, const TrainOptions& opts);

/// Sets center rows of the listed classes to their mean embedding in `data`.
void reset_centers(TrainState& state, const TrainingSet& data, std::span<const ClassId> classes);

/// Closed-set head prediction.
std::vector<ClassId> predict_head(const TrainState& state, const Eigen::MatrixXd& inputs);

}  // namespace owr::embedding

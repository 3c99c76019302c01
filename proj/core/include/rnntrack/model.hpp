#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rnntrack/rng.hpp"
#include "rnntrack/sphere.hpp"
#include "rnntrack/streamline.hpp"

namespace rnntrack {

struct GruConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t input_size = 100;
  std::size_t num_classes = 725;
  double dropout = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const GruConfig&, const GruConfig&) = default;
};

// One GRU layer. Gate blocks are stacked row-wise as [update; reset; candidate]
// so each of w (3H x I), u (3H x H) and b (3H) holds all three gates.
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wc x + Uc (r * h) + bc)
//   h' = (1 - z) * h + z * c
struct GruLayer {
  Eigen::MatrixXd w;
  Eigen::MatrixXd u;
  Eigen::VectorXd b;
};

struct GruParams {
  std::vector<GruLayer> layers;
  Eigen::MatrixXd head_w;  // hidden x classes; logits = head_w^T a + head_b
  Eigen::VectorXd head_b;

  static GruParams zeros(const GruConfig& cfg);

  // Visits every tensor in declaration order (per layer w, u, b; then head).
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(l.w);
      f(l.u);
      f(l.b);
    }
    f(head_w);
    f(head_b);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(l.w);
      f(l.u);
      f(l.b);
    }
    f(head_w);
    f(head_b);
  }

  std::size_t parameter_count() const;
  bool matches(const GruConfig& cfg) const;

  friend bool operator==(const GruParams& a, const GruParams& b);
};

// Per-layer hidden vectors (pre-activation GRU state).
using HiddenState = std::vector<Eigen::VectorXd>;

// A probability vector over the direction classes plus EoF.
using Cfodf = Eigen::VectorXd;

// One inverted-dropout mask per layer boundary, including the last GRU
// layer -> head boundary. Entries are 0 or 1 / (1 - p).
using DropoutMasks = std::vector<Eigen::VectorXd>;

GruParams init_params(const GruConfig& cfg);
HiddenState zero_state(const GruConfig& cfg);
DropoutMasks sample_dropout_masks(const GruConfig& cfg, Rng& rng);

// Advances `state` by one input and returns the class distribution.
// `masks` non-null selects training mode. Throws NumericOverflow on
// non-finite intermediates.
Cfodf step(const GruParams& params, const GruConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& x,
           HiddenState& state, const DropoutMasks* masks = nullptr);

// inputs: n x K. Iterates step() from the zero state.
std::vector<Cfodf> forward_sequence(const GruParams& params, const GruConfig& cfg, const Eigen::MatrixXd& inputs,
                                    const DropoutMasks* masks = nullptr);

// Columns are the smoothed target distributions of every class.
class LabelSmoother {
 public:
  LabelSmoother(const DirectionSet& ds, double tau);

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(table_.cols()); }
  double tau() const noexcept { return tau_; }
  auto target(std::size_t cls) const { return table_.col(static_cast<Eigen::Index>(cls)); }

 private:
  Eigen::MatrixXd table_;
  double tau_;
};

inline constexpr double kLogFloor = 1e-12;

// Mean over steps of the cross-entropy between the smoothed labels and the
// predictions, with log arguments floored at kLogFloor.
double sequence_loss(std::span<const Cfodf> cfodfs, std::span<const std::size_t> labels, const LabelSmoother& smoother);
double sequence_loss(std::span<const Cfodf> cfodfs, std::span<const std::size_t> labels, const DirectionSet& ds,
                     double tau);

struct BackwardResult {
  double loss = 0.0;
  std::size_t correct = 0;  // steps whose argmax equals the label
  GruParams grads;
};

// Exact loss gradient by backpropagation through time over the whole sequence.
BackwardResult backward_sequence(const GruParams& params, const GruConfig& cfg, const Eigen::MatrixXd& inputs,
                                 std::span<const std::size_t> labels, const LabelSmoother& smoother,
                                 const DropoutMasks* masks = nullptr);

// Loss and correct-step count in evaluation mode, without gradients.
std::pair<double, std::size_t> evaluate_sequence(const GruParams& params, const GruConfig& cfg,
                                                 const Eigen::MatrixXd& inputs, std::span<const std::size_t> labels,
                                                 const LabelSmoother& smoother);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;
  std::size_t epochs = 10;
  double tau = 0.1;
  std::uint64_t seed = 7;
  unsigned threads = 1;

  void validate() const;
};

struct AdamState {
  GruParams m;
  GruParams v;
  std::uint64_t step = 0;
  std::uint64_t epochs_completed = 0;

  static AdamState zeros(const GruConfig& cfg);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct EpochMetrics {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

double global_norm(const GruParams& grads);

// One pass over `data` in a seeded order: per-batch mean gradients,
// global-norm clipping, Adam update. Randomness depends only on tc.seed and
// opt.epochs_completed, which is incremented.
EpochMetrics train_epoch(GruParams& params, AdamState& opt, std::span<const TrainingSequence> data,
                         const TrainConfig& tc, const GruConfig& cfg, const LabelSmoother& smoother);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalMetrics evaluate(const GruParams& params, const GruConfig& cfg, std::span<const TrainingSequence> data,
                     const LabelSmoother& smoother, unsigned threads = 1);

struct ModelFile {
  GruConfig config;
  GruParams params;
  std::optional<AdamState> optimizer;
};

std::vector<char> encode_model(const GruConfig& cfg, const GruParams& params, const AdamState* opt = nullptr);
ModelFile decode_model(std::span<const char> bytes);
void save_model(const std::filesystem::path& path, const GruConfig& cfg, const GruParams& params,
                const AdamState* opt = nullptr);
ModelFile load_model(const std::filesystem::path& path);

// Stateful per-step classifier driven by the tracker.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual HiddenState initial_state() const = 0;
  virtual Cfodf step(const Eigen::Ref<const Eigen::VectorXd>& x, HiddenState& state) const = 0;
};

class GruModel final : public SequenceModel {
 public:
  GruModel(GruConfig cfg, GruParams params);

  const GruConfig& config() const noexcept { return cfg_; }
  const GruParams& params() const noexcept { return params_; }

  std::size_t input_size() const override { return cfg_.input_size; }
  std::size_t num_classes() const override { return cfg_.num_classes; }
  HiddenState initial_state() const override { return zero_state(cfg_); }
  Cfodf step(const Eigen::Ref<const Eigen::VectorXd>& x, HiddenState& state) const override;

 private:
  GruConfig cfg_;
  GruParams params_;
};

}  // namespace rnntrack

#include "rnntrack/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "rnntrack/binary_io.hpp"
#include "rnntrack/error.hpp"
#include "rnntrack/parallel.hpp"

namespace rnntrack {

namespace {

constexpr std::string_view kModelMagic = "GRUMDL01";
constexpr std::string_view kAdamMagic = "ADAMST01";

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index ix(std::size_t v) { return static_cast<Index>(v); }

std::vector<std::span<double>> views(GruParams& p) {
  std::vector<std::span<double>> out;
  p.for_each_tensor([&](auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

std::vector<std::span<const double>> views(const GruParams& p) {
  std::vector<std::span<const double>> out;
  p.for_each_tensor([&](const auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

void add_into(GruParams& acc, const GruParams& g) {
  auto a = views(acc);
  const auto b = views(g);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += b[t][i];
}

void scale(GruParams& p, double s) {
  for (auto v : views(p))
    for (double& x : v) x *= s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void softmax_inplace(Eigen::Ref<VectorXd> z) {
  const double mx = z.maxCoeff();
  z = (z.array() - mx).exp();
  z /= z.sum();
}

Index argmax(const Eigen::Ref<const VectorXd>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void check_inputs(const GruConfig& cfg, const MatrixXd& inputs) {
  if (inputs.rows() < 1) throw InvalidArgument("sequence must have at least one step");
  if (inputs.cols() != ix(cfg.input_size))
    throw InvalidArgument("input width " + std::to_string(inputs.cols()) + " != model input size " +
                          std::to_string(cfg.input_size));
  if (!inputs.allFinite()) throw InvalidArgument("sequence inputs must be finite");
}

// Activations of a whole sequence, laid out one column per time step.
struct LayerCache {
  MatrixXd in;      // I x n
  MatrixXd z, r, c; // H x n
  MatrixXd h;       // H x n, state after each step
  MatrixXd h_prev;  // H x n, state before each step
  MatrixXd rh;      // H x n, r * h_prev
  MatrixXd out;     // H x n, relu(h) * mask
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  MatrixXd probs;  // C x n
};

ForwardCache forward_batched(const GruParams& params, const GruConfig& cfg, const MatrixXd& inputs,
                             const DropoutMasks* masks) {
  check_inputs(cfg, inputs);
  const Index n = inputs.rows();
  const Index hs = ix(cfg.hidden_size);
  ForwardCache cache;
  cache.layers.resize(cfg.num_layers);
  MatrixXd in = inputs.transpose();
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const GruLayer& layer = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.in = std::move(in);
    MatrixXd pre = layer.w * lc.in;
    pre.colwise() += layer.b;
    lc.z.resize(hs, n);
    lc.r.resize(hs, n);
    lc.c.resize(hs, n);
    lc.h.resize(hs, n);
    lc.h_prev.resize(hs, n);
    lc.rh.resize(hs, n);
    VectorXd h = VectorXd::Zero(hs);
    VectorXd zr(2 * hs), cand(hs);
    for (Index t = 0; t < n; ++t) {
      lc.h_prev.col(t) = h;
      zr.noalias() = layer.u.topRows(2 * hs) * h;
      zr += pre.col(t).head(2 * hs);
      zr = zr.unaryExpr(&sigmoid);
      const auto z = zr.head(hs);
      const auto r = zr.tail(hs);
      lc.rh.col(t) = r.cwiseProduct(h);
      cand.noalias() = layer.u.bottomRows(hs) * lc.rh.col(t);
      cand += pre.col(t).tail(hs);
      cand = cand.array().tanh();
      h = (1.0 - z.array()) * h.array() + z.array() * cand.array();
      lc.z.col(t) = z;
      lc.r.col(t) = r;
      lc.c.col(t) = cand;
      lc.h.col(t) = h;
    }
    lc.out = lc.h.cwiseMax(0.0);
    if (masks) lc.out = lc.out.array().colwise() * (*masks)[l].array();
    in = lc.out;
  }
  MatrixXd logits = params.head_w.transpose() * cache.layers.back().out;
  logits.colwise() += params.head_b;
  if (!logits.allFinite()) throw NumericOverflow("forward: non-finite logits");
  for (Index t = 0; t < n; ++t) softmax_inplace(logits.col(t));
  cache.probs = std::move(logits);
  return cache;
}

void check_labels(const GruConfig& cfg, Index n, std::span<const std::size_t> labels) {
  if (labels.size() != static_cast<std::size_t>(n)) throw InvalidArgument("label count does not match sequence length");
  for (std::size_t y : labels)
    if (y >= cfg.num_classes) throw InvalidArgument("label out of range");
}

}  // namespace

void GruConfig::validate() const {
  if (num_layers < 1) throw InvalidArgument("GruConfig: num_layers must be >= 1");
  if (hidden_size < 1) throw InvalidArgument("GruConfig: hidden_size must be >= 1");
  if (input_size < 1) throw InvalidArgument("GruConfig: input_size must be >= 1");
  if (num_classes < 2) throw InvalidArgument("GruConfig: num_classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("GruConfig: dropout must be in [0, 1)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be >= 0");
  if (!(clip_norm > 0.0)) throw InvalidArgument("TrainConfig: clip_norm must be > 0");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (!(tau > 0.0)) throw InvalidArgument("TrainConfig: tau must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("TrainConfig: bad betas");
  if (!(epsilon > 0.0)) throw InvalidArgument("TrainConfig: epsilon must be > 0");
}

GruParams GruParams::zeros(const GruConfig& cfg) {
  cfg.validate();
  const Index hs = ix(cfg.hidden_size);
  GruParams p;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const Index in = l == 0 ? ix(cfg.input_size) : hs;
    p.layers.push_back({MatrixXd::Zero(3 * hs, in), MatrixXd::Zero(3 * hs, hs), VectorXd::Zero(3 * hs)});
  }
  p.head_w = MatrixXd::Zero(hs, ix(cfg.num_classes));
  p.head_b = VectorXd::Zero(ix(cfg.num_classes));
  return p;
}

std::size_t GruParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool GruParams::matches(const GruConfig& cfg) const {
  const GruParams ref = zeros(cfg);
  if (ref.layers.size() != layers.size()) return false;
  bool ok = true;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    ok = ok && layers[l].w.rows() == ref.layers[l].w.rows() && layers[l].w.cols() == ref.layers[l].w.cols();
    ok = ok && layers[l].u.rows() == ref.layers[l].u.rows() && layers[l].u.cols() == ref.layers[l].u.cols();
    ok = ok && layers[l].b.size() == ref.layers[l].b.size();
  }
  return ok && head_w.rows() == ref.head_w.rows() && head_w.cols() == ref.head_w.cols() &&
         head_b.size() == ref.head_b.size();
}

bool operator==(const GruParams& a, const GruParams& b) {
  const auto va = views(a);
  const auto vb = views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t t = 0; t < va.size(); ++t)
    if (!std::ranges::equal(va[t], vb[t])) return false;
  return true;
}

GruParams init_params(const GruConfig& cfg) {
  GruParams p = GruParams::zeros(cfg);
  Rng rng(cfg.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
  for (auto v : views(p))
    for (double& x : v) x = uniform(rng, -bound, bound);
  return p;
}

HiddenState zero_state(const GruConfig& cfg) {
  return HiddenState(cfg.num_layers, VectorXd::Zero(ix(cfg.hidden_size)));
}

DropoutMasks sample_dropout_masks(const GruConfig& cfg, Rng& rng) {
  const double keep_scale = 1.0 / (1.0 - cfg.dropout);
  DropoutMasks masks(cfg.num_layers, VectorXd(ix(cfg.hidden_size)));
  for (auto& m : masks)
    for (Index i = 0; i < m.size(); ++i) m[i] = uniform01(rng) < cfg.dropout ? 0.0 : keep_scale;
  return masks;
}

Cfodf step(const GruParams& params, const GruConfig& cfg, const Eigen::Ref<const VectorXd>& x, HiddenState& state,
           const DropoutMasks* masks) {
  if (x.size() != ix(cfg.input_size)) throw InvalidArgument("step: input size mismatch");
  if (state.size() != cfg.num_layers) throw InvalidArgument("step: hidden state layer count mismatch");
  if (masks && masks->size() != cfg.num_layers) throw InvalidArgument("step: dropout mask count mismatch");
  const Index hs = ix(cfg.hidden_size);
  VectorXd in = x;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const GruLayer& layer = params.layers[l];
    VectorXd& h = state[l];
    if (h.size() != hs) throw InvalidArgument("step: hidden state size mismatch");
    VectorXd pre = layer.w * in;
    pre += layer.b;
    VectorXd zr = layer.u.topRows(2 * hs) * h;
    zr += pre.head(2 * hs);
    zr = zr.unaryExpr(&sigmoid);
    const VectorXd rh = zr.tail(hs).cwiseProduct(h);
    VectorXd cand = layer.u.bottomRows(hs) * rh;
    cand += pre.tail(hs);
    cand = cand.array().tanh();
    h = (1.0 - zr.head(hs).array()) * h.array() + zr.head(hs).array() * cand.array();
    if (!h.allFinite()) throw NumericOverflow("step: non-finite hidden state");
    in = h.cwiseMax(0.0);
    if (masks) in = in.cwiseProduct((*masks)[l]);
  }
  VectorXd logits = params.head_w.transpose() * in;
  logits += params.head_b;
  if (!logits.allFinite()) throw NumericOverflow("step: non-finite logits");
  softmax_inplace(logits);
  return logits;
}

std::vector<Cfodf> forward_sequence(const GruParams& params, const GruConfig& cfg, const MatrixXd& inputs,
                                    const DropoutMasks* masks) {
  check_inputs(cfg, inputs);
  HiddenState h = zero_state(cfg);
  std::vector<Cfodf> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Index t = 0; t < inputs.rows(); ++t) out.push_back(step(params, cfg, inputs.row(t).transpose(), h, masks));
  return out;
}

LabelSmoother::LabelSmoother(const DirectionSet& ds, double tau) : tau_(tau) {
  const auto c = ix(ds.num_classes());
  table_.resize(c, c);
  for (Index k = 0; k < c; ++k) table_.col(k) = smooth_label(static_cast<std::size_t>(k), ds, tau).probs;
}

double sequence_loss(std::span<const Cfodf> cfodfs, std::span<const std::size_t> labels, const LabelSmoother& smoother) {
  if (cfodfs.size() != labels.size()) throw InvalidArgument("loss: prediction and label counts differ");
  if (cfodfs.empty()) throw InvalidArgument("loss: empty sequence");
  const double log_floor = std::log(kLogFloor);
  double total = 0.0;
  for (std::size_t j = 0; j < cfodfs.size(); ++j) {
    const auto y = smoother.target(labels[j]);
    if (cfodfs[j].size() != y.size()) throw InvalidArgument("loss: class count mismatch");
    double s = 0.0;
    for (Index m = 0; m < y.size(); ++m) {
      if (y[m] == 0.0) continue;
      const double p = cfodfs[j][m];
      s += y[m] * (p >= kLogFloor ? std::log(p) : log_floor);
    }
    total -= s;
  }
  return total / static_cast<double>(cfodfs.size());
}

double sequence_loss(std::span<const Cfodf> cfodfs, std::span<const std::size_t> labels, const DirectionSet& ds,
                     double tau) {
  return sequence_loss(cfodfs, labels, LabelSmoother(ds, tau));
}

namespace {

// Loss, correct count and dL/dlogits for every step (C x n).
double loss_and_logit_grad(const MatrixXd& probs, std::span<const std::size_t> labels, const LabelSmoother& smoother,
                           MatrixXd* grad, std::size_t& correct) {
  const Index n = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double log_floor = std::log(kLogFloor);
  if (grad) grad->resize(probs.rows(), n);
  double total = 0.0;
  correct = 0;
  for (Index t = 0; t < n; ++t) {
    const auto p = probs.col(t);
    const auto y = smoother.target(labels[static_cast<std::size_t>(t)]);
    if (argmax(p) == ix(labels[static_cast<std::size_t>(t)])) ++correct;
    double s = 0.0;
    double active_mass = 0.0;
    for (Index m = 0; m < y.size(); ++m) {
      if (y[m] == 0.0) continue;
      if (p[m] >= kLogFloor) {
        s += y[m] * std::log(p[m]);
        active_mass += y[m];
      } else {
        s += y[m] * log_floor;
      }
    }
    total -= s;
    if (grad) {
      auto g = grad->col(t);
      g = p * active_mass;
      for (Index m = 0; m < y.size(); ++m)
        if (y[m] != 0.0 && p[m] >= kLogFloor) g[m] -= y[m];
      g *= inv_n;
    }
  }
  return total * inv_n;
}

}  // namespace

std::pair<double, std::size_t> evaluate_sequence(const GruParams& params, const GruConfig& cfg, const MatrixXd& inputs,
                                                 std::span<const std::size_t> labels, const LabelSmoother& smoother) {
  const ForwardCache cache = forward_batched(params, cfg, inputs, nullptr);
  check_labels(cfg, inputs.rows(), labels);
  std::size_t correct = 0;
  const double loss = loss_and_logit_grad(cache.probs, labels, smoother, nullptr, correct);
  return {loss, correct};
}

BackwardResult backward_sequence(const GruParams& params, const GruConfig& cfg, const MatrixXd& inputs,
                                 std::span<const std::size_t> labels, const LabelSmoother& smoother,
                                 const DropoutMasks* masks) {
  if (masks && masks->size() != cfg.num_layers) throw InvalidArgument("backward: dropout mask count mismatch");
  const ForwardCache cache = forward_batched(params, cfg, inputs, masks);
  check_labels(cfg, inputs.rows(), labels);
  if (smoother.num_classes() != cfg.num_classes) throw InvalidArgument("backward: label smoother class count mismatch");

  BackwardResult res;
  res.grads = GruParams::zeros(cfg);
  MatrixXd dlogits;
  res.loss = loss_and_logit_grad(cache.probs, labels, smoother, &dlogits, res.correct);

  const Index n = inputs.rows();
  const Index hs = ix(cfg.hidden_size);
  const MatrixXd& top = cache.layers.back().out;
  res.grads.head_w.noalias() = top * dlogits.transpose();
  res.grads.head_b = dlogits.rowwise().sum();
  MatrixXd d_out = params.head_w * dlogits;  // H x n

  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const GruLayer& layer = params.layers[li];
    const LayerCache& lc = cache.layers[li];
    GruLayer& g = res.grads.layers[li];

    // Through dropout and ReLU into the emitted state.
    MatrixXd d_h_above = d_out.cwiseProduct((lc.h.array() > 0.0).cast<double>().matrix());
    if (masks) d_h_above = d_h_above.array().colwise() * (*masks)[li].array();

    MatrixXd d_pre(3 * hs, n);
    VectorXd dh_next = VectorXd::Zero(hs);
    VectorXd dh(hs), dz(hs), dc(hs), dac(hs), d_rh(hs), dr(hs), dh_prev(hs);
    for (Index t = n; t-- > 0;) {
      const auto z = lc.z.col(t);
      const auto r = lc.r.col(t);
      const auto c = lc.c.col(t);
      const auto hp = lc.h_prev.col(t);
      dh = d_h_above.col(t) + dh_next;
      dz = dh.cwiseProduct(c - hp);
      dc = dh.cwiseProduct(z);
      dh_prev = dh.array() * (1.0 - z.array());
      dac = dc.array() * (1.0 - c.array().square());
      d_rh.noalias() = layer.u.bottomRows(hs).transpose() * dac;
      dr = d_rh.cwiseProduct(hp);
      dh_prev += d_rh.cwiseProduct(r);
      d_pre.col(t).head(hs) = dz.array() * z.array() * (1.0 - z.array());
      d_pre.col(t).segment(hs, hs) = dr.array() * r.array() * (1.0 - r.array());
      d_pre.col(t).tail(hs) = dac;
      dh_prev.noalias() += layer.u.topRows(2 * hs).transpose() * d_pre.col(t).head(2 * hs);
      dh_next = dh_prev;
    }
    g.w.noalias() = d_pre * lc.in.transpose();
    g.b = d_pre.rowwise().sum();
    g.u.topRows(2 * hs).noalias() = d_pre.topRows(2 * hs) * lc.h_prev.transpose();
    g.u.bottomRows(hs).noalias() = d_pre.bottomRows(hs) * lc.rh.transpose();
    if (li > 0) d_out = layer.w.transpose() * d_pre;
  }
  for (auto v : views(res.grads))
    for (double x : v)
      if (!std::isfinite(x)) throw NumericOverflow("backward: non-finite gradient");
  return res;
}

AdamState AdamState::zeros(const GruConfig& cfg) { return {GruParams::zeros(cfg), GruParams::zeros(cfg), 0, 0}; }

double global_norm(const GruParams& grads) {
  double s = 0.0;
  for (auto v : views(grads))
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

EpochMetrics train_epoch(GruParams& params, AdamState& opt, std::span<const TrainingSequence> data,
                         const TrainConfig& tc, const GruConfig& cfg, const LabelSmoother& smoother) {
  tc.validate();
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train_epoch: empty dataset");
  if (!params.matches(cfg) || !opt.m.matches(cfg) || !opt.v.matches(cfg))
    throw InvalidArgument("train_epoch: parameter shapes do not match config");

  const std::uint64_t epoch_seed = derive_seed(tc.seed, opt.epochs_completed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(epoch_seed);
  shuffle(order, rng);

  double loss_sum = 0.0;
  std::size_t correct = 0, steps = 0;
  for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
    const std::size_t count = std::min(tc.batch_size, order.size() - start);
    std::vector<BackwardResult> results(count);
    parallel_for(count, tc.threads, [&](std::size_t i) {
      const TrainingSequence& seq = data[order[start + i]];
      if (cfg.dropout > 0.0) {
        Rng mask_rng(derive_seed(epoch_seed, start + i + 1));
        const DropoutMasks masks = sample_dropout_masks(cfg, mask_rng);
        results[i] = backward_sequence(params, cfg, seq.inputs, seq.labels, smoother, &masks);
      } else {
        results[i] = backward_sequence(params, cfg, seq.inputs, seq.labels, smoother, nullptr);
      }
    });
    // Fixed summation order keeps the batch gradient independent of threading.
    GruParams grad = std::move(results[0].grads);
    for (std::size_t i = 1; i < count; ++i) add_into(grad, results[i].grads);
    for (std::size_t i = 0; i < count; ++i) {
      loss_sum += results[i].loss;
      correct += results[i].correct;
      steps += data[order[start + i]].length();
    }
    scale(grad, 1.0 / static_cast<double>(count));
    const double norm = global_norm(grad);
    if (norm > tc.clip_norm) scale(grad, tc.clip_norm / norm);

    ++opt.step;
    const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(opt.step));
    auto pv = views(params);
    auto mv = views(opt.m);
    auto vv = views(opt.v);
    const auto gv = views(grad);
    for (std::size_t t = 0; t < pv.size(); ++t) {
      for (std::size_t i = 0; i < pv[t].size(); ++i) {
        const double g = gv[t][i];
        mv[t][i] = tc.beta1 * mv[t][i] + (1.0 - tc.beta1) * g;
        vv[t][i] = tc.beta2 * vv[t][i] + (1.0 - tc.beta2) * g * g;
        const double mhat = mv[t][i] / c1;
        const double vhat = vv[t][i] / c2;
        pv[t][i] -= tc.learning_rate * mhat / (std::sqrt(vhat) + tc.epsilon);
      }
    }
  }
  ++opt.epochs_completed;
  return {loss_sum / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(steps)};
}

EvalMetrics evaluate(const GruParams& params, const GruConfig& cfg, std::span<const TrainingSequence> data,
                     const LabelSmoother& smoother, unsigned threads) {
  if (data.empty()) return {};
  std::vector<std::pair<double, std::size_t>> res(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    res[i] = evaluate_sequence(params, cfg, data[i].inputs, data[i].labels, smoother);
  });
  double loss = 0.0;
  std::size_t correct = 0, steps = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    loss += res[i].first;
    correct += res[i].second;
    steps += data[i].length();
  }
  return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(steps)};
}

// ---------------------------------------------------------------------------
// Model file

std::vector<char> encode_model(const GruConfig& cfg, const GruParams& params, const AdamState* opt) {
  cfg.validate();
  if (!params.matches(cfg)) throw InvalidArgument("save_model: parameter shapes do not match config");
  const nlohmann::json j = {{"num_layers", cfg.num_layers}, {"hidden_size", cfg.hidden_size},
                            {"input_size", cfg.input_size}, {"num_classes", cfg.num_classes},
                            {"dropout", cfg.dropout},       {"seed", cfg.seed}};
  const std::string text = j.dump();
  io::Writer w;
  w.bytes(kModelMagic);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (auto v : views(params))
    for (double x : v) w.put(x);
  if (opt) {
    w.bytes(kAdamMagic);
    w.put(opt->step);
    w.put(opt->epochs_completed);
    for (const GruParams* p : {&opt->m, &opt->v})
      for (auto v : views(*p))
        for (double x : v) w.put(x);
  }
  return w.data();
}

ModelFile decode_model(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic(kModelMagic, "model");
  const auto len = r.get<std::uint32_t>("model config length");
  const auto cfg_at = r.offset();
  const auto text = r.bytes(len, "model config");
  ModelFile mf;
  try {
    const auto j = nlohmann::json::parse(text);
    static const std::set<std::string> known{"num_layers", "hidden_size", "input_size", "num_classes", "dropout", "seed"};
    for (const auto& [key, _] : j.items())
      if (!known.contains(key)) throw FormatError("model: unknown config key '" + key + "'", cfg_at);
    mf.config.num_layers = j.at("num_layers").get<std::size_t>();
    mf.config.hidden_size = j.at("hidden_size").get<std::size_t>();
    mf.config.input_size = j.at("input_size").get<std::size_t>();
    mf.config.num_classes = j.at("num_classes").get<std::size_t>();
    mf.config.dropout = j.at("dropout").get<double>();
    mf.config.seed = j.at("seed").get<std::uint64_t>();
    mf.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: bad config block: ") + e.what(), cfg_at);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("model: invalid config: ") + e.what(), cfg_at);
  }
  mf.params = GruParams::zeros(mf.config);
  const auto read_params = [&](GruParams& p, std::string_view what) {
    std::uint64_t need = p.parameter_count() * 8;
    r.require(need, what);
    for (auto v : views(p))
      for (double& x : v) x = r.get<double>(what);
  };
  read_params(mf.params, "model parameters");
  if (r.remaining() > 0) {
    r.expect_magic(kAdamMagic, "optimizer state");
    AdamState st = AdamState::zeros(mf.config);
    st.step = r.get<std::uint64_t>("optimizer state");
    st.epochs_completed = r.get<std::uint64_t>("optimizer state");
    read_params(st.m, "optimizer moments");
    read_params(st.v, "optimizer moments");
    mf.optimizer = std::move(st);
  }
  if (r.remaining() != 0) throw FormatError("model: trailing bytes", r.offset());
  return mf;
}

void save_model(const std::filesystem::path& path, const GruConfig& cfg, const GruParams& params, const AdamState* opt) {
  io::write_file(path, encode_model(cfg, params, opt));
}

ModelFile load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

GruModel::GruModel(GruConfig cfg, GruParams params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  if (!params_.matches(cfg_)) throw InvalidArgument("GruModel: parameter shapes do not match config");
}

Cfodf GruModel::step(const Eigen::Ref<const VectorXd>& x, HiddenState& state) const {
  return rnntrack::step(params_, cfg_, x, state, nullptr);
}

}  // namespace rnntrack

#pragma once

// Amendment training (benign / mediate / adversarial paths with dual batch
// norm and vulnerability-weighted loss) and the two baselines it is compared
// against.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advamd/attacks.hpp"
#include "advamd/autodiff.hpp"
#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/nn.hpp"
#include "advamd/optim.hpp"
#include "advamd/random.hpp"
#include "advamd/vulnerability.hpp"

namespace advamd {

struct AdversarialTriplet {
  Tensor x;
  Tensor x_adv;
  Tensor x_med;
  std::size_t label = 0;
  Tensor delta;  // x_adv - x
};

// Row-aligned triplets for a whole dataset.
struct TripletSet {
  Tensor x, x_adv, x_med, delta;
  std::vector<std::size_t> labels;
  double phi = 0.0;
  std::size_t dropped = 0;  // coordinates whose perturbation fell back to zero

  std::size_t size() const { return labels.size(); }

  AdversarialTriplet triplet(std::size_t i) const {
    return {x.slice_rows(i, 1), x_adv.slice_rows(i, 1), x_med.slice_rows(i, 1), labels.at(i),
            delta.slice_rows(i, 1)};
  }
};

namespace detail {

// Picks x_adv, x_med such that, in double arithmetic,
//   x_med - x == phi * (x_adv - x)
// holds exactly and |x_adv - x| <= epsilon. Candidates for x_adv are walked
// one ulp at a time toward x, first from x + delta and then from starting
// points shrunk by 0.1% steps of |delta|. For most phi a solution sits within
// a few hundred ulps; values such as 0.6 or 0.7 admit solutions only while the
// mantissa of phi * delta stays below a threshold, hence the shrinking.
// Falls back to zero perturbation (returns false) if nothing is found.
inline bool materialize(double x, double delta, double phi, double epsilon, double& adv, double& med,
                        double& d) {
  constexpr int kBlocks = 1024;
  constexpr int kFirstWalk = 2048;
  constexpr int kWalk = 64;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (int block = 0; block < kBlocks; ++block) {
    adv = x + delta * (1.0 - static_cast<double>(block) / kBlocks);
    const int walk = block == 0 ? kFirstWalk : kWalk;
    for (int step = 0; step < walk && adv != x; ++step, adv = std::nextafter(adv, x)) {
      d = adv - x;
      if (std::abs(d) > epsilon) continue;
      const double m = phi * d;
      double y = std::nextafter(std::nextafter(x + m, -inf), -inf);
      for (int k = 0; k < 5; ++k, y = std::nextafter(y, inf)) {
        if (y - x == m) {
          med = y;
          return true;
        }
      }
    }
  }
  adv = x;
  med = x;
  d = 0.0;
  return delta == 0.0;
}

}  // namespace detail

// One triplet per sample: delta from the attack against the true label,
// x_adv = x + delta, x_med = x + phi * delta.
inline TripletSet generate_triplets(const Model& model, const Dataset& data, const AttackSpec& spec, double phi) {
  require(phi > 0.0 && phi < 1.0, ErrorCode::InvalidPhi, "phi must lie in (0,1), got " + std::to_string(phi));
  const Tensor raw = perturb(model, data.inputs, data.labels, spec);
  // DeepFool is unbudgeted; only the rounding guard applies there.
  const double budget =
      spec.kind == AttackKind::DeepFool ? std::numeric_limits<double>::infinity() : spec.epsilon;
  TripletSet t{data.inputs, Tensor::zeros(data.inputs.shape), Tensor::zeros(data.inputs.shape),
               Tensor::zeros(data.inputs.shape), data.labels, phi};
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (!detail::materialize(data.inputs.values[i], raw.values[i], phi, budget, t.x_adv.values[i],
                             t.x_med.values[i], t.delta.values[i]))
      ++t.dropped;
  return t;
}

struct TrainConfig {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double beta3 = 1.0;
  double sigma = 0.05;  // stop once the epoch-mean overall loss drops below this
  std::size_t max_epochs = 500;
  double phi = 0.7;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool use_mediate = true;
  bool use_aux_bn = true;
  bool use_advamd_loss = true;
  std::size_t patience = 20;
  bool refresh_triplets = false;
  VulnMode vuln_mode = VulnMode::PerCategory;
  std::size_t min_per_class = 50;

  void validate() const {
    require(phi > 0.0 && phi < 1.0, ErrorCode::InvalidPhi, "phi must lie in (0,1)");
    require(beta1 >= 0.0 && beta2 >= 0.0 && beta3 >= 0.0, ErrorCode::InvalidArgument, "betas must be >= 0");
    require(beta1 > 0.0 || beta2 > 0.0 || beta3 > 0.0, ErrorCode::InvalidArgument, "at least one beta must be > 0");
    require(sigma > 0.0, ErrorCode::InvalidArgument, "sigma must be > 0");
    require(max_epochs >= 1, ErrorCode::InvalidArgument, "max_epochs must be >= 1");
    require(batch_size >= 2, ErrorCode::InvalidArgument, "batch_size must be >= 2");
    require(learning_rate >= 0.0, ErrorCode::InvalidArgument, "learning_rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::InvalidArgument, "momentum must be in [0,1)");
    require(patience >= 1, ErrorCode::InvalidArgument, "patience must be >= 1");
  }

  bool any_component() const { return use_mediate || use_aux_bn || use_advamd_loss; }
};

// Default mediate coefficient per attack.
inline double default_phi(AttackKind kind) {
  switch (kind) {
    case AttackKind::FGSM: return 0.7;
    case AttackKind::DeepFool: return 0.6;
    case AttackKind::PGD: return 0.5;
  }
  return 0.7;
}

struct StepLosses {
  double benign = 0.0;
  double mediate = 0.0;
  double adversarial = 0.0;
  double overall = 0.0;
};

struct TrainResult {
  std::vector<StepLosses> epochs;  // epoch means
  bool no_decrease = false;        // overall loss stalled for `patience` epochs
  bool reached_sigma = false;
  std::size_t steps = 0;
};

struct TrainHooks {
  // Called before each optimizer step with the pre-step model and the batch rows.
  std::function<void(const Model&, std::span<const std::size_t>)> before_step;
  std::function<void(const Model&)> after_step;
  std::function<void(std::size_t epoch, const Model&, const StepLosses&)> after_epoch;
};

namespace detail {

// Shuffled mini-batches; a trailing remainder of one row joins the previous
// batch so train-phase batch norm always sees at least two rows.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < n; at += batch_size)
    out.emplace_back(order.begin() + at, order.begin() + std::min(n, at + batch_size));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

// Epoch-level bookkeeping shared by every training loop.
class EpochTracker {
 public:
  explicit EpochTracker(const TrainConfig& cfg) : cfg_(cfg) {}

  // Returns true when training should stop.
  bool close(TrainResult& res, const StepLosses& mean) {
    res.epochs.push_back(mean);
    if (mean.overall < best_) {
      best_ = mean.overall;
      stale_ = 0;
    } else if (++stale_ >= cfg_.patience) {
      res.no_decrease = true;
    }
    // A non-finite sigma disables the threshold.
    if (std::isfinite(cfg_.sigma) && mean.overall < cfg_.sigma) {
      res.reached_sigma = true;
      return true;
    }
    return false;
  }

 private:
  const TrainConfig& cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stale_ = 0;
};

inline void accumulate(StepLosses& acc, const StepLosses& s) {
  acc.benign += s.benign;
  acc.mediate += s.mediate;
  acc.adversarial += s.adversarial;
  acc.overall += s.overall;
}

inline StepLosses divide(StepLosses s, std::size_t n) {
  const double d = static_cast<double>(n);
  return {s.benign / d, s.mediate / d, s.adversarial / d, s.overall / d};
}

inline std::uint64_t stream_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, 0x5EED); }

}  // namespace detail

// One plain cross-entropy SGD step on a benign batch.
inline double vanilla_step(Model& model, Sgd& opt, const Tensor& x, const std::vector<std::size_t>& y) {
  opt.zero_grad();
  Graph g;
  const NodeId in = g.constant(x);
  const NodeId loss = g.softmax_cross_entropy(model.forward(g, in, BnRoute::Main, Phase::Train), y);
  g.backward(loss);
  opt.step();
  return g.value(loss).item();
}

// One amendment step on a batch of triplets. A path whose beta is zero is
// still evaluated for reporting, but without gradients or statistics updates.
inline StepLosses advamd_step(Model& model, Sgd& opt, const TripletSet& triplets,
                              std::span<const std::size_t> rows, const VulnCoefficients& vuln,
                              const TrainConfig& cfg) {
  require(!cfg.use_aux_bn || model.aux_initialized(), ErrorCode::MissingAuxBN,
          "model has no auxiliary batch-norm statistics; use clone_with_aux_bn");
  const std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<std::size_t> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(triplets.labels[i]);
  std::vector<double> weights(idx.size(), 1.0);
  if (cfg.use_advamd_loss)
    for (std::size_t r = 0; r < idx.size(); ++r) weights[r] = vuln[labels[r]];

  opt.zero_grad();
  Graph g;
  Graph monitor;
  auto path = [&](const Tensor& source, BnRoute route, double beta, const std::vector<double>& w,
                  std::optional<NodeId>& node) {
    const Tensor batch = source.gather_rows(idx);
    if (beta > 0.0) {
      const NodeId z = model.forward(g, g.constant(batch), route, Phase::Train);
      node = g.softmax_cross_entropy(z, labels, w);
      return g.value(*node).item();
    }
    const NodeId z = model.forward(monitor, monitor.constant(batch), route, Phase::Train, {false, false});
    return monitor.value(monitor.softmax_cross_entropy(z, labels, w)).item();
  };

  StepLosses out;
  std::optional<NodeId> lb, lm, la;
  out.benign = path(triplets.x, BnRoute::Main, cfg.beta1, {}, lb);
  if (cfg.use_mediate) out.mediate = path(triplets.x_med, BnRoute::Main, cfg.beta2, {}, lm);
  out.adversarial = path(triplets.x_adv, cfg.use_aux_bn ? BnRoute::Aux : BnRoute::Main, cfg.beta3, weights, la);

  std::optional<NodeId> total;
  auto add_term = [&](const std::optional<NodeId>& term, double beta) {
    if (!term) return;
    const NodeId scaled = g.scale(*term, beta);
    total = total ? g.add(*total, scaled) : scaled;
  };
  add_term(lb, cfg.beta1);
  add_term(lm, cfg.use_mediate ? cfg.beta2 : 0.0);
  add_term(la, cfg.beta3);
  const double b2 = cfg.use_mediate ? cfg.beta2 : 0.0;
  out.overall = cfg.beta1 * out.benign + b2 * out.mediate + cfg.beta3 * out.adversarial;
  if (total) {
    g.backward(*total);
    opt.step();
  }
  return out;
}

inline double evaluate(const Model& model, const Dataset& data, BnRoute route = BnRoute::Main) {
  require(data.size() > 0, ErrorCode::EmptyDataset, "cannot evaluate on an empty dataset");
  const auto pred = predict(model, data.inputs, route);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Cross-entropy training with SGD + momentum on the Main route.
inline TrainResult vanilla_train(Model& model, const Dataset& data, const TrainConfig& cfg,
                                 const TrainHooks& hooks = {}) {
  cfg.validate();
  Sgd opt(model.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(detail::stream_seed(cfg));
  detail::EpochTracker tracker(cfg);
  TrainResult res;
  model.set_phase(Phase::Train);
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto batches = detail::epoch_batches(data.size(), cfg.batch_size, rng);
    StepLosses acc;
    for (const auto& b : batches) {
      if (hooks.before_step) hooks.before_step(model, b);
      std::vector<std::size_t> y;
      y.reserve(b.size());
      for (std::size_t i : b) y.push_back(data.labels[i]);
      const double l = vanilla_step(model, opt, data.inputs.gather_rows(b), y);
      if (hooks.after_step) hooks.after_step(model);
      acc.benign += l;
      acc.overall += l;
      ++res.steps;
    }
    const StepLosses mean = detail::divide(acc, batches.size());
    model.set_phase(Phase::Eval);
    if (hooks.after_epoch) hooks.after_epoch(epoch, model, mean);
    const bool stop = tracker.close(res, mean);
    model.set_phase(Phase::Train);
    if (stop) break;
  }
  model.set_phase(Phase::Eval);
  return res;
}

// Continues training on the 1:1 union of benign samples and static
// adversarial samples crafted against the incoming model, benign labels,
// single statistics path, uniform weights.
inline TrainResult adv_train_baseline(Model& model, const Dataset& data, const AttackSpec& spec,
                                      const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const Dataset adv = adversarial_dataset(model, data, spec);
  const Dataset mixture(concat_rows(data.inputs, adv.inputs),
                        [&] {
                          std::vector<std::size_t> y = data.labels;
                          y.insert(y.end(), data.labels.begin(), data.labels.end());
                          return y;
                        }(),
                        data.n_categories, data.domain);
  return vanilla_train(model, mixture, cfg, hooks);
}

struct AmendResult {
  Model model;
  TrainResult history;
  std::optional<DifficultyMatrix> difficulty;
  VulnCoefficients vuln;
};

// Target model is copied, never modified. Triplets and vulnerability
// coefficients are computed once against the target.
inline AmendResult advamd_train(const Model& target, const Dataset& data, const AttackSpec& spec,
                                const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  TripletSet triplets = generate_triplets(target, data, spec, cfg.phi);
  std::optional<DifficultyMatrix> alpha;
  VulnCoefficients vuln = VulnCoefficients::uniform(data.n_categories);
  if (cfg.use_advamd_loss) {
    AttackSpec targeted = spec;
    targeted.kind = AttackKind::PGD;
    alpha = estimate_difficulty(target, data, targeted, cfg.min_per_class);
    vuln = vuln_coefficients(*alpha, cfg.vuln_mode);
  }

  Model amended = clone_with_aux_bn(target);
  Sgd opt(amended.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(detail::stream_seed(cfg));
  detail::EpochTracker tracker(cfg);
  TrainResult res;
  amended.set_phase(Phase::Train);
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.refresh_triplets && epoch > 0) {
      amended.set_phase(Phase::Eval);
      triplets = generate_triplets(amended, data, spec, cfg.phi);
      amended.set_phase(Phase::Train);
    }
    const auto batches = detail::epoch_batches(data.size(), cfg.batch_size, rng);
    StepLosses acc;
    for (const auto& b : batches) {
      if (hooks.before_step) hooks.before_step(amended, b);
      detail::accumulate(acc, advamd_step(amended, opt, triplets, b, vuln, cfg));
      if (hooks.after_step) hooks.after_step(amended);
      ++res.steps;
    }
    const StepLosses mean = detail::divide(acc, batches.size());
    amended.set_phase(Phase::Eval);
    if (hooks.after_epoch) hooks.after_epoch(epoch, amended, mean);
    const bool stop = tracker.close(res, mean);
    amended.set_phase(Phase::Train);
    if (stop) break;
  }
  amended.set_phase(Phase::Eval);
  amended.set_route(BnRoute::Main);
  return {std::move(amended), std::move(res), std::move(alpha), std::move(vuln)};
}

}  // namespace advamd

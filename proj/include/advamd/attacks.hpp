#pragma once

// White-box perturbation generators. All attacks run the model in Eval phase
// on the Main batch-norm route and never touch its parameters, gradients or
// running statistics. Batched inputs are attacked row-independently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "advamd/autodiff.hpp"
#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/nn.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

enum class AttackKind { FGSM, PGD, DeepFool };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::FGSM: return "fgsm";
    case AttackKind::PGD: return "pgd";
    case AttackKind::DeepFool: return "deepfool";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::FGSM;
  if (s == "pgd") return AttackKind::PGD;
  if (s == "deepfool") return AttackKind::DeepFool;
  fail(ErrorCode::InvalidArgument, "unknown attack kind '" + s + "'");
}

struct AttackSpec {
  AttackKind kind = AttackKind::FGSM;
  double epsilon = 0.1;       // L-inf budget in input units
  std::size_t steps = 10;     // PGD iterations / DeepFool max iterations
  double step_size = 0.01;    // PGD step
  double overshoot = 0.02;    // DeepFool
  std::optional<Domain> clip_domain;
  std::optional<std::size_t> target;

  void validate() const {
    require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorCode::InvalidArgument,
            "attack epsilon must be finite and >= 0");
    require(steps >= 1, ErrorCode::InvalidArgument, "attack steps must be >= 1");
    require(step_size > 0.0, ErrorCode::InvalidArgument, "attack step_size must be > 0");
    require(overshoot >= 0.0, ErrorCode::InvalidArgument, "attack overshoot must be >= 0");
    if (clip_domain)
      require(clip_domain->lo < clip_domain->hi, ErrorCode::InvalidArgument, "clip domain needs lo < hi");
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (kind == AttackKind::PGD && step_size > epsilon)
      w.push_back("pgd step_size exceeds epsilon; every step saturates the budget");
    return w;
  }
};

// d(mean cross-entropy)/dx evaluated at x, one row per sample.
inline Tensor input_gradient(const Model& model, const Tensor& x, const std::vector<std::size_t>& labels) {
  Graph g;
  const NodeId in = g.variable(x);
  Model& m = const_cast<Model&>(model);  // Eval phase with stat updates and param grads off is read-only
  const NodeId logits = m.forward(g, in, BnRoute::Main, Phase::Eval, {false, false});
  g.backward(g.softmax_cross_entropy(logits, labels));
  Tensor grad(x.shape, g.value(in).grad);
  return grad;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Keeps x + delta inside the domain and |delta| <= epsilon after rounding.
inline void project(const Tensor& x, Tensor& delta, double epsilon, const std::optional<Domain>& domain) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    double d = std::clamp(delta.values[i], -epsilon, epsilon);
    if (domain) {
      d = std::clamp(x.values[i] + d, domain->lo, domain->hi) - x.values[i];
      d = std::clamp(d, -epsilon, epsilon);
    }
    delta.values[i] = d;
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, ErrorCode::ShapeMismatch, "add: shapes differ");
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  return out;
}

// delta = epsilon * sign(grad_x L(x, label)), projected onto the domain.
inline Tensor fgsm(const Model& model, const Tensor& x, const std::vector<std::size_t>& labels, double epsilon,
                   const std::optional<Domain>& domain = std::nullopt) {
  require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorCode::InvalidArgument, "epsilon must be >= 0");
  const Tensor g = input_gradient(model, x, labels);
  Tensor delta = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < delta.size(); ++i) delta.values[i] = epsilon * sign_of(g.values[i]);
  project(x, delta, epsilon, domain);
  return delta;
}

// Iterated sign steps with per-coordinate clamping to the epsilon box.
inline Tensor pgd(const Model& model, const Tensor& x, const std::vector<std::size_t>& labels,
                  const AttackSpec& spec) {
  spec.validate();
  Tensor delta = Tensor::zeros(x.shape);
  for (std::size_t t = 0; t < spec.steps; ++t) {
    const Tensor g = input_gradient(model, add(x, delta), labels);
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta.values[i] = delta.values[i] + spec.step_size * sign_of(g.values[i]);
    project(x, delta, spec.epsilon, spec.clip_domain);
  }
  return delta;
}

struct TargetedResult {
  Tensor delta;
  std::vector<bool> success;
};

// Descends the loss toward `target`; a row stops moving as soon as it is
// classified as the target.
inline TargetedResult targeted_pgd(const Model& model, const Tensor& x, const std::vector<std::size_t>& source,
                                   std::size_t target, const AttackSpec& spec) {
  spec.validate();
  require(target < model.n_categories(), ErrorCode::InvalidArgument, "target category out of range");
  for (std::size_t k : source)
    require(k != target, ErrorCode::InvalidArgument, "targeted attack needs source != target");
  const std::size_t rows = x.rows(), cols = x.cols();
  TargetedResult res{Tensor::zeros(x.shape), std::vector<bool>(rows, false)};
  const std::vector<std::size_t> targets(rows, target);
  auto refresh = [&](const Tensor& at) {
    const auto pred = predict(model, at);
    bool all = true;
    for (std::size_t r = 0; r < rows; ++r) {
      if (pred[r] == target) res.success[r] = true;
      all = all && res.success[r];
    }
    return all;
  };
  if (refresh(x)) return res;
  for (std::size_t t = 0; t < spec.steps; ++t) {
    const Tensor at = add(x, res.delta);
    const Tensor g = input_gradient(model, at, targets);
    for (std::size_t r = 0; r < rows; ++r) {
      if (res.success[r]) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        res.delta.values[i] = res.delta.values[i] - spec.step_size * sign_of(g.values[i]);
      }
    }
    project(x, res.delta, spec.epsilon, spec.clip_domain);
    if (refresh(add(x, res.delta))) break;
  }
  return res;
}

struct DeepFoolResult {
  Tensor delta;
  std::vector<bool> converged;  // argmax flipped within the step budget
};

// Iterative linearization toward the nearest competing category with the
// closed-form minimal L2 step; the accumulated step is scaled by (1 + overshoot).
// No epsilon clamp is applied.
inline DeepFoolResult deepfool(const Model& model, const Tensor& x, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = model.n_categories();
  require(n >= 2, ErrorCode::InvalidArgument, "deepfool needs at least 2 categories");
  const std::size_t rows = x.rows(), cols = x.cols();
  DeepFoolResult res{Tensor::zeros(x.shape), std::vector<bool>(rows, false)};
  const double scale = 1.0 + spec.overshoot;
  Model& m = const_cast<Model&>(model);

  for (std::size_t r = 0; r < rows; ++r) {
    const Tensor x0 = x.slice_rows(r, 1);
    const std::size_t k_hat = predict(model, x0)[0];
    std::vector<double> total(cols, 0.0);
    auto current = [&] {
      Tensor xi = x0;
      for (std::size_t c = 0; c < cols; ++c) xi.values[c] = x0.values[c] + scale * total[c];
      return xi;
    };
    for (std::size_t it = 0;; ++it) {
      const Tensor xi = current();
      if (predict(model, xi)[0] != k_hat) {
        res.converged[r] = true;
        break;
      }
      if (it == spec.steps) break;

      Graph g;
      const NodeId in = g.variable(xi);
      const NodeId z = m.forward(g, in, BnRoute::Main, Phase::Eval, {false, false});
      const std::vector<double> f = g.value(z).values;
      std::vector<std::vector<double>> grads(n);
      for (std::size_t l = 0; l < n; ++l) {
        std::vector<double> onehot(n, 0.0);
        onehot[l] = 1.0;
        const NodeId pick = g.sum(g.mul(z, g.constant(Tensor({1, n}, onehot))));
        g.tensor(in).zero_grad();
        g.backward(pick);
        grads[l] = g.value(in).grad;
      }

      double best = std::numeric_limits<double>::infinity();
      std::vector<double> step;
      for (std::size_t l = 0; l < n; ++l) {
        if (l == k_hat) continue;
        std::vector<double> w(cols);
        double norm2 = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          w[c] = grads[l][c] - grads[k_hat][c];
          norm2 += w[c] * w[c];
        }
        if (norm2 == 0.0) continue;
        const double gap = std::abs(f[l] - f[k_hat]);
        const double dist = gap / std::sqrt(norm2);
        if (dist < best) {
          best = dist;
          step.assign(cols, 0.0);
          for (std::size_t c = 0; c < cols; ++c) step[c] = gap / norm2 * w[c];
        }
      }
      if (step.empty()) break;  // flat logits: no direction to move
      for (std::size_t c = 0; c < cols; ++c) total[c] += step[c];
    }
    for (std::size_t c = 0; c < cols; ++c) res.delta.values[r * cols + c] = scale * total[c];
  }
  return res;
}

// Untargeted perturbation of every row against its label, dispatched on kind.
inline Tensor perturb(const Model& model, const Tensor& x, const std::vector<std::size_t>& labels,
                      const AttackSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::FGSM: return fgsm(model, x, labels, spec.epsilon, spec.clip_domain);
    case AttackKind::PGD: return pgd(model, x, labels, spec);
    case AttackKind::DeepFool: return deepfool(model, x, spec).delta;
  }
  fail(ErrorCode::InvalidArgument, "unknown attack kind");
}

// Copy of `data` with every input replaced by its adversarial counterpart.
inline Dataset adversarial_dataset(const Model& model, const Dataset& data, const AttackSpec& spec) {
  const Tensor delta = perturb(model, data.inputs, data.labels, spec);
  return Dataset(add(data.inputs, delta), data.labels, data.n_categories, data.domain);
}

}  // namespace advamd

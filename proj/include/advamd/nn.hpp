#pragma once

// Layers and the model container. DualBatchNorm keeps two disjoint sets of
// running statistics (Main for benign traffic, Aux for adversarial traffic)
// over one shared pair of affine parameters.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "advamd/autodiff.hpp"
#include "advamd/error.hpp"
#include "advamd/hash.hpp"
#include "advamd/random.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

enum class BnRoute { Main, Aux };
enum class Phase { Train, Eval };

struct ForwardOptions {
  // Train phase only: EMA-update the selected route's running statistics.
  bool update_stats = true;
  // Bind parameters as gradient-receiving leaves. Attacks turn this off so
  // the model's gradient buffers are never touched.
  bool param_grads = true;
};

struct BnStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::uint64_t count = 0;

  explicit BnStats(std::size_t width = 0) : running_mean(width, 0.0), running_var(width, 1.0) {}

  bool operator==(const BnStats&) const = default;
};

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  DenseLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
    require(weight.rank() == 2 && bias.rank() == 1 && bias.shape[0] == weight.shape[0],
            ErrorCode::ShapeMismatch, "dense layer needs W[out x in] and b[out]");
    weight.requires_grad = true;
    bias.requires_grad = true;
  }

  // He-normal weights, zero bias.
  static DenseLayer init(std::size_t in, std::size_t out, Rng& rng) {
    std::vector<double> w(out * in);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : w) v = scale * rng.normal();
    return DenseLayer(Tensor({out, in}, std::move(w)), Tensor::zeros({out}));
  }

  std::size_t in_width() const { return weight.shape[1]; }
  std::size_t out_width() const { return weight.shape[0]; }

  NodeId forward(Graph& g, NodeId x, const ForwardOptions& opts) {
    const NodeId w = opts.param_grads ? g.leaf(weight) : g.leaf_const(weight);
    const NodeId b = opts.param_grads ? g.leaf(bias) : g.leaf_const(bias);
    return g.linear(x, w, b);
  }
};

struct ReluLayer {
  NodeId forward(Graph& g, NodeId x, const ForwardOptions&) { return g.relu(x); }
};

struct DualBatchNorm {
  Tensor gamma;
  Tensor beta;
  BnStats main_stats;
  BnStats aux_stats;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit DualBatchNorm(std::size_t width, double momentum_ = 0.1, double eps_ = 1e-5)
      : gamma(Tensor::filled({width}, 1.0, true)),
        beta(Tensor::zeros({width}, true)),
        main_stats(width),
        aux_stats(width),
        momentum(momentum_),
        eps(eps_) {
    require(width > 0, ErrorCode::InvalidArgument, "batch norm width must be positive");
    require(momentum > 0.0 && momentum < 1.0, ErrorCode::InvalidArgument, "momentum must be in (0,1)");
    require(eps > 0.0, ErrorCode::InvalidArgument, "epsilon must be positive");
  }

  std::size_t width() const { return gamma.size(); }

  BnStats& stats(BnRoute route) { return route == BnRoute::Main ? main_stats : aux_stats; }
  const BnStats& stats(BnRoute route) const { return route == BnRoute::Main ? main_stats : aux_stats; }

  NodeId forward(Graph& g, NodeId x, BnRoute route, Phase phase, const ForwardOptions& opts) {
    require(g.value(x).rank() == 2 && g.value(x).cols() == width(), ErrorCode::WidthMismatch,
            "batch norm width " + std::to_string(width()) + " vs input " + shape_str(g.value(x).shape));
    const NodeId gm = opts.param_grads ? g.leaf(gamma) : g.leaf_const(gamma);
    const NodeId bt = opts.param_grads ? g.leaf(beta) : g.leaf_const(beta);
    if (phase == Phase::Eval) {
      const BnStats& s = stats(route);
      return g.batch_norm_eval(x, gm, bt, s.running_mean, s.running_var, eps);
    }
    const NodeId y = g.batch_norm_train(x, gm, bt, eps);
    if (opts.update_stats) {
      BnStats& s = stats(route);
      const auto& side = g.side(y);
      const std::size_t w = width();
      for (std::size_t c = 0; c < w; ++c) {
        s.running_mean[c] = (1.0 - momentum) * s.running_mean[c] + momentum * side[c];
        s.running_var[c] = (1.0 - momentum) * s.running_var[c] + momentum * side[w + c];
      }
      ++s.count;
    }
    return y;
  }
};

using Layer = std::variant<DenseLayer, ReluLayer, DualBatchNorm>;

// Standalone batch-norm evaluation on a [B x F] batch.
inline Tensor bn_forward(DualBatchNorm& layer, const Tensor& batch, BnRoute route, Phase phase) {
  require(batch.rank() == 2 && batch.cols() == layer.width(), ErrorCode::WidthMismatch,
          "batch width does not match layer");
  require(phase == Phase::Eval || batch.rows() >= 2, ErrorCode::BatchTooSmall,
          "train-mode batch norm needs at least 2 rows");
  Graph g;
  const NodeId x = g.leaf_const(batch);
  return g.value(layer.forward(g, x, route, phase, {true, false}));
}

class Model {
 public:
  Model(std::vector<Layer> layers, std::size_t n_categories)
      : layers_(std::move(layers)), n_categories_(n_categories) {
    require(!layers_.empty(), ErrorCode::InvalidArgument, "model needs at least one layer");
    require(n_categories_ >= 1, ErrorCode::InvalidArgument, "model needs at least one category");
    validate();
  }

  BnRoute bn_route() const { return route_; }
  Phase phase() const { return phase_; }
  void set_route(BnRoute r) { route_ = r; }
  void set_phase(Phase p) { phase_ = p; }

  std::size_t n_categories() const { return n_categories_; }
  std::size_t input_width() const { return input_width_; }
  bool aux_initialized() const { return aux_initialized_; }
  void mark_aux_initialized() { aux_initialized_ = true; }
  bool has_batch_norm() const {
    for (const Layer& l : layers_)
      if (std::holds_alternative<DualBatchNorm>(l)) return true;
    return false;
  }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Forward with explicit route and phase.
  NodeId forward(Graph& g, NodeId x, BnRoute route, Phase phase, const ForwardOptions& opts = {}) {
    require(g.value(x).rank() == 2 && g.value(x).cols() == input_width_, ErrorCode::WidthMismatch,
            "model input width " + std::to_string(input_width_) + " vs batch " +
                shape_str(g.value(x).shape));
    NodeId h = x;
    for (Layer& layer : layers_) {
      h = std::visit(
          [&](auto& l) -> NodeId {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DualBatchNorm>)
              return l.forward(g, h, route, phase, opts);
            else
              return l.forward(g, h, opts);
          },
          layer);
    }
    return h;
  }

  // Forward using the model's stored route and phase.
  NodeId forward(Graph& g, NodeId x, const ForwardOptions& opts = {}) {
    return forward(g, x, route_, phase_, opts);
  }

  // Eval-phase logits; never mutates the model.
  Tensor logits(const Tensor& batch, BnRoute route = BnRoute::Main) const {
    Graph g;
    const NodeId x = g.leaf_const(batch);
    // Eval phase neither writes statistics nor binds gradient-receiving leaves.
    return g.value(const_cast<Model*>(this)->forward(g, x, route, Phase::Eval, {false, false}));
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Layer& layer : layers_) {
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        out.push_back(&d->weight);
        out.push_back(&d->bias);
      } else if (auto* bn = std::get_if<DualBatchNorm>(&layer)) {
        out.push_back(&bn->gamma);
        out.push_back(&bn->beta);
      }
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (Tensor* t : const_cast<Model*>(this)->parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (Tensor* p : parameters()) p->zero_grad();
  }

  // Compact layer descriptor, e.g. "dense:2x16,bn:16,relu,dense:16x4".
  std::string topology() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i) os << ',';
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DenseLayer>)
              os << "dense:" << l.in_width() << 'x' << l.out_width();
            else if constexpr (std::is_same_v<L, DualBatchNorm>)
              os << "bn:" << l.width();
            else
              os << "relu";
          },
          layers_[i]);
    }
    return os.str();
  }

  // Hash over every parameter value and both statistics sets.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.text(topology());
    for (const Layer& layer : layers_) {
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        h.doubles(d->weight.values);
        h.doubles(d->bias.values);
      } else if (const auto* bn = std::get_if<DualBatchNorm>(&layer)) {
        h.doubles(bn->gamma.values);
        h.doubles(bn->beta.values);
        for (const BnStats* s : {&bn->main_stats, &bn->aux_stats}) {
          h.doubles(s->running_mean);
          h.doubles(s->running_var);
          h.u64(s->count);
        }
      }
    }
    return h.digest();
  }

 private:
  void validate() {
    std::size_t width = 0;
    bool have_width = false;
    for (const Layer& layer : layers_) {
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        if (!have_width) {
          input_width_ = d->in_width();
          have_width = true;
        } else {
          require(d->in_width() == width, ErrorCode::WidthMismatch,
                  "dense layer input " + std::to_string(d->in_width()) + " after width " +
                      std::to_string(width));
        }
        width = d->out_width();
      } else if (const auto* bn = std::get_if<DualBatchNorm>(&layer)) {
        if (!have_width) {
          input_width_ = bn->width();
          have_width = true;
        } else {
          require(bn->width() == width, ErrorCode::WidthMismatch, "batch norm width mismatch");
        }
        width = bn->width();
      }
    }
    require(have_width, ErrorCode::InvalidArgument, "model has no layer with a width");
    require(width == n_categories_, ErrorCode::WidthMismatch,
            "output width " + std::to_string(width) + " vs " + std::to_string(n_categories_) +
                " categories");
  }

  std::vector<Layer> layers_;
  std::size_t n_categories_ = 0;
  std::size_t input_width_ = 0;
  BnRoute route_ = BnRoute::Main;
  Phase phase_ = Phase::Eval;
  bool aux_initialized_ = false;
};

// Dense -> [DualBatchNorm] -> ReLU for each hidden width, then a Dense head.
inline Model make_mlp(std::size_t input_width, const std::vector<std::size_t>& hidden,
                      std::size_t n_categories, bool batch_norm, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t width = input_width;
  for (std::size_t h : hidden) {
    layers.emplace_back(DenseLayer::init(width, h, rng));
    if (batch_norm) layers.emplace_back(DualBatchNorm(h));
    layers.emplace_back(ReluLayer{});
    width = h;
  }
  layers.emplace_back(DenseLayer::init(width, n_categories, rng));
  return Model(std::move(layers), n_categories);
}

// Deep copy whose auxiliary statistics start as a copy of the main ones.
inline Model clone_with_aux_bn(const Model& target) {
  Model amended = target;
  for (Layer& layer : amended.layers())
    if (auto* bn = std::get_if<DualBatchNorm>(&layer)) bn->aux_stats = bn->main_stats;
  amended.mark_aux_initialized();
  return amended;
}

// argmax with ties broken toward the lowest index.
inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t n = logits.cols();
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  return best;
}

inline std::vector<std::size_t> predict(const Model& model, const Tensor& batch,
                                        BnRoute route = BnRoute::Main) {
  const Tensor z = model.logits(batch, route);
  std::vector<std::size_t> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = argmax_row(z, r);
  return out;
}

}  // namespace advamd

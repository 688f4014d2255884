#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "advamd/amendment.hpp"
#include "advamd/attacks.hpp"
#include "advamd/data.hpp"

using namespace advamd;

namespace {

// logits = W x + b, one Dense layer.
Model linear_model(std::size_t in, std::size_t n, std::vector<double> w, std::vector<double> b) {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer(Tensor({n, in}, std::move(w)), Tensor({n}, std::move(b))));
  return Model(std::move(layers), n);
}

Dataset two_blobs(std::size_t per_class, std::uint64_t seed, double stddev = 0.3) {
  return make_gaussian_blobs(2, per_class, {{-1.0, 0.0}, {1.0, 0.0}}, stddev, seed);
}

Model trained_model(const Dataset& data, const std::vector<std::size_t>& hidden, bool bn, std::uint64_t seed,
                    std::size_t epochs = 30) {
  Model m = make_mlp(data.width(), hidden, data.n_categories, bn, seed);
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.seed = seed;
  vanilla_train(m, data, cfg);
  return m;
}

double mean_loss(const Model& m, const Tensor& x, const std::vector<std::size_t>& y) {
  Graph g;
  Model& mm = const_cast<Model&>(m);
  return g.value(g.softmax_cross_entropy(mm.forward(g, g.constant(x), BnRoute::Main, Phase::Eval, {false, false}), y))
      .item();
}

}  // namespace

TEST(Fgsm, SignOfGradient) {
  // class 0 has zero weights, so d loss / dx = p1 * w1 with w1 = (0.3, -0.2)
  const Model m = linear_model(2, 2, {0, 0, 0.3, -0.2}, {0, 0});
  const Tensor g = input_gradient(m, Tensor::matrix(1, 2, {0.4, 0.1}), {0});
  EXPECT_GT(g.values[0], 0.0);
  EXPECT_LT(g.values[1], 0.0);
  const Tensor d = fgsm(m, Tensor::matrix(1, 2, {0.4, 0.1}), {0}, 0.1);
  EXPECT_EQ(d.values, (std::vector<double>{0.1, -0.1}));
}

TEST(Fgsm, ZeroGradientGivesZeroComponent) {
  const Model m = linear_model(3, 2, {0, 0, 0, 1, 0, -1}, {0, 0});
  const Tensor d = fgsm(m, Tensor::matrix(1, 3, {0.2, 0.3, 0.4}), {0}, 0.05);
  EXPECT_EQ(d.values, (std::vector<double>{0.05, 0.0, -0.05}));
}

TEST(Fgsm, ZeroBudget) {
  const Model m = make_mlp(2, {4}, 2, true, 3);
  const Tensor x = Tensor::matrix(2, 2, {0.1, 0.2, -0.3, 0.4});
  const Tensor d = fgsm(m, x, {0, 1}, 0.0);
  for (double v : d.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(add(x, d).values, x.values);
}

TEST(Fgsm, ClipDomainKeepsInputsInside) {
  const Model m = linear_model(2, 2, {0, 0, 1, -1}, {0, 0});
  const Tensor x = Tensor::matrix(1, 2, {0.97, 0.02});
  const Tensor d = fgsm(m, x, {0}, 0.1, Domain{0.0, 1.0});
  const Tensor xa = add(x, d);
  EXPECT_LE(xa.values[0], 1.0);
  EXPECT_GE(xa.values[1], 0.0);
  EXPECT_NEAR(d.values[0], 0.03, 1e-15);
  EXPECT_NEAR(d.values[1], -0.02, 1e-15);
}

TEST(Fgsm, DegradesLinearModel) {
  const Dataset train = two_blobs(200, 1, 0.5), test = two_blobs(500, 2, 0.5);
  const Model m = trained_model(train, {}, false, 3);
  const double clean = evaluate(m, test);
  AttackSpec spec;
  spec.epsilon = 0.1;
  const double attacked = evaluate(m, adversarial_dataset(m, test, spec));
  EXPECT_LT(attacked, clean);
}

TEST(Pgd, ClampArithmetic) {
  // class 1 weights (1, 1): gradient signs stay (+, +)
  const Model m = linear_model(2, 2, {0, 0, 1, 1}, {0, 0});
  const Tensor x = Tensor::matrix(1, 2, {0.0, 0.0});
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 0.1;
  spec.step_size = 0.07;
  spec.steps = 1;
  EXPECT_EQ(pgd(m, x, {0}, spec).values, (std::vector<double>{0.07, 0.07}));
  spec.steps = 2;
  EXPECT_EQ(pgd(m, x, {0}, spec).values, (std::vector<double>{0.1, 0.1}));
}

TEST(Pgd, OneFullStepEqualsFgsm) {
  const Dataset data = two_blobs(50, 4);
  const Model m = trained_model(data, {8}, true, 5, 5);
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 0.13;
  spec.step_size = 0.13;
  spec.steps = 1;
  const Tensor a = pgd(m, data.inputs, data.labels, spec);
  const Tensor b = fgsm(m, data.inputs, data.labels, 0.13);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.values.data(), b.values.data(), a.size() * sizeof(double)), 0);
}

TEST(Pgd, AtLeastAsStrongAsFgsm) {
  const Dataset train = make_gaussian_blobs(3, 100, {{0, 0}, {1, 0}, {0, 1}}, 0.3, 6);
  const Dataset test = make_gaussian_blobs(3, 334, {{0, 0}, {1, 0}, {0, 1}}, 0.3, 7).subset([] {
    std::vector<std::size_t> idx(1000);
    for (std::size_t i = 0; i < 1000; ++i) idx[i] = i;
    return idx;
  }());
  const Model m = trained_model(train, {16}, true, 8);
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 0.1;
  spec.step_size = 0.02;
  spec.steps = 10;
  const Tensor xf = add(test.inputs, fgsm(m, test.inputs, test.labels, 0.1));
  const Tensor xp = add(test.inputs, pgd(m, test.inputs, test.labels, spec));
  EXPECT_GE(mean_loss(m, xp, test.labels), mean_loss(m, xf, test.labels));
}

TEST(Pgd, WarnsWhenStepExceedsBudget) {
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 0.01;
  spec.step_size = 0.05;
  EXPECT_EQ(spec.warnings().size(), 1u);
  spec.step_size = 0.005;
  EXPECT_TRUE(spec.warnings().empty());
}

TEST(AttackSpec, Validation) {
  AttackSpec spec;
  spec.epsilon = std::numeric_limits<double>::infinity();
  EXPECT_THROW(spec.validate(), Error);
  spec.epsilon = -0.1;
  EXPECT_THROW(spec.validate(), Error);
  spec.epsilon = 0.1;
  spec.steps = 0;
  EXPECT_THROW(spec.validate(), Error);
  EXPECT_EQ(parse_attack_kind("deepfool"), AttackKind::DeepFool);
  EXPECT_THROW(parse_attack_kind("houdini"), Error);
}

TEST(Attacks, BudgetHoldsOnEveryCoordinate) {
  const Dataset data = make_gaussian_blobs(3, 80, {{0, 0}, {1, 0}, {0, 1}}, 0.4, 9);
  const Model m = trained_model(data, {12}, true, 10, 10);
  for (double eps : {0.01, 0.1, 0.3}) {
    const double cap = std::nextafter(eps, 1.0);
    AttackSpec spec;
    spec.epsilon = eps;
    spec.kind = AttackKind::PGD;
    spec.step_size = eps / 4;
    for (const Tensor& d : {fgsm(m, data.inputs, data.labels, eps), pgd(m, data.inputs, data.labels, spec),
                            targeted_pgd(m, data.subset(data.indices_of(0)).inputs,
                                         data.subset(data.indices_of(0)).labels, 2, spec)
                                .delta})
      for (double v : d.values) EXPECT_LE(std::abs(v), cap);
  }
}

TEST(Attacks, StrengthGrowsWithEpsilon) {
  double small = 0.0, large = 0.0;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const Dataset train = two_blobs(100, 100 + s, 0.5), test = two_blobs(200, 200 + s, 0.5);
    const Model m = trained_model(train, {8}, true, 300 + s, 10);
    AttackSpec spec;
    spec.epsilon = 0.01;
    small += evaluate(m, adversarial_dataset(m, test, spec));
    spec.epsilon = 0.1;
    large += evaluate(m, adversarial_dataset(m, test, spec));
  }
  EXPECT_LE(large, small);
}

TEST(Attacks, NeverMutateModel) {
  const Dataset data = two_blobs(40, 11);
  Model m = trained_model(data, {6}, true, 12, 3);
  const Model before = m;
  for (Tensor* p : m.parameters()) p->zero_grad();
  AttackSpec spec;
  for (AttackKind k : {AttackKind::FGSM, AttackKind::PGD, AttackKind::DeepFool}) {
    spec.kind = k;
    perturb(m, data.inputs, data.labels, spec);
  }
  targeted_pgd(m, data.subset(data.indices_of(0)).inputs, data.subset(data.indices_of(0)).labels, 1, spec);
  EXPECT_EQ(m.fingerprint(), before.fingerprint());
  const auto& bn = std::get<DualBatchNorm>(m.layers()[1]);
  const auto& bn0 = std::get<DualBatchNorm>(before.layers()[1]);
  EXPECT_EQ(bn.main_stats, bn0.main_stats);
  EXPECT_EQ(bn.aux_stats, bn0.aux_stats);
  for (const Tensor* p : std::as_const(m).parameters())
    for (double g : p->grad) EXPECT_EQ(g, 0.0);
}

TEST(DeepFool, LinearClosedForm) {
  // f(x) = z1 - z0 = w.x + b with class 0 weights zero
  const std::vector<double> w = {0.8, -0.6};
  const double b = 0.3;
  const Model m = linear_model(2, 2, {0, 0, w[0], w[1]}, {0, b});
  const Tensor x = Tensor::matrix(1, 2, {0.5, 1.2});
  const double f = w[0] * 0.5 + w[1] * 1.2 + b;
  ASSERT_LT(f, 0.0);
  AttackSpec spec;
  spec.kind = AttackKind::DeepFool;
  spec.overshoot = 0.02;
  const auto res = deepfool(m, x, spec);
  EXPECT_TRUE(res.converged[0]);
  const double n2 = w[0] * w[0] + w[1] * w[1];
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(res.delta.values[c], -(f / n2) * w[c] * 1.02, 1e-14);
  EXPECT_EQ(predict(m, add(x, res.delta))[0], 1u);
}

TEST(DeepFool, PointOnBoundaryDoesNotMove) {
  const Model m = linear_model(2, 2, {0, 0, 1, 1}, {0, 0});
  AttackSpec spec;
  spec.kind = AttackKind::DeepFool;
  spec.overshoot = 0.0;
  const auto res = deepfool(m, Tensor::matrix(1, 2, {0.5, -0.5}), spec);
  EXPECT_NEAR(std::abs(res.delta.values[0]) + std::abs(res.delta.values[1]), 0.0, 1e-15);
}

TEST(DeepFool, OvershootScalesNorm) {
  const Model m = linear_model(2, 3, {0, 0, 1, 0.5, -0.5, 1}, {0, -0.2, -0.4});
  const Tensor x = Tensor::matrix(1, 2, {-0.4, -0.3});
  AttackSpec spec;
  spec.kind = AttackKind::DeepFool;
  spec.overshoot = 0.02;
  const auto big = deepfool(m, x, spec);
  spec.overshoot = 0.0;
  const auto plain = deepfool(m, x, spec);
  double nb = 0.0, np = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    nb += big.delta.values[c] * big.delta.values[c];
    np += plain.delta.values[c] * plain.delta.values[c];
  }
  ASSERT_GT(np, 0.0);
  EXPECT_NEAR(std::sqrt(nb / np), 1.02, 1e-12);
}

TEST(DeepFool, ReportsNonConvergence) {
  const Model m = linear_model(2, 2, {0, 0, 1, 1}, {0, -100});
  AttackSpec spec;
  spec.kind = AttackKind::DeepFool;
  spec.steps = 1;
  spec.overshoot = 0.0;
  // the linear step lands on the boundary where the tie keeps class 0
  const auto res = deepfool(m, Tensor::matrix(1, 2, {0.0, 0.0}), spec);
  EXPECT_EQ(res.delta.size(), 2u);
  const auto pred = predict(m, add(Tensor::matrix(1, 2, {0.0, 0.0}), res.delta))[0];
  EXPECT_EQ(res.converged[0], pred != 0u);
}

TEST(TargetedPgd, ConstantClassifierSucceedsImmediately) {
  const Model m = linear_model(2, 3, std::vector<double>(6, 0.0), {0, 5, 0});
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  const auto res = targeted_pgd(m, Tensor::matrix(2, 2, {0.1, 0.2, 0.3, 0.4}), {0, 2}, 1, spec);
  EXPECT_TRUE(res.success[0]);
  EXPECT_TRUE(res.success[1]);
  for (double v : res.delta.values) EXPECT_EQ(v, 0.0);
}

TEST(TargetedPgd, ZeroBudgetFails) {
  const Model m = linear_model(2, 2, {1, 0, -1, 0}, {0, 0});
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 0.0;
  const auto res = targeted_pgd(m, Tensor::matrix(1, 2, {0.5, 0.0}), {0}, 1, spec);
  EXPECT_FALSE(res.success[0]);
}

TEST(TargetedPgd, GenerousBudgetOnLinearTask) {
  const Dataset train = two_blobs(200, 13), test = two_blobs(500, 14);
  const Model m = trained_model(train, {}, false, 15);
  const Dataset cls0 = test.subset(test.indices_of(0));
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  spec.epsilon = 3.0;
  spec.step_size = 0.2;
  spec.steps = 30;
  const auto res = targeted_pgd(m, cls0.inputs, cls0.labels, 1, spec);
  std::size_t hits = 0;
  for (bool s : res.success) hits += s;
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(res.success.size()), 0.9);
}

TEST(TargetedPgd, RejectsSourceEqualTarget) {
  const Model m = linear_model(2, 2, {1, 0, -1, 0}, {0, 0});
  AttackSpec spec;
  spec.kind = AttackKind::PGD;
  EXPECT_THROW(targeted_pgd(m, Tensor::matrix(1, 2, {0.5, 0.0}), {1}, 1, spec), Error);
}

#include <gtest/gtest.h>

#include <cmath>

#include "advamd/nn.hpp"
#include "advamd/random.hpp"

using namespace advamd;

namespace {

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.values) v = rng.normal(0.5, 2.0);
  return t;
}

DualBatchNorm& first_bn(Model& m) {
  for (Layer& l : m.layers())
    if (auto* bn = std::get_if<DualBatchNorm>(&l)) return *bn;
  throw std::logic_error("no batch norm");
}

void train_pass(Model& m, const Tensor& x, BnRoute route) {
  Graph g;
  m.forward(g, g.constant(x), route, Phase::Train, {true, false});
}

}  // namespace

TEST(BatchNorm, TrainNormalizesColumn) {
  DualBatchNorm bn(1);
  const Tensor out = bn_forward(bn, Tensor::matrix(3, 1, {1, 2, 3}), BnRoute::Main, Phase::Train);
  const double s = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(out.values[0], -1.2247, 1e-4);
  EXPECT_NEAR(out.values[1], 0.0, 1e-15);
  EXPECT_NEAR(out.values[2], 1.2247, 1e-4);
  EXPECT_NEAR(out.values[2], s, 1e-12);
}

TEST(BatchNorm, EvalWithIdentityStats) {
  DualBatchNorm bn(2);
  const Tensor x = Tensor::matrix(2, 2, {0.3, -4.0, 1.5, 2.0});
  const Tensor out = bn_forward(bn, x, BnRoute::Main, Phase::Eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out.values[i], x.values[i] / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_EQ(bn.main_stats, BnStats(2));
}

TEST(BatchNorm, AuxTrainingLeavesMainUntouched) {
  DualBatchNorm bn(3), fresh(3);
  bn_forward(bn, random_batch(5, 3, 1), BnRoute::Aux, Phase::Train);
  bn_forward(bn, random_batch(5, 3, 2), BnRoute::Aux, Phase::Train);
  const Tensor probe = random_batch(4, 3, 3);
  const Tensor a = bn_forward(bn, probe, BnRoute::Main, Phase::Eval);
  const Tensor b = bn_forward(fresh, probe, BnRoute::Main, Phase::Eval);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(bn.main_stats, fresh.main_stats);
  EXPECT_EQ(bn.aux_stats.count, 2u);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  DualBatchNorm bn(4);
  const Tensor out = bn_forward(bn, random_batch(64, 4, 9), BnRoute::Main, Phase::Train);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 64; ++r) mean += out.at(r, c);
    mean /= 64.0;
    for (std::size_t r = 0; r < 64; ++r) var += (out.at(r, c) - mean) * (out.at(r, c) - mean);
    var /= 64.0;
    EXPECT_LT(std::abs(mean), 1e-10);
    // eps only shrinks the variance by var/(var+eps)
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(BatchNorm, EmaUpdateIsExact) {
  DualBatchNorm bn(2, 0.25);
  const Tensor x = random_batch(6, 2, 4);
  bn.aux_stats.running_mean = {0.5, -1.0};
  bn.aux_stats.running_var = {2.0, 3.0};
  std::vector<double> mean(2, 0.0), var(2, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t r = 0; r < 6; ++r) mean[c] += x.at(r, c);
    mean[c] /= 6.0;
    for (std::size_t r = 0; r < 6; ++r) var[c] += (x.at(r, c) - mean[c]) * (x.at(r, c) - mean[c]);
    var[c] /= 6.0;
  }
  bn_forward(bn, x, BnRoute::Aux, Phase::Train);
  EXPECT_DOUBLE_EQ(bn.aux_stats.running_mean[0], 0.75 * 0.5 + 0.25 * mean[0]);
  EXPECT_DOUBLE_EQ(bn.aux_stats.running_mean[1], 0.75 * -1.0 + 0.25 * mean[1]);
  EXPECT_DOUBLE_EQ(bn.aux_stats.running_var[0], 0.75 * 2.0 + 0.25 * var[0]);
  EXPECT_DOUBLE_EQ(bn.aux_stats.running_var[1], 0.75 * 3.0 + 0.25 * var[1]);
  EXPECT_EQ(bn.main_stats, BnStats(2));
}

TEST(BatchNorm, Errors) {
  DualBatchNorm bn(3);
  try {
    bn_forward(bn, Tensor::matrix(1, 3, {1, 2, 3}), BnRoute::Main, Phase::Train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BatchTooSmall);
  }
  try {
    bn_forward(bn, Tensor::matrix(2, 2, {1, 2, 3, 4}), BnRoute::Main, Phase::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WidthMismatch);
  }
  // a single row is fine in eval
  EXPECT_NO_THROW(bn_forward(bn, Tensor::matrix(1, 3, {1, 2, 3}), BnRoute::Main, Phase::Eval));
}

TEST(Model, IdentityDense) {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::zeros({2})));
  Model m(std::move(layers), 2);
  const Tensor x = Tensor::matrix(3, 2, {0.1, -0.2, 3.0, 4.0, -5.5, 6.25});
  EXPECT_EQ(m.logits(x).values, x.values);
}

TEST(Model, WidthMismatch) {
  Model m = make_mlp(3, {4}, 2, true, 1);
  try {
    m.logits(Tensor::zeros({2, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WidthMismatch);
  }
}

TEST(Model, HeadWidthMustMatchCategories) {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer(Tensor::zeros({3, 2}), Tensor::zeros({3})));
  EXPECT_THROW(Model(std::move(layers), 2), Error);
}

TEST(Model, RoutesDivergeAfterDifferentStats) {
  Model m = clone_with_aux_bn(make_mlp(2, {5}, 3, true, 2));
  train_pass(m, random_batch(8, 2, 10), BnRoute::Aux);
  const Tensor x = random_batch(4, 2, 11);
  EXPECT_NE(m.logits(x, BnRoute::Main).values, m.logits(x, BnRoute::Aux).values);
}

TEST(Model, LogitsAreDeterministic) {
  const Model a = make_mlp(4, {6, 6}, 3, true, 5);
  const Model b = make_mlp(4, {6, 6}, 3, true, 5);
  const Tensor x = random_batch(7, 4, 12);
  EXPECT_EQ(a.logits(x).values, a.logits(x).values);
  EXPECT_EQ(a.logits(x).values, b.logits(x).values);
}

TEST(Model, RouteIsolationAcrossManyAuxPasses) {
  Model trained = make_mlp(3, {4, 4}, 2, true, 6);
  Model control = trained;
  Model m = clone_with_aux_bn(trained);
  for (std::uint64_t s = 0; s < 10; ++s) train_pass(m, random_batch(6, 3, 100 + s), BnRoute::Aux);
  const Tensor probe = random_batch(9, 3, 13);
  EXPECT_EQ(m.logits(probe, BnRoute::Main).values, control.logits(probe, BnRoute::Main).values);
}

TEST(Clone, CopiesMainIntoAux) {
  Model target = make_mlp(2, {4}, 2, true, 3);
  train_pass(target, random_batch(10, 2, 20), BnRoute::Main);
  Model clone = clone_with_aux_bn(target);
  EXPECT_TRUE(clone.aux_initialized());
  EXPECT_EQ(first_bn(clone).aux_stats, first_bn(target).main_stats);
  const Tensor x = random_batch(5, 2, 21);
  EXPECT_EQ(clone.logits(x, BnRoute::Main).values, target.logits(x, BnRoute::Main).values);
  EXPECT_EQ(clone.logits(x, BnRoute::Aux).values, target.logits(x, BnRoute::Main).values);
}

TEST(Clone, IsDeep) {
  Model target = make_mlp(2, {4}, 2, true, 3);
  const BnStats before = first_bn(target).aux_stats;
  const auto weights = std::get<DenseLayer>(target.layers()[0]).weight.values;
  Model clone = clone_with_aux_bn(target);
  first_bn(clone).aux_stats.running_mean[0] = 42.0;
  std::get<DenseLayer>(clone.layers()[0]).weight.values[0] += 1.0;
  EXPECT_EQ(first_bn(target).aux_stats, before);
  EXPECT_EQ(std::get<DenseLayer>(target.layers()[0]).weight.values, weights);
}

TEST(Clone, BatchNormFreeModelIgnoresRoute) {
  Model clone = clone_with_aux_bn(make_mlp(3, {5}, 2, false, 4));
  EXPECT_FALSE(clone.has_batch_norm());
  const Tensor x = random_batch(4, 3, 22);
  EXPECT_EQ(clone.logits(x, BnRoute::Main).values, clone.logits(x, BnRoute::Aux).values);
}

TEST(Model, GammaBetaSharedAcrossRoutes) {
  Model m = clone_with_aux_bn(make_mlp(2, {3}, 2, true, 8));
  // A model has only one gamma and one beta per BN layer, whichever route is used.
  const std::size_t n_params = m.parameters().size();
  EXPECT_EQ(n_params, 6u);  // W1, b1, gamma, beta, W2, b2
  first_bn(m).gamma.values[0] = 3.0;
  const Tensor x = random_batch(3, 2, 23);
  EXPECT_EQ(m.logits(x, BnRoute::Main).values, m.logits(x, BnRoute::Aux).values);
}

TEST(Predict, TiesBreakToLowestIndex) {
  const Tensor z = Tensor::matrix(2, 3, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
  EXPECT_EQ(argmax_row(z, 0), 0u);
  EXPECT_EQ(argmax_row(z, 1), 1u);
}

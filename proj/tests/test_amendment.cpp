#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "advamd/amendment.hpp"

using namespace advamd;

namespace {

Dataset blobs(std::size_t per_class, std::uint64_t seed, double stddev = 0.4) {
  return make_gaussian_blobs(3, per_class, {{0, 0}, {1, 0}, {0, 1}}, stddev, seed);
}

Model pretrained(const Dataset& data, std::uint64_t seed, std::size_t epochs = 10) {
  Model m = make_mlp(data.width(), {8}, data.n_categories, true, seed);
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.seed = seed;
  vanilla_train(m, data, cfg);
  return m;
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const Tensor* p : m.parameters()) out.insert(out.end(), p->values.begin(), p->values.end());
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double path_loss(Model& m, const Tensor& x, const std::vector<std::size_t>& y, BnRoute route,
                 const std::vector<double>& w = {}) {
  Graph g;
  const NodeId z = m.forward(g, g.constant(x), route, Phase::Train, {false, false});
  return g.value(g.softmax_cross_entropy(z, y, w)).item();
}

}  // namespace

TEST(Triplet, MediateArithmetic) {
  double adv = 0, med = 0, d = 0;
  ASSERT_TRUE(detail::materialize(0.5, 0.1, 0.7, 0.1, adv, med, d));
  EXPECT_EQ(med - 0.5, 0.7 * (adv - 0.5));
  EXPECT_NEAR(med, 0.57, 1e-3);
  EXPECT_LE(std::abs(d), 0.1);
  EXPECT_EQ(default_phi(AttackKind::FGSM), 0.7);
  EXPECT_EQ(default_phi(AttackKind::DeepFool), 0.6);
}

TEST(Triplet, ZeroPerturbation) {
  const Dataset data = blobs(20, 1);
  const Model m = pretrained(data, 2, 2);
  AttackSpec spec;
  spec.epsilon = 0.0;
  const TripletSet t = generate_triplets(m, data, spec, 0.7);
  EXPECT_EQ(t.x_adv.values, data.inputs.values);
  EXPECT_EQ(t.x_med.values, data.inputs.values);
  EXPECT_EQ(t.dropped, 0u);
  const AdversarialTriplet one = t.triplet(3);
  EXPECT_EQ(one.x.values, one.x_med.values);
  EXPECT_EQ(one.label, data.labels[3]);
}

TEST(Triplet, PhiLimits) {
  const Dataset data = blobs(20, 3);
  const Model m = pretrained(data, 4, 2);
  AttackSpec spec;
  for (double phi : {1e-6, 1.0 - 1e-6}) {
    const TripletSet t = generate_triplets(m, data, spec, phi);
    for (std::size_t i = 0; i < t.x.size(); ++i) {
      const double toward = phi < 0.5 ? t.x.values[i] : t.x_adv.values[i];
      EXPECT_NEAR(t.x_med.values[i], toward, 1e-6 * spec.epsilon + 1e-15);
    }
  }
}

TEST(Triplet, ExactToTheLastBit) {
  const Dataset data = blobs(40, 5);
  const Model m = pretrained(data, 6, 3);
  AttackSpec spec;
  for (AttackKind kind : {AttackKind::FGSM, AttackKind::PGD, AttackKind::DeepFool}) {
    spec.kind = kind;
    spec.step_size = 0.03;
    const double phi = default_phi(kind);
    const TripletSet t = generate_triplets(m, data, spec, phi);
    EXPECT_EQ(t.phi, phi);
    for (std::size_t i = 0; i < t.x.size(); ++i) {
      const double d = t.x_adv.values[i] - t.x.values[i];
      EXPECT_EQ(t.x_med.values[i] - t.x.values[i], phi * d);
      EXPECT_EQ(t.delta.values[i], d);
      if (kind != AttackKind::DeepFool) {
        EXPECT_LE(std::abs(d), spec.epsilon);
      }
    }
  }
}

TEST(Triplet, InvalidPhi) {
  const Dataset data = blobs(5, 7);
  const Model m = make_mlp(2, {}, 3, false, 1);
  for (double phi : {0.0, 1.0, -0.3, 1.5}) {
    try {
      generate_triplets(m, data, AttackSpec{}, phi);
      FAIL() << phi;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidPhi);
    }
  }
}

TEST(AdvamdStep, PlainSumOfPaths) {
  const Dataset data = blobs(20, 8);
  const Model target = pretrained(data, 9, 3);
  const TripletSet t = generate_triplets(target, data, AttackSpec{}, 0.7);
  Model m = clone_with_aux_bn(target);
  const auto rows = iota(16);
  std::vector<std::size_t> y(t.labels.begin(), t.labels.begin() + 16);

  // independent recomputation on a copy before the step mutates anything
  Model probe = m;
  const double lb = path_loss(probe, t.x.gather_rows(rows), y, BnRoute::Main);
  const double lm = path_loss(probe, t.x_med.gather_rows(rows), y, BnRoute::Main);
  const double la = path_loss(probe, t.x_adv.gather_rows(rows), y, BnRoute::Aux);

  TrainConfig cfg;
  Sgd opt(m.parameters(), cfg.learning_rate, cfg.momentum);
  const StepLosses s = advamd_step(m, opt, t, rows, VulnCoefficients::uniform(3), cfg);
  EXPECT_NEAR(s.benign, lb, 1e-12);
  EXPECT_NEAR(s.mediate, lm, 1e-12);
  EXPECT_NEAR(s.adversarial, la, 1e-12);
  EXPECT_NEAR(s.overall, s.benign + s.mediate + s.adversarial, 1e-12);
}

TEST(AdvamdStep, WeightedDecomposition) {
  const Dataset data = blobs(20, 10);
  const Model target = pretrained(data, 11, 3);
  const TripletSet t = generate_triplets(target, data, AttackSpec{}, 0.7);
  Model m = clone_with_aux_bn(target);
  const auto rows = iota(12);
  std::vector<std::size_t> y(t.labels.begin(), t.labels.begin() + 12);
  const VulnCoefficients vuln{{0.2, 0.9, 0.5}};
  std::vector<double> w;
  for (std::size_t k : y) w.push_back(vuln[k]);
  Model probe = m;
  const double lb = path_loss(probe, t.x.gather_rows(rows), y, BnRoute::Main);
  const double lm = path_loss(probe, t.x_med.gather_rows(rows), y, BnRoute::Main);
  const double la = path_loss(probe, t.x_adv.gather_rows(rows), y, BnRoute::Aux, w);
  TrainConfig cfg;
  cfg.beta1 = 0.5;
  cfg.beta2 = 2.0;
  cfg.beta3 = 1.5;
  Sgd opt(m.parameters(), cfg.learning_rate, cfg.momentum);
  const StepLosses s = advamd_step(m, opt, t, rows, vuln, cfg);
  EXPECT_NEAR(s.adversarial, la, 1e-12);
  EXPECT_NEAR(s.overall, 0.5 * lb + 2.0 * lm + 1.5 * la, 1e-12);
}

TEST(AdvamdStep, BenignOnlyMatchesVanillaStep) {
  const Dataset data = blobs(20, 12);
  const Model target = pretrained(data, 13, 3);
  const TripletSet t = generate_triplets(target, data, AttackSpec{}, 0.7);
  const auto rows = iota(10);
  std::vector<std::size_t> y(t.labels.begin(), t.labels.begin() + 10);
  TrainConfig cfg;
  cfg.beta2 = 0.0;
  cfg.beta3 = 0.0;
  cfg.use_aux_bn = false;

  Model a = target, b = target;
  Sgd oa(a.parameters(), cfg.learning_rate, cfg.momentum), ob(b.parameters(), cfg.learning_rate, cfg.momentum);
  advamd_step(a, oa, t, rows, VulnCoefficients::uniform(3), cfg);
  vanilla_step(b, ob, t.x.gather_rows(rows), y);
  const auto pa = flat_params(a), pb = flat_params(b);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
}

TEST(AdvamdStep, ZeroVulnerabilityRemovesAdversarialPath) {
  const Dataset data = blobs(20, 14);
  const Model target = pretrained(data, 15, 3);
  const TripletSet t = generate_triplets(target, data, AttackSpec{}, 0.7);
  const auto rows = iota(14);
  TrainConfig with_zero;
  TrainConfig no_beta3;
  no_beta3.beta3 = 0.0;
  Model a = clone_with_aux_bn(target), b = clone_with_aux_bn(target);
  Sgd oa(a.parameters(), 0.05, 0.9), ob(b.parameters(), 0.05, 0.9);
  const StepLosses s = advamd_step(a, oa, t, rows, VulnCoefficients::uniform(3, 0.0), with_zero);
  advamd_step(b, ob, t, rows, VulnCoefficients::uniform(3), no_beta3);
  EXPECT_EQ(s.adversarial, 0.0);
  const auto pa = flat_params(a), pb = flat_params(b);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
}

TEST(AdvamdStep, MissingAuxBN) {
  const Dataset data = blobs(10, 16);
  Model m = pretrained(data, 17, 1);
  const TripletSet t = generate_triplets(m, data, AttackSpec{}, 0.7);
  Sgd opt(m.parameters(), 0.05, 0.9);
  try {
    advamd_step(m, opt, t, iota(4), VulnCoefficients::uniform(3), TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingAuxBN);
  }
}

TEST(AdvamdStep, StatsOnlyTouchTheirRoute) {
  const Dataset data = blobs(20, 18);
  const Model target = pretrained(data, 19, 3);
  const TripletSet t = generate_triplets(target, data, AttackSpec{}, 0.7);
  Model m = clone_with_aux_bn(target);
  const auto& bn = std::get<DualBatchNorm>(m.layers()[1]);
  const BnStats main0 = bn.main_stats, aux0 = bn.aux_stats;
  Sgd opt(m.parameters(), 0.05, 0.9);
  advamd_step(m, opt, t, iota(8), VulnCoefficients::uniform(3), TrainConfig{});
  EXPECT_EQ(bn.main_stats.count, main0.count + 2);  // benign + mediate
  EXPECT_EQ(bn.aux_stats.count, aux0.count + 1);    // adversarial
}

TEST(AdvamdTrain, InfiniteSigmaRunsEveryEpoch) {
  const Dataset data = blobs(60, 20);
  const Model target = pretrained(data, 21, 3);
  TrainConfig cfg;
  cfg.sigma = std::numeric_limits<double>::infinity();
  cfg.max_epochs = 7;
  const AmendResult r = advamd_train(target, data, AttackSpec{}, cfg);
  EXPECT_EQ(r.history.epochs.size(), 7u);
  EXPECT_FALSE(r.history.reached_sigma);
}

TEST(AdvamdTrain, TargetIsNotModified) {
  const Dataset data = blobs(60, 22);
  const Model target = pretrained(data, 23, 3);
  const Model copy = target;
  TrainConfig cfg;
  cfg.max_epochs = 3;
  const AmendResult r = advamd_train(target, data, AttackSpec{}, cfg);
  EXPECT_EQ(target.fingerprint(), copy.fingerprint());
  EXPECT_NE(r.model.fingerprint(), target.fingerprint());
  ASSERT_TRUE(r.difficulty.has_value());
  EXPECT_EQ(r.vuln.size(), 3u);
}

TEST(AdvamdTrain, StopsAtSigma) {
  const Dataset data = blobs(60, 24, 0.1);
  const Model target = pretrained(data, 25, 3);
  TrainConfig cfg;
  cfg.sigma = 10.0;
  cfg.max_epochs = 50;
  const AmendResult r = advamd_train(target, data, AttackSpec{}, cfg);
  EXPECT_TRUE(r.history.reached_sigma);
  EXPECT_EQ(r.history.epochs.size(), 1u);
}

TEST(AdvamdTrain, NoDecreaseFlag) {
  const Dataset data = blobs(60, 26);
  const Model target = pretrained(data, 27, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.patience = 2;
  cfg.max_epochs = 5;
  cfg.sigma = 1e-9;
  const AmendResult r = advamd_train(target, data, AttackSpec{}, cfg);
  EXPECT_TRUE(r.history.no_decrease);
  EXPECT_EQ(r.history.epochs.size(), 5u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.phi = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.beta1 = c.beta2 = c.beta3 = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.sigma = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(VanillaTrain, SeparableBlobs) {
  const Dataset data = make_gaussian_blobs(2, 100, {{-1, 0}, {1, 0}}, 0.3, 28);
  Model m = make_mlp(2, {}, 2, false, 29);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  vanilla_train(m, data, cfg);
  EXPECT_GE(evaluate(m, data), 0.99);
}

TEST(VanillaTrain, ZeroLearningRateKeepsParameters) {
  const Dataset data = blobs(20, 30);
  Model m = make_mlp(2, {6}, 3, true, 31);
  const auto before = flat_params(m);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 3;
  vanilla_train(m, data, cfg);
  EXPECT_EQ(flat_params(m), before);
}

TEST(VanillaTrain, Deterministic) {
  const Dataset data = blobs(30, 32);
  Model a = make_mlp(2, {6}, 3, true, 33), b = make_mlp(2, {6}, 3, true, 33);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.seed = 34;
  vanilla_train(a, data, cfg);
  vanilla_train(b, data, cfg);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(AdvTrain, ZeroBudgetIsVanillaOnDoubledData) {
  const Dataset data = blobs(30, 35);
  const Model start = pretrained(data, 36, 2);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 37;
  AttackSpec spec;
  spec.epsilon = 0.0;
  Model a = start, b = start;
  const TrainResult ra = adv_train_baseline(a, data, spec, cfg);
  const Dataset doubled(concat_rows(data.inputs, data.inputs),
                        [&] {
                          auto y = data.labels;
                          y.insert(y.end(), data.labels.begin(), data.labels.end());
                          return y;
                        }(),
                        data.n_categories);
  const TrainResult rb = vanilla_train(b, doubled, cfg);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) EXPECT_NEAR(ra.epochs[e].overall, rb.epochs[e].overall, 1e-10);
}

TEST(Evaluate, AllCorrect) {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::zeros({2})));
  const Model m(std::move(layers), 2);
  const Dataset d(Tensor::matrix(3, 2, {1, 0, 0, 1, 2, -1}), {0, 1, 0}, 2);
  EXPECT_EQ(evaluate(m, d), 1.0);
}

TEST(Evaluate, UniformLogitsPickClassZero) {
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer(Tensor::zeros({4, 2}), Tensor::zeros({4})));
  const Model m(std::move(layers), 4);
  const Dataset d = make_gaussian_blobs(4, 25, {{0, 0}, {1, 0}, {0, 1}, {1, 1}}, 0.1, 38);
  EXPECT_EQ(evaluate(m, d), 0.25);
}

TEST(Evaluate, EmptyDataset) {
  const Model m = make_mlp(2, {}, 2, false, 1);
  try {
    evaluate(m, Dataset{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Evaluate, MainRouteIsDefault) {
  const Dataset data = blobs(60, 39);
  const Model target = pretrained(data, 40, 3);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  const AmendResult r = advamd_train(target, data, AttackSpec{}, cfg);
  EXPECT_EQ(evaluate(r.model, data), evaluate(r.model, data, BnRoute::Main));
  const double aux = evaluate(r.model, data, BnRoute::Aux);
  EXPECT_GE(aux, 0.0);
  EXPECT_LE(aux, 1.0);
}

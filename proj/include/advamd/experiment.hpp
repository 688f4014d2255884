#pragma once

// Seeded comparison pipeline: vanilla target, naive adversarial training and
// amendment variants on one synthetic task. Shared by the CLI and the
// acceptance harness.

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include "advamd/amendment.hpp"
#include "advamd/attacks.hpp"
#include "advamd/data.hpp"
#include "advamd/nn.hpp"
#include "advamd/random.hpp"

namespace advamd {

// Default geometry: four tight blobs on a rotated square. Nearest-mean
// boundaries are diagonal, so an L-inf budget of 0.1 crosses them while
// axis-aligned boundaries with the same benign accuracy would not.
struct BlobTask {
  std::size_t n_categories = 4;
  std::vector<std::vector<double>> means = {{0.1, 0.2}, {0.2, -0.1}, {-0.1, -0.2}, {-0.2, 0.1}};
  double stddev = 0.03;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 1000;

  Dataset train(std::uint64_t seed) const {
    return make_gaussian_blobs(n_categories, train_per_class, means, stddev, derive_seed(seed, 1));
  }
  Dataset test(std::uint64_t seed) const {
    return make_gaussian_blobs(n_categories, test_per_class, means, stddev, derive_seed(seed, 2));
  }
};

struct Variant {
  std::string name;
  bool use_mediate = true;
  bool use_aux_bn = true;
  bool use_advamd_loss = true;
};

inline std::vector<Variant> ablation_variants() {
  return {{"advamd", true, true, true},
          {"mediate_only", true, false, false},
          {"aux_bn_only", false, true, false},
          {"advamd_loss_only", false, false, true}};
}

inline TrainConfig with_epochs(std::size_t epochs) {
  TrainConfig c;
  c.max_epochs = epochs;
  return c;
}

struct ExperimentConfig {
  BlobTask task;
  std::vector<std::size_t> hidden = {32};
  AttackSpec attack;                          // FGSM, epsilon 0.1
  TrainConfig vanilla = with_epochs(100);     // target training
  TrainConfig defense = with_epochs(100);     // adv_train baseline and amendment (continued training)
  std::vector<Variant> variants = ablation_variants();
};

struct MethodScore {
  std::string method;
  double benign = 0.0;
  double adversarial = 0.0;           // fixed adversarial test set crafted against the target
  double adversarial_whitebox = 0.0;  // attack re-run against this model
  double final_loss = 0.0;
  std::size_t epochs = 0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<MethodScore> scores;  // vanilla, adv_train, then variants in order

  const MethodScore& get(const std::string& method) const {
    for (const auto& s : scores)
      if (s.method == method) return s;
    fail(ErrorCode::InvalidArgument, "no method '" + method + "' in outcome");
  }
};

// Accuracies on the Main route: benign, the shared adversarial test set, and
// a fresh white-box attack against `model`.
inline MethodScore score(const std::string& method, const Model& model, const Dataset& test,
                         const Dataset& adversarial_test, const AttackSpec& attack, const TrainResult& hist) {
  MethodScore s{method,
                evaluate(model, test),
                evaluate(model, adversarial_test),
                evaluate(model, adversarial_dataset(model, test, attack)),
                0.0,
                hist.epochs.size()};
  if (!hist.epochs.empty()) s.final_loss = hist.epochs.back().overall;
  return s;
}

// Seed streams shared by every entry point so a CLI run and an in-process
// run of the same seed train identical models.
inline TrainConfig vanilla_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig c = cfg.vanilla;
  c.seed = derive_seed(seed, 10);
  return c;
}

inline TrainConfig defense_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig c = cfg.defense;
  c.seed = derive_seed(seed, 11);
  return c;
}

inline Model make_target(const ExperimentConfig& cfg, const Dataset& train, std::uint64_t seed,
                         bool batch_norm = true) {
  return make_mlp(train.width(), cfg.hidden, train.n_categories, batch_norm, derive_seed(seed, 3));
}

// advamd, <component>_only, or advamd_no_<component>.
inline std::string method_tag(const TrainConfig& c) {
  const int on = int(c.use_mediate) + int(c.use_aux_bn) + int(c.use_advamd_loss);
  if (on == 3) return "advamd";
  if (on == 1) return c.use_mediate ? "mediate_only" : c.use_aux_bn ? "aux_bn_only" : "advamd_loss_only";
  if (on == 2) return !c.use_mediate ? "advamd_no_mediate" : !c.use_aux_bn ? "advamd_no_aux_bn" : "advamd_no_advamd_loss";
  return "none";
}

inline SeedOutcome run_seed_on(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                               std::uint64_t seed) {
  SeedOutcome out{seed, train.content_hash(), {}};

  Model target = make_target(cfg, train, seed);
  const TrainResult vhist = vanilla_train(target, train, vanilla_config(cfg, seed));
  const Dataset adv_test = adversarial_dataset(target, test, cfg.attack);
  out.scores.push_back(score("vanilla", target, test, adv_test, cfg.attack, vhist));

  const TrainConfig dcfg = defense_config(cfg, seed);
  Model baseline = target;
  const TrainResult bhist = adv_train_baseline(baseline, train, cfg.attack, dcfg);
  out.scores.push_back(score("adv_train", baseline, test, adv_test, cfg.attack, bhist));

  for (const Variant& v : cfg.variants) {
    TrainConfig acfg = dcfg;
    acfg.use_mediate = v.use_mediate;
    acfg.use_aux_bn = v.use_aux_bn;
    acfg.use_advamd_loss = v.use_advamd_loss;
    const AmendResult amended = advamd_train(target, train, cfg.attack, acfg);
    out.scores.push_back(score(v.name, amended.model, test, adv_test, cfg.attack, amended.history));
  }
  return out;
}

inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_seed_on(cfg, cfg.task.train(seed), cfg.task.test(seed), seed);
}

// Seeds run concurrently; results come back in the given seed order.
inline std::vector<SeedOutcome> run_seeds(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                          std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<SeedOutcome> out(seeds.size());
  for (std::size_t at = 0; at < seeds.size(); at += threads) {
    std::vector<std::future<SeedOutcome>> jobs;
    for (std::size_t i = at; i < std::min(seeds.size(), at + threads); ++i)
      jobs.push_back(std::async(std::launch::async, [&cfg, s = seeds[i]] { return run_seed(cfg, s); }));
    for (std::size_t i = 0; i < jobs.size(); ++i) out[at + i] = jobs[i].get();
  }
  return out;
}

struct MethodSummary {
  std::string method;
  double benign_mean = 0.0;
  double adversarial_mean = 0.0;
  double whitebox_mean = 0.0;
};

inline std::vector<MethodSummary> summarize(const std::vector<SeedOutcome>& runs) {
  std::vector<MethodSummary> out;
  if (runs.empty()) return out;
  for (const auto& s : runs.front().scores) {
    MethodSummary m{s.method};
    for (const auto& r : runs) {
      m.benign_mean += r.get(s.method).benign;
      m.adversarial_mean += r.get(s.method).adversarial;
      m.whitebox_mean += r.get(s.method).adversarial_whitebox;
    }
    m.benign_mean /= static_cast<double>(runs.size());
    m.adversarial_mean /= static_cast<double>(runs.size());
    m.whitebox_mean /= static_cast<double>(runs.size());
    out.push_back(m);
  }
  return out;
}

}  // namespace advamd

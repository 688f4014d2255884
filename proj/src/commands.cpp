#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <thread>

#include "advamd/advamd.hpp"

namespace advamd::cli {

namespace fs = std::filesystem;

namespace {

std::string resolve_out(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ADVAMD_OUT"); env && *env) return env;
  return from_config;
}

std::string ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

std::string eps_tag(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

template <class T, class F>
std::vector<T> per_seed(const std::vector<std::uint64_t>& seeds, std::size_t threads, F fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<T> out(seeds.size());
  for (std::size_t at = 0; at < seeds.size(); at += threads) {
    std::vector<std::future<T>> jobs;
    for (std::size_t i = at; i < std::min(seeds.size(), at + threads); ++i)
      jobs.push_back(std::async(std::launch::async, fn, seeds[i]));
    for (std::size_t i = 0; i < jobs.size(); ++i) out[at + i] = jobs[i].get();
  }
  return out;
}

MetricsRecord record(const std::string& run_id, std::uint64_t seed, const std::string& method,
                     const AttackSpec& attack, std::uint64_t hash) {
  MetricsRecord r;
  r.run_id = run_id;
  r.seed = seed;
  r.method = method;
  r.attack = to_string(attack.kind);
  r.epsilon = attack.epsilon;
  r.dataset_hash = hash;
  return r;
}

void fill_losses(MetricsRecord& r, const StepLosses& l) {
  r.loss_benign = l.benign;
  r.loss_mediate = l.mediate;
  r.loss_adversarial = l.adversarial;
  r.loss_overall = l.overall;
}

// Trains the vanilla target for one seed; per-epoch rows use a fresh
// white-box attack on the current model.
struct TrainedTarget {
  std::optional<Model> model;
  std::vector<MetricsRecord> rows;
  double benign = 0.0, adversarial = 0.0;
};

TrainedTarget train_target(const RunConfig& rc, const Dataset& train, const Dataset& test, std::uint64_t seed,
                           bool epoch_rows) {
  const auto& exp = rc.exp;
  TrainedTarget out;
  Model model = make_target(exp, train, seed, rc.batch_norm);
  const std::string run_id = "vanilla-s" + std::to_string(seed);
  const auto hash = train.content_hash();
  TrainHooks hooks;
  if (epoch_rows)
    hooks.after_epoch = [&](std::size_t epoch, const Model& m, const StepLosses& l) {
      MetricsRecord r = record(run_id, seed, "vanilla", exp.attack, hash);
      r.kind = "epoch";
      r.epoch = epoch + 1;
      fill_losses(r, l);
      r.benign_accuracy = evaluate(m, test);
      r.adversarial_accuracy = evaluate(m, adversarial_dataset(m, test, exp.attack));
      out.rows.push_back(r);
    };
  const TrainResult hist = vanilla_train(model, train, vanilla_config(exp, seed), hooks);
  MetricsRecord fin = record(run_id, seed, "vanilla", exp.attack, hash);
  fin.epoch = hist.epochs.size();
  if (!hist.epochs.empty()) fill_losses(fin, hist.epochs.back());
  fin.benign_accuracy = out.benign = evaluate(model, test);
  fin.adversarial_accuracy = out.adversarial = evaluate(model, adversarial_dataset(model, test, exp.attack));
  out.rows.push_back(fin);
  out.model.emplace(std::move(model));
  return out;
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_flag) {
  const RunConfig rc = load_config(config_path);
  const std::string out = ensure_dir(resolve_out(out_flag, rc.output_dir));
  struct Done {
    std::uint64_t seed = 0;
    double benign = 0.0, adversarial = 0.0;
    std::size_t epochs = 0;
  };
  const auto done = per_seed<Done>(rc.seeds, rc.threads, [&](std::uint64_t seed) {
    const auto [train, test] = load_task(rc, seed);
    TrainedTarget t = train_target(rc, train, test, seed, true);
    const std::string stem = out + "/vanilla_seed" + std::to_string(seed);
    save_checkpoint(*t.model, rc, seed, stem + ".ckpt");
    fs::remove(out + "/metrics_vanilla_seed" + std::to_string(seed) + ".csv");
    append_metrics(out + "/metrics_vanilla_seed" + std::to_string(seed) + ".csv", t.rows);
    return Done{seed, t.benign, t.adversarial, t.rows.back().epoch};
  });
  std::printf("%-6s %-8s %-10s %-12s\n", "seed", "epochs", "benign", "adversarial");
  for (const auto& d : done)
    std::printf("%-6llu %-8zu %-10.4f %-12.4f\n", static_cast<unsigned long long>(d.seed), d.epochs, d.benign,
                d.adversarial);
  std::printf("wrote %zu checkpoint(s) and metrics to %s\n", done.size(), out.c_str());
  return 0;
}

int cmd_attack(const std::string& ckpt_path, const AttackFlags& f, const std::string& out_flag) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  AttackSpec spec = ck.config.exp.attack;
  if (f.kind) {
    try {
      spec.kind = parse_attack_kind(*f.kind);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (f.steps) spec.steps = *f.steps;
  if (f.step_size) spec.step_size = *f.step_size;
  if (f.overshoot) spec.overshoot = *f.overshoot;
  std::vector<double> eps = f.epsilons.empty() ? std::vector<double>{spec.epsilon} : f.epsilons;
  for (double e : eps) {
    AttackSpec s = spec;
    s.epsilon = e;
    try {
      s.validate();
    } catch (const Error& err) {
      throw UsageError(err.what());
    }
  }
  for (const auto& w : spec.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());

  const std::string out = ensure_dir(resolve_out(out_flag, ck.config.output_dir));
  const auto [train, test] = load_task(ck.config, ck.seed);
  (void)train;
  const double benign = evaluate(ck.model, test);
  std::ofstream report(out + "/attack_report.csv");
  report << "seed,attack,epsilon,benign_accuracy,adversarial_accuracy\n";
  std::printf("%-9s %-9s %-10s %-12s\n", "attack", "epsilon", "benign", "adversarial");
  for (double e : eps) {
    AttackSpec s = spec;
    s.epsilon = e;
    const Dataset adv = adversarial_dataset(ck.model, test, s);
    const double acc = evaluate(ck.model, adv);
    std::printf("%-9s %-9g %-10.4f %-12.4f\n", to_string(s.kind).c_str(), e, benign, acc);
    report << ck.seed << ',' << to_string(s.kind) << ',' << eps_tag(e) << ',' << benign << ',' << acc << '\n';
    if (f.dump)
      save_csv(adv, out + "/adversarial_" + to_string(s.kind) + "_eps" + eps_tag(e) + "_seed" +
                        std::to_string(ck.seed) + ".csv");
  }
  return 0;
}

int cmd_amend(const AmendFlags& f, const std::string& out_flag) {
  if (f.config.empty() && f.checkpoint.empty()) throw UsageError("amend needs --config and/or --checkpoint");
  std::optional<Checkpoint> ck;
  if (!f.checkpoint.empty()) ck.emplace(load_checkpoint(f.checkpoint));
  RunConfig rc = f.config.empty() ? ck->config : load_config(f.config);
  TrainConfig& d = rc.exp.defense;
  if (f.no_mediate) d.use_mediate = false;
  if (f.no_aux_bn) d.use_aux_bn = false;
  if (f.no_advamd_loss) d.use_advamd_loss = false;
  if (!f.baseline && !d.any_component())
    throw UsageError(
        "degenerate amendment: mediate samples, auxiliary BN and the weighted loss are all disabled "
        "(use --baseline for plain adversarial training)");
  if (!f.baseline && d.use_aux_bn && !rc.batch_norm)
    throw UsageError("auxiliary BN needs model.batch_norm = true (or pass --no-aux-bn)");
  const std::string tag = f.baseline ? "adv_train" : method_tag(d);
  const std::string out = ensure_dir(resolve_out(out_flag, rc.output_dir));

  // With a checkpoint the task comes from its stored configuration and seed.
  const RunConfig& task_cfg = ck ? ck->config : rc;
  const std::vector<std::uint64_t> seeds = ck ? std::vector<std::uint64_t>{ck->seed} : rc.seeds;

  struct Done {
    std::uint64_t seed = 0;
    double vb = 0, va = 0, b = 0, a = 0;
  };
  const auto done = per_seed<Done>(seeds, rc.threads, [&](std::uint64_t seed) {
    const auto [train, test] = load_task(task_cfg, seed);
    const auto hash = train.content_hash();
    std::vector<MetricsRecord> rows;
    std::optional<Model> target;
    if (ck) {
      target.emplace(ck->model);
    } else {
      TrainedTarget t = train_target(rc, train, test, seed, false);
      rows = t.rows;
      target.emplace(std::move(*t.model));
    }
    const Dataset adv_test = adversarial_dataset(*target, test, rc.exp.attack);
    const double vb = evaluate(*target, test), va = evaluate(*target, adv_test);

    const std::string run_id = tag + "-s" + std::to_string(seed);
    const TrainConfig dcfg = defense_config(rc.exp, seed);
    TrainHooks hooks;
    hooks.after_epoch = [&](std::size_t epoch, const Model& m, const StepLosses& l) {
      MetricsRecord r = record(run_id, seed, tag, rc.exp.attack, hash);
      r.kind = "epoch";
      r.epoch = epoch + 1;
      fill_losses(r, l);
      r.benign_accuracy = evaluate(m, test);
      r.adversarial_accuracy = evaluate(m, adv_test);
      rows.push_back(r);
    };
    std::optional<Model> amended;
    TrainResult hist;
    if (f.baseline) {
      amended.emplace(*target);
      hist = adv_train_baseline(*amended, train, rc.exp.attack, dcfg, hooks);
    } else {
      AmendResult res = advamd_train(*target, train, rc.exp.attack, dcfg, hooks);
      hist = std::move(res.history);
      if (res.difficulty)
        res.difficulty->save_csv(out + "/difficulty_" + tag + "_seed" + std::to_string(seed) + ".csv");
      amended.emplace(std::move(res.model));
    }
    MetricsRecord fin = record(run_id, seed, tag, rc.exp.attack, hash);
    fin.epoch = hist.epochs.size();
    if (!hist.epochs.empty()) fill_losses(fin, hist.epochs.back());
    fin.benign_accuracy = evaluate(*amended, test);
    fin.adversarial_accuracy = evaluate(*amended, adv_test);
    rows.push_back(fin);

    RunConfig saved = task_cfg;
    saved.exp.defense = rc.exp.defense;
    saved.exp.attack = rc.exp.attack;
    save_checkpoint(*amended, saved, seed, out + "/" + tag + "_seed" + std::to_string(seed) + ".ckpt");
    const std::string mpath = out + "/metrics_" + tag + "_seed" + std::to_string(seed) + ".csv";
    fs::remove(mpath);
    append_metrics(mpath, rows);
    return Done{seed, vb, va, fin.benign_accuracy, fin.adversarial_accuracy};
  });

  std::printf("method %s, attack %s eps %g\n", tag.c_str(), to_string(rc.exp.attack.kind).c_str(),
              rc.exp.attack.epsilon);
  std::printf("%-6s %-10s %-10s %-10s %-10s %-10s %-10s\n", "seed", "v_benign", "v_adv", "benign", "adv",
              "d_benign", "d_adv");
  double db = 0, da = 0;
  for (const auto& r : done) {
    std::printf("%-6llu %-10.4f %-10.4f %-10.4f %-10.4f %+-10.4f %+-10.4f\n", static_cast<unsigned long long>(r.seed),
                r.vb, r.va, r.b, r.a, r.b - r.vb, r.a - r.va);
    db += r.b - r.vb;
    da += r.a - r.va;
  }
  std::printf("mean   %43s %+-10.4f %+-10.4f\n", "", db / done.size(), da / done.size());
  return 0;
}

int cmd_compare(const std::string& run_dir, const std::string& out_flag) {
  if (!fs::is_directory(run_dir)) throw UsageError("not a directory: " + run_dir);
  const auto records = read_metrics_dir(run_dir);
  const auto rows = compare_records(records);
  if (rows.empty()) throw UsageError("no final metrics rows under " + run_dir);
  const std::string csv = comparison_csv(rows);
  const std::string out = ensure_dir(resolve_out(out_flag, run_dir));
  std::ofstream(out + "/comparison.csv") << csv;
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_plot(const PlotFlags& f, const std::string& out_flag) {
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  if (ck.model.input_width() != 2) throw UsageError("surface plots need 2D inputs");
  if (f.resolution < 1) throw UsageError("--resolution must be >= 1");
  const auto [train, test] = load_task(ck.config, ck.seed);
  const Dataset& pts = f.points == "test" ? test : train;
  SurfaceGrid grid = fit_grid(pts, f.resolution);
  if (!f.range.empty()) {
    if (f.range.size() != 4) throw UsageError("--range takes x_lo,x_hi,y_lo,y_hi");
    grid = {f.range[0], f.range[1], f.range[2], f.range[3], f.resolution};
    if (!(grid.x_hi > grid.x_lo && grid.y_hi > grid.y_lo)) throw UsageError("--range must have lo < hi");
  }
  const std::string out = ensure_dir(resolve_out(out_flag, ck.config.output_dir));
  const std::string name =
      f.name.empty() ? "surface_" + fs::path(f.checkpoint).stem().string() + ".svg" : fs::path(f.name).filename().string();
  std::ofstream(out + "/" + name) << surface_svg(ck.model, grid, f.points == "none" ? nullptr : &pts, f.title);
  std::printf("wrote %s/%s (%zu x %zu cells)\n", out.c_str(), name.c_str(), f.resolution, f.resolution);
  return 0;
}

int cmd_theory(const TheoryFlags& f) {
  if (f.samples < kMinMonteCarloSamples) throw UsageError("--samples must be >= 10000");
  std::vector<std::pair<std::string, std::vector<NormalSpec>>> sets;
  if (!f.components.empty()) {
    std::vector<NormalSpec> set;
    for (const auto& c : f.components) {
      NormalSpec s;
      if (std::sscanf(c.c_str(), "%lf,%lf,%lf,%lf,%lf", &s.c, &s.a, &s.mu, &s.A, &s.sigma) != 5)
        throw UsageError("--component takes c,a,mu,A,sigma: '" + c + "'");
      if (!(s.sigma > 0.0)) throw UsageError("component sigma must be > 0: '" + c + "'");
      set.push_back(s);
    }
    sets.push_back({"given", set});
  }
  Rng rng(derive_seed(f.seed, 77));
  for (std::size_t i = 0; i < f.random_sets; ++i)
    sets.push_back({"random" + std::to_string(i + 1), random_components(f.random_size, rng)});
  if (sets.empty()) sets.push_back({"unit", {NormalSpec{}, NormalSpec{}}});

  std::printf("%-9s %-4s %-12s %-12s %-12s %-12s %-9s\n", "set", "k", "mean", "mc_mean", "variance", "mc_variance",
              "var_gap");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& [name, comps] = sets[i];
    const MeanVar an = combine_normals(comps);
    const MeanVar mc = monte_carlo_check(comps, f.samples, derive_seed(f.seed, i));
    const double gap = std::abs(mc.variance - an.variance) / an.variance;
    std::printf("%-9s %-4zu %-12.6g %-12.6g %-12.6g %-12.6g %7.3f%%\n", name.c_str(), comps.size(), an.mean, mc.mean,
                an.variance, mc.variance, 100.0 * gap);
  }
  return 0;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Config:
    case ErrorCode::InvalidPhi:
    case ErrorCode::InvalidArgument: return 2;
    default: return 1;
  }
}

}  // namespace advamd::cli

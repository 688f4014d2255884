// advamd: train | attack | amend | compare | plot-surface | theory

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace advamd;
using namespace advamd::cli;

int main(int argc, char** argv) {
  CLI::App app{"Adversarial amendment experiments on small synthetic tasks"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string out;
  app.add_option("--out", out, "Output directory (overrides $ADVAMD_OUT and output.dir)");

  std::string train_cfg;
  auto* train = app.add_subcommand("train", "Train vanilla targets for every configured seed");
  train->add_option("--config,config", train_cfg, "Run configuration file")->required();

  std::string attack_ckpt;
  AttackFlags af;
  auto* attack = app.add_subcommand("attack", "Attack a checkpoint on its test split");
  attack->add_option("--checkpoint,checkpoint", attack_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("--kind", af.kind, "fgsm | pgd | deepfool (default: checkpoint config)")
      ->check(CLI::IsMember({"fgsm", "pgd", "deepfool"}));
  attack->add_option("--epsilon", af.epsilons, "One or more budgets")->delimiter(',');
  attack->add_option("--steps", af.steps, "PGD / DeepFool iterations");
  attack->add_option("--step-size", af.step_size, "PGD step");
  attack->add_option("--overshoot", af.overshoot, "DeepFool overshoot");
  attack->add_flag("--dump", af.dump, "Write each perturbed test set as CSV");

  AmendFlags mf;
  auto* amend = app.add_subcommand("amend", "Amend a target (or freshly trained targets) with AdvAmd");
  amend->add_option("--config", mf.config, "Run configuration file");
  amend->add_option("--checkpoint", mf.checkpoint, "Target checkpoint")->check(CLI::ExistingFile);
  amend->add_flag("--no-mediate", mf.no_mediate, "Drop mediate samples");
  amend->add_flag("--no-aux-bn", mf.no_aux_bn, "Route adversarial samples through the main BN statistics");
  amend->add_flag("--no-advamd-loss", mf.no_advamd_loss, "Uniform adversarial loss weights");
  amend->add_flag("--baseline", mf.baseline, "Plain adversarial training on the benign+adversarial union instead");

  std::string run_dir;
  auto* compare = app.add_subcommand("compare", "Aggregate metrics CSVs into a per-method comparison table");
  compare->add_option("--run-dir,run_dir", run_dir, "Directory holding metrics_*.csv")->required();

  PlotFlags pf;
  auto* plot = app.add_subcommand("plot-surface", "SVG heatmap of the class-probability field");
  plot->add_option("--checkpoint,checkpoint", pf.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  plot->add_option("--resolution", pf.resolution, "Cells per axis")->default_val(50);
  plot->add_option("--range", pf.range, "x_lo,x_hi,y_lo,y_hi (default: fitted to the points)")->delimiter(',');
  plot->add_option("--points", pf.points, "Overlay: train | test | none")->check(CLI::IsMember({"train", "test", "none"}));
  plot->add_option("--name", pf.name, "Output file name inside the output directory");
  plot->add_option("--title", pf.title, "Caption");

  TheoryFlags tf;
  auto* theory = app.add_subcommand("theory", "Analytic vs Monte Carlo moments of a combination of normals");
  theory->add_option("--component", tf.components, "c,a,mu,A,sigma (repeatable; forms one set)");
  theory->add_option("--random", tf.random_sets, "Number of random component sets");
  theory->add_option("--size", tf.random_size, "Components per random set")->check(CLI::PositiveNumber);
  theory->add_option("--samples", tf.samples, "Monte Carlo draws")->default_val(1000000);
  theory->add_option("--seed", tf.seed, "Seed")->default_val(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(train_cfg, out);
    if (*attack) return cmd_attack(attack_ckpt, af, out);
    if (*amend) return cmd_amend(mf, out);
    if (*compare) return cmd_compare(run_dir, out);
    if (*plot) return cmd_plot(pf, out);
    if (*theory) return cmd_theory(tf);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

// Subcommand bodies behind the advamd executable.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Output directory: --out, else $ADVAMD_OUT, else the config's output.dir.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advamd/error.hpp"

namespace advamd::cli {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackFlags {
  std::optional<std::string> kind;
  std::vector<double> epsilons;
  std::optional<std::size_t> steps;
  std::optional<double> step_size;
  std::optional<double> overshoot;
  bool dump = false;
};

struct AmendFlags {
  std::string config;
  std::string checkpoint;
  bool no_mediate = false, no_aux_bn = false, no_advamd_loss = false;
  bool baseline = false;
};

struct PlotFlags {
  std::string checkpoint;
  std::size_t resolution = 50;
  std::vector<double> range;
  std::string points = "train";
  std::string name;
  std::string title;
};

struct TheoryFlags {
  std::vector<std::string> components;
  std::size_t random_sets = 0;
  std::size_t random_size = 5;
  std::size_t samples = 1000000;
  std::uint64_t seed = 1;
};

int cmd_train(const std::string& config_path, const std::string& out_flag);
int cmd_attack(const std::string& ckpt_path, const AttackFlags& f, const std::string& out_flag);
int cmd_amend(const AmendFlags& f, const std::string& out_flag);
int cmd_compare(const std::string& run_dir, const std::string& out_flag);
int cmd_plot(const PlotFlags& f, const std::string& out_flag);
int cmd_theory(const TheoryFlags& f);

int exit_code_for(const Error& e);

}  // namespace advamd::cli

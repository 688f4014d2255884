#pragma once

// Flat `section.key = value` run configuration. Blank lines and lines
// starting with '#' are skipped; unknown keys, duplicates and unparsable
// values raise ErrorCode::Config naming the key.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advamd/amendment.hpp"
#include "advamd/attacks.hpp"
#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/experiment.hpp"

namespace advamd {

enum class TaskKind { Blobs, Idx, Csv };

struct RunConfig {
  ExperimentConfig exp;
  TaskKind task_kind = TaskKind::Blobs;
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_csv, test_csv;                                   // csv
  bool batch_norm = true;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string output_dir = "advamd_out";
  std::size_t threads = 0;  // 0: hardware concurrency
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(trim(part));
  return out;
}

[[noreturn]] inline void bad(const std::string& key, const std::string& why) {
  fail(ErrorCode::Config, key + ": " + why);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || v.empty()) bad(key, "expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || v.empty())
    bad(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
inline std::string join(const std::vector<T>& xs, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_floating_point_v<T>)
      out += fmt(xs[i]);
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

// "1-10" or "1,2,5" (mixed allowed).
inline std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(v, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(to_u64(key, part));
      continue;
    }
    const auto lo = to_u64(key, trim(part.substr(0, dash)));
    const auto hi = to_u64(key, trim(part.substr(dash + 1)));
    if (hi < lo) bad(key, "empty seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) bad(key, "no seeds given");
  return out;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using Table = std::vector<std::pair<std::string, Field>>;

inline void train_fields(Table& t, const std::string& prefix, TrainConfig& c) {
  auto num = [&](const char* k, double& f) {
    t.push_back({prefix + k, {[&f, key = prefix + k](const std::string& v) { f = to_double(key, v); },
                              [&f] { return fmt(f); }}});
  };
  auto count = [&](const char* k, std::size_t& f) {
    t.push_back({prefix + k, {[&f, key = prefix + k](const std::string& v) { f = to_u64(key, v); },
                              [&f] { return std::to_string(f); }}});
  };
  auto flag = [&](const char* k, bool& f) {
    t.push_back({prefix + k, {[&f, key = prefix + k](const std::string& v) { f = to_bool(key, v); },
                              [&f] { return fmt(f); }}});
  };
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("beta3", c.beta3);
  num("sigma", c.sigma);
  count("max_epochs", c.max_epochs);
  num("phi", c.phi);
  num("learning_rate", c.learning_rate);
  num("momentum", c.momentum);
  num("weight_decay", c.weight_decay);
  count("batch_size", c.batch_size);
  count("patience", c.patience);
  flag("use_mediate", c.use_mediate);
  flag("use_aux_bn", c.use_aux_bn);
  flag("use_advamd_loss", c.use_advamd_loss);
  flag("refresh_triplets", c.refresh_triplets);
  count("min_per_class", c.min_per_class);
  t.push_back({prefix + "vuln_mode",
               {[&c, key = prefix + "vuln_mode"](const std::string& v) {
                  if (v == "per_category")
                    c.vuln_mode = VulnMode::PerCategory;
                  else if (v == "global_mean")
                    c.vuln_mode = VulnMode::GlobalMean;
                  else
                    bad(key, "expected per_category or global_mean");
                },
                [&c] { return std::string(c.vuln_mode == VulnMode::PerCategory ? "per_category" : "global_mean"); }}});
}

inline Table fields(RunConfig& r) {
  Table t;
  auto& task = r.exp.task;
  auto& atk = r.exp.attack;
  t.push_back({"task.kind",
               {[&r](const std::string& v) {
                  if (v == "blobs")
                    r.task_kind = TaskKind::Blobs;
                  else if (v == "idx")
                    r.task_kind = TaskKind::Idx;
                  else if (v == "csv")
                    r.task_kind = TaskKind::Csv;
                  else
                    bad("task.kind", "expected blobs, idx or csv");
                },
                [&r] {
                  return std::string(r.task_kind == TaskKind::Blobs ? "blobs"
                                     : r.task_kind == TaskKind::Idx ? "idx"
                                                                     : "csv");
                }}});
  t.push_back({"task.means",
               {[&task](const std::string& v) {
                  task.means.clear();
                  for (const auto& pt : split(v, ';')) {
                    std::vector<double> m;
                    for (const auto& c : split(pt, ',')) m.push_back(to_double("task.means", c));
                    task.means.push_back(std::move(m));
                  }
                  task.n_categories = task.means.size();
                },
                [&task] {
                  std::string out;
                  for (std::size_t i = 0; i < task.means.size(); ++i) {
                    if (i) out += ';';
                    out += join(task.means[i]);
                  }
                  return out;
                }}});
  t.push_back({"task.stddev", {[&task](const std::string& v) { task.stddev = to_double("task.stddev", v); },
                               [&task] { return fmt(task.stddev); }}});
  t.push_back({"task.train_per_class",
               {[&task](const std::string& v) { task.train_per_class = to_u64("task.train_per_class", v); },
                [&task] { return std::to_string(task.train_per_class); }}});
  t.push_back({"task.test_per_class",
               {[&task](const std::string& v) { task.test_per_class = to_u64("task.test_per_class", v); },
                [&task] { return std::to_string(task.test_per_class); }}});
  auto path = [&](const char* k, std::string& f) {
    t.push_back({k, {[&f](const std::string& v) { f = v; }, [&f] { return f; }}});
  };
  path("task.train_images", r.train_images);
  path("task.train_labels", r.train_labels);
  path("task.test_images", r.test_images);
  path("task.test_labels", r.test_labels);
  path("task.train_csv", r.train_csv);
  path("task.test_csv", r.test_csv);

  t.push_back({"model.hidden",
               {[&r](const std::string& v) {
                  r.exp.hidden.clear();
                  for (const auto& h : split(v, ',')) r.exp.hidden.push_back(to_u64("model.hidden", h));
                },
                [&r] { return join(r.exp.hidden); }}});
  t.push_back({"model.batch_norm", {[&r](const std::string& v) { r.batch_norm = to_bool("model.batch_norm", v); },
                                    [&r] { return fmt(r.batch_norm); }}});

  t.push_back({"attack.kind",
               {[&atk](const std::string& v) {
                  try {
                    atk.kind = parse_attack_kind(v);
                  } catch (const Error&) {
                    bad("attack.kind", "expected fgsm, pgd or deepfool");
                  }
                },
                [&atk] { return to_string(atk.kind); }}});
  t.push_back({"attack.epsilon", {[&atk](const std::string& v) { atk.epsilon = to_double("attack.epsilon", v); },
                                  [&atk] { return fmt(atk.epsilon); }}});
  t.push_back({"attack.steps", {[&atk](const std::string& v) { atk.steps = to_u64("attack.steps", v); },
                                [&atk] { return std::to_string(atk.steps); }}});
  t.push_back({"attack.step_size",
               {[&atk](const std::string& v) { atk.step_size = to_double("attack.step_size", v); },
                [&atk] { return fmt(atk.step_size); }}});
  t.push_back({"attack.overshoot",
               {[&atk](const std::string& v) { atk.overshoot = to_double("attack.overshoot", v); },
                [&atk] { return fmt(atk.overshoot); }}});
  t.push_back({"attack.clip",
               {[&atk](const std::string& v) {
                  if (v == "none") {
                    atk.clip_domain.reset();
                    return;
                  }
                  const auto p = split(v, ',');
                  if (p.size() != 2) bad("attack.clip", "expected 'lo,hi' or 'none'");
                  atk.clip_domain = Domain{to_double("attack.clip", p[0]), to_double("attack.clip", p[1])};
                },
                [&atk] {
                  return atk.clip_domain ? fmt(atk.clip_domain->lo) + "," + fmt(atk.clip_domain->hi)
                                         : std::string("none");
                }}});

  train_fields(t, "train.", r.exp.vanilla);
  train_fields(t, "defense.", r.exp.defense);

  t.push_back({"seeds", {[&r](const std::string& v) { r.seeds = parse_seeds("seeds", v); },
                         [&r] { return join(r.seeds); }}});
  path("output.dir", r.output_dir);
  t.push_back({"run.threads", {[&r](const std::string& v) { r.threads = to_u64("run.threads", v); },
                               [&r] { return std::to_string(r.threads); }}});
  return t;
}

inline void check_train(const std::string& p, const TrainConfig& c) {
  if (!(c.phi > 0.0 && c.phi < 1.0)) bad(p + "phi", "must lie in (0,1), got " + fmt(c.phi));
  for (auto [k, v] : {std::pair{"beta1", c.beta1}, {"beta2", c.beta2}, {"beta3", c.beta3}})
    if (!(v >= 0.0)) bad(p + k, "must be >= 0");
  if (c.beta1 == 0.0 && c.beta2 == 0.0 && c.beta3 == 0.0) bad(p + "beta1", "at least one beta must be > 0");
  if (std::isnan(c.sigma) || c.sigma <= 0.0) bad(p + "sigma", "must be > 0");
  if (c.max_epochs < 1) bad(p + "max_epochs", "must be >= 1");
  if (c.batch_size < 2) bad(p + "batch_size", "must be >= 2");
  if (!(c.learning_rate >= 0.0)) bad(p + "learning_rate", "must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) bad(p + "momentum", "must lie in [0,1)");
  if (!(c.weight_decay >= 0.0)) bad(p + "weight_decay", "must be >= 0");
  if (c.patience < 1) bad(p + "patience", "must be >= 1");
}

}  // namespace config_detail

// Semantic checks run before any compute.
inline void validate(const RunConfig& r) {
  using config_detail::bad;
  const auto& task = r.exp.task;
  if (r.task_kind == TaskKind::Blobs) {
    if (task.means.size() < 2) bad("task.means", "need at least 2 categories");
    for (const auto& m : task.means)
      if (m.size() != task.means.front().size() || m.empty()) bad("task.means", "all means need the same dimension");
    if (!(task.stddev > 0.0)) bad("task.stddev", "must be > 0");
    if (task.train_per_class < 1) bad("task.train_per_class", "must be >= 1");
    if (task.test_per_class < 1) bad("task.test_per_class", "must be >= 1");
  } else if (r.task_kind == TaskKind::Idx) {
    for (auto [k, v] : {std::pair{"task.train_images", &r.train_images}, {"task.train_labels", &r.train_labels},
                        {"task.test_images", &r.test_images}, {"task.test_labels", &r.test_labels}})
      if (v->empty()) bad(k, "required for task.kind = idx");
  } else {
    if (r.train_csv.empty()) bad("task.train_csv", "required for task.kind = csv");
    if (r.test_csv.empty()) bad("task.test_csv", "required for task.kind = csv");
  }
  for (std::size_t h : r.exp.hidden)
    if (h == 0) bad("model.hidden", "widths must be > 0");
  try {
    r.exp.attack.validate();
  } catch (const Error& e) {
    bad("attack", e.what());
  }
  config_detail::check_train("train.", r.exp.vanilla);
  config_detail::check_train("defense.", r.exp.defense);
  if (r.output_dir.empty()) bad("output.dir", "must not be empty");
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "config") {
  RunConfig r;
  auto table = config_detail::fields(r);
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = config_detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    require(eq != std::string::npos, ErrorCode::Config, where + ": expected key = value");
    const std::string key = config_detail::trim(s.substr(0, eq));
    const std::string value = config_detail::trim(s.substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    require(it != table.end(), ErrorCode::Config, where + ": unknown key '" + key + "'");
    if (auto prev = seen.find(key); prev != seen.end())
      throw Error(ErrorCode::Config,
                  where + ": duplicate key '" + key + "' (first on line " + std::to_string(prev->second) + ")");
    seen[key] = lineno;
    it->second.set(value);
  }
  validate(r);
  return r;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Config, "config not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// Every key in a fixed order; parse_config(to_text(r)) reproduces r.
inline std::string to_text(const RunConfig& r) {
  RunConfig copy = r;
  std::string out;
  for (const auto& [k, f] : config_detail::fields(copy)) out += k + " = " + f.get() + "\n";
  return out;
}

inline std::pair<Dataset, Dataset> load_task(const RunConfig& r, std::uint64_t seed) {
  switch (r.task_kind) {
    case TaskKind::Blobs: return {r.exp.task.train(seed), r.exp.task.test(seed)};
    case TaskKind::Idx: {
      Dataset train = load_idx(r.train_images, r.train_labels);
      Dataset test = load_idx(r.test_images, r.test_labels, train.n_categories);
      return {std::move(train), std::move(test)};
    }
    case TaskKind::Csv: {
      Dataset train = load_csv(r.train_csv);
      Dataset test = load_csv(r.test_csv, train.n_categories);
      return {std::move(train), std::move(test)};
    }
  }
  fail(ErrorCode::Config, "unknown task kind");
}

}  // namespace advamd

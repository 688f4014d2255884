#pragma once

// Append-only metrics CSV and the per-method aggregation behind `compare`.
//
// Columns, in order:
//   run_id,seed,method,kind,attack,epsilon,epoch,loss_benign,loss_mediate,
//   loss_adversarial,loss_overall,benign_accuracy,adversarial_accuracy,dataset_hash
//
// kind is "epoch" (one row per training epoch, losses are epoch means) or
// "final" (one row per finished model; epoch holds the epoch count).
// method is vanilla, adv_train, advamd, or an ablation tag such as
// mediate_only. dataset_hash is the training set's content hash in hex.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "advamd/error.hpp"

namespace advamd {

inline constexpr const char* kMetricsHeader =
    "run_id,seed,method,kind,attack,epsilon,epoch,loss_benign,loss_mediate,loss_adversarial,loss_overall,"
    "benign_accuracy,adversarial_accuracy,dataset_hash";

struct MetricsRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  std::string kind = "final";
  std::string attack;
  double epsilon = 0.0;
  std::size_t epoch = 0;
  double loss_benign = 0.0;
  double loss_mediate = 0.0;
  double loss_adversarial = 0.0;
  double loss_overall = 0.0;
  double benign_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  std::uint64_t dataset_hash = 0;

  bool operator==(const MetricsRecord&) const = default;
};

namespace metrics_detail {

inline std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, 16);
  return std::string(buf, r.ptr);
}

template <class T>
inline T parse(const std::string& s, const std::string& where, int base = 10) {
  T v{};
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>)
    r = std::from_chars(s.data(), s.data() + s.size(), v);
  else
    r = std::from_chars(s.data(), s.data() + s.size(), v, base);
  require(r.ec == std::errc() && r.ptr == s.data() + s.size() && !s.empty(), ErrorCode::MalformedRow,
          where + ": bad value '" + s + "'");
  return v;
}

}  // namespace metrics_detail

inline std::string to_csv_row(const MetricsRecord& r) {
  using metrics_detail::num;
  for (const std::string* f : {&r.run_id, &r.method, &r.kind, &r.attack})
    require(f->find_first_of(",\n\"") == std::string::npos, ErrorCode::InvalidArgument,
            "metrics text fields must not contain commas, quotes or newlines");
  require(r.benign_accuracy >= 0.0 && r.benign_accuracy <= 1.0 && r.adversarial_accuracy >= 0.0 &&
              r.adversarial_accuracy <= 1.0,
          ErrorCode::InvalidArgument, "accuracies must lie in [0,1]");
  std::ostringstream os;
  os << r.run_id << ',' << r.seed << ',' << r.method << ',' << r.kind << ',' << r.attack << ',' << num(r.epsilon)
     << ',' << r.epoch << ',' << num(r.loss_benign) << ',' << num(r.loss_mediate) << ','
     << num(r.loss_adversarial) << ',' << num(r.loss_overall) << ',' << num(r.benign_accuracy) << ','
     << num(r.adversarial_accuracy) << ',' << metrics_detail::hex(r.dataset_hash);
  return os.str();
}

// Appends rows; writes the header first when the file is new or empty.
inline void append_metrics(const std::string& path, const std::vector<MetricsRecord>& rows) {
  namespace fs = std::filesystem;
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path);
  if (fresh) out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << to_csv_row(r) << '\n';
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  using metrics_detail::parse;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptyDataset, path + ": empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kMetricsHeader, ErrorCode::MalformedRow, path + ":1: unexpected metrics header");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    const std::string where = path + ":" + std::to_string(lineno);
    require(c.size() == 14, ErrorCode::MalformedRow, where + ": expected 14 columns");
    MetricsRecord r;
    r.run_id = c[0];
    r.seed = parse<std::uint64_t>(c[1], where);
    r.method = c[2];
    r.kind = c[3];
    r.attack = c[4];
    r.epsilon = parse<double>(c[5], where);
    r.epoch = parse<std::size_t>(c[6], where);
    r.loss_benign = parse<double>(c[7], where);
    r.loss_mediate = parse<double>(c[8], where);
    r.loss_adversarial = parse<double>(c[9], where);
    r.loss_overall = parse<double>(c[10], where);
    r.benign_accuracy = parse<double>(c[11], where);
    r.adversarial_accuracy = parse<double>(c[12], where);
    r.dataset_hash = parse<std::uint64_t>(c[13], where, 16);
    out.push_back(std::move(r));
  }
  return out;
}

// Every *.csv under `dir` whose first line is the metrics header.
inline std::vector<MetricsRecord> read_metrics_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorCode::Io, "not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricsRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string first;
    std::getline(in, first);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (first != kMetricsHeader) continue;
    auto rows = read_metrics(f.string());
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

struct ComparisonRow {
  std::string method;
  std::string attack;
  double epsilon = 0.0;
  std::size_t n = 0;
  double benign_mean = 0.0;
  std::optional<double> benign_std;  // sample std; absent for a single seed
  double adversarial_mean = 0.0;
  std::optional<double> adversarial_std;
  std::optional<double> delta_benign;       // mean over seeds of (method - vanilla, same seed)
  std::optional<double> delta_adversarial;
};

inline constexpr const char* kComparisonHeader =
    "method,attack,epsilon,n_seeds,benign_mean,benign_std,adversarial_mean,adversarial_std,delta_benign_mean,"
    "delta_adversarial_mean";

// Aggregates kind=final rows per (method, attack, epsilon). Deltas are taken
// against the vanilla row of the same seed, attack and epsilon.
inline std::vector<ComparisonRow> compare_records(const std::vector<MetricsRecord>& rows) {
  using Key = std::tuple<std::string, std::string, double>;
  // A retrained target lands in every amend run's file; count each run once.
  std::set<std::tuple<std::string, std::string, std::uint64_t, std::string, double, std::uint64_t>> seen;
  std::vector<const MetricsRecord*> finals;
  for (const auto& r : rows)
    if (r.kind == "final" && seen.insert({r.run_id, r.method, r.seed, r.attack, r.epsilon, r.dataset_hash}).second)
      finals.push_back(&r);

  std::map<std::tuple<std::uint64_t, std::string, double>, const MetricsRecord*> vanilla;
  for (const auto* r : finals)
    if (r->method == "vanilla") vanilla[{r->seed, r->attack, r->epsilon}] = r;

  std::vector<Key> order;
  std::map<Key, std::vector<const MetricsRecord*>> groups;
  for (const auto* rp : finals) {
    const auto& r = *rp;
    Key k{r.method, r.attack, r.epsilon};
    if (!groups.count(k)) order.push_back(k);
    groups[k].push_back(&r);
  }

  auto mean_std = [](const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    std::optional<double> sd;
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - m) * (x - m);
      sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return std::pair{m, sd};
  };

  std::vector<ComparisonRow> out;
  for (const auto& k : order) {
    const auto& g = groups[k];
    std::vector<double> b, a, db, da;
    for (const auto* r : g) {
      b.push_back(r->benign_accuracy);
      a.push_back(r->adversarial_accuracy);
      auto v = vanilla.find({r->seed, r->attack, r->epsilon});
      if (v != vanilla.end()) {
        db.push_back(r->benign_accuracy - v->second->benign_accuracy);
        da.push_back(r->adversarial_accuracy - v->second->adversarial_accuracy);
      }
    }
    ComparisonRow row;
    std::tie(row.method, row.attack, row.epsilon) = k;
    row.n = g.size();
    std::tie(row.benign_mean, row.benign_std) = mean_std(b);
    std::tie(row.adversarial_mean, row.adversarial_std) = mean_std(a);
    if (db.size() == g.size()) {
      row.delta_benign = mean_std(db).first;
      row.delta_adversarial = mean_std(da).first;
    }
    out.push_back(row);
  }
  return out;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  using metrics_detail::num;
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::ostringstream os;
  os << kComparisonHeader << '\n';
  for (const auto& r : rows)
    os << r.method << ',' << r.attack << ',' << num(r.epsilon) << ',' << r.n << ',' << num(r.benign_mean) << ','
       << opt(r.benign_std) << ',' << num(r.adversarial_mean) << ',' << opt(r.adversarial_std) << ','
       << opt(r.delta_benign) << ',' << opt(r.delta_adversarial) << '\n';
  return os.str();
}

}  // namespace advamd

#pragma once

// Per-category attack difficulty and the normalized vulnerable coefficient.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "advamd/attacks.hpp"
#include "advamd/data.hpp"
#include "advamd/error.hpp"
#include "advamd/nn.hpp"

namespace advamd {

// alpha[k][i]: difficulty of pushing class-k samples to be predicted as i.
// The diagonal holds NaN and is never read.
class DifficultyMatrix {
 public:
  explicit DifficultyMatrix(std::size_t n, double fill = 1.0) : n_(n), a_(n * n, fill) {
    require(n >= 2, ErrorCode::InvalidArgument, "difficulty matrix needs N >= 2");
    for (std::size_t k = 0; k < n; ++k) a_[k * n + k] = std::numeric_limits<double>::quiet_NaN();
  }

  std::size_t size() const { return n_; }

  double operator()(std::size_t k, std::size_t i) const {
    check(k, i);
    return a_[k * n_ + i];
  }

  void set(std::size_t k, std::size_t i, double v) {
    check(k, i);
    require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument, "difficulty entries must lie in [0,1]");
    a_[k * n_ + i] = v;
  }

  // Row k, column i; the diagonal cell is written empty.
  void save_csv(const std::string& path) const {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path);
    out.precision(17);
    for (std::size_t k = 0; k < n_; ++k) {
      for (std::size_t i = 0; i < n_; ++i) {
        if (i) out << ',';
        if (i != k) out << a_[k * n_ + i];
      }
      out << '\n';
    }
  }

  static DifficultyMatrix load_csv(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (!line.empty() && line.back() == ',') cells.emplace_back();
      rows.push_back(std::move(cells));
    }
    const std::size_t n = rows.size();
    require(n >= 2, ErrorCode::MalformedRow, path + ": need at least 2 rows");
    DifficultyMatrix m(n);
    for (std::size_t k = 0; k < n; ++k) {
      require(rows[k].size() == n, ErrorCode::MalformedRow,
              path + ":" + std::to_string(k + 1) + ": expected " + std::to_string(n) + " cells");
      for (std::size_t i = 0; i < n; ++i) {
        if (i == k) continue;
        double v = 0.0;
        try {
          std::size_t used = 0;
          v = std::stod(rows[k][i], &used);
          require(used == rows[k][i].size(), ErrorCode::MalformedRow, "trailing characters");
        } catch (const std::logic_error&) {
          fail(ErrorCode::MalformedRow, path + ":" + std::to_string(k + 1) + ": bad number");
        }
        m.set(k, i, v);
      }
    }
    return m;
  }

 private:
  void check(std::size_t k, std::size_t i) const {
    require(k < n_ && i < n_, ErrorCode::InvalidArgument, "difficulty index out of range");
    require(k != i, ErrorCode::InvalidArgument, "difficulty diagonal is undefined");
  }

  std::size_t n_;
  std::vector<double> a_;
};

struct VulnCoefficients {
  std::vector<double> values;  // one per category, each in [0,1]

  double operator[](std::size_t k) const { return values.at(k); }
  std::size_t size() const { return values.size(); }

  static VulnCoefficients uniform(std::size_t n, double v = 1.0) { return {std::vector<double>(n, v)}; }
};

enum class VulnMode { PerCategory, GlobalMean };

// alpha[k][i] = 1 - (targeted PGD successes from class k toward i) / |class k|.
inline DifficultyMatrix estimate_difficulty(const Model& model, const Dataset& data, const AttackSpec& spec,
                                            std::size_t min_per_class = 50) {
  const std::size_t n = data.n_categories;
  DifficultyMatrix alpha(n);
  AttackSpec targeted = spec;
  targeted.kind = AttackKind::PGD;
  for (std::size_t k = 0; k < n; ++k) {
    const auto idx = data.indices_of(k);
    require(idx.size() >= min_per_class, ErrorCode::InsufficientSamples,
            "category " + std::to_string(k) + " has " + std::to_string(idx.size()) + " samples, need " +
                std::to_string(min_per_class));
    const Dataset sub = data.subset(idx);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == k) continue;
      const auto res = targeted_pgd(model, sub.inputs, sub.labels, i, targeted);
      std::size_t hits = 0;
      for (bool s : res.success) hits += s ? 1 : 0;
      alpha.set(k, i, 1.0 - static_cast<double>(hits) / static_cast<double>(idx.size()));
    }
  }
  return alpha;
}

// A[k] = 1 - (sum_i alpha[k][i] + sum_j alpha[j][k]) / (2 (N - 1)).
inline VulnCoefficients vuln_coefficients(const DifficultyMatrix& alpha, VulnMode mode = VulnMode::PerCategory) {
  const std::size_t n = alpha.size();
  VulnCoefficients out{std::vector<double>(n, 0.0)};
  const double denom = 2.0 * static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (i != k) s += alpha(k, i) + alpha(i, k);
    out.values[k] = std::clamp(1.0 - s / denom, 0.0, 1.0);
  }
  if (mode == VulnMode::GlobalMean) {
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= static_cast<double>(n);
    out.values.assign(n, mean);
  }
  return out;
}

}  // namespace advamd

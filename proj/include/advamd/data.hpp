#pragma once

// Dataset synthesis and ingestion (Gaussian blobs, IDX, CSV).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "advamd/error.hpp"
#include "advamd/hash.hpp"
#include "advamd/random.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

struct Domain {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const Domain&) const = default;
};

struct Dataset {
  Tensor inputs;                    // [M x F]
  std::vector<std::size_t> labels;  // length M
  std::size_t n_categories = 0;
  std::optional<Domain> domain;

  Dataset() = default;

  Dataset(Tensor x, std::vector<std::size_t> y, std::size_t n, std::optional<Domain> d = std::nullopt)
      : inputs(std::move(x)), labels(std::move(y)), n_categories(n), domain(d) {
    require(!labels.empty(), ErrorCode::EmptyDataset, "dataset has no samples");
    require(inputs.rank() == 2 && inputs.rows() == labels.size(), ErrorCode::CountMismatch,
            "inputs have " + std::to_string(inputs.rows()) + " rows for " +
                std::to_string(labels.size()) + " labels");
    for (std::size_t y : labels)
      require(y < n_categories, ErrorCode::InvalidArgument, "label out of range");
  }

  std::size_t size() const { return labels.size(); }
  std::size_t width() const { return inputs.cols(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(n_categories, 0);
    for (std::size_t y : labels) ++counts[y];
    return counts;
  }

  // Rows whose label is k.
  std::vector<std::size_t> indices_of(std::size_t k) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) idx.push_back(i);
    return idx;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    std::vector<std::size_t> y;
    y.reserve(idx.size());
    for (std::size_t i : idx) y.push_back(labels[i]);
    return Dataset(inputs.gather_rows(idx), std::move(y), n_categories, domain);
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.u64(inputs.rows());
    h.u64(inputs.cols());
    h.doubles(inputs.values);
    for (std::size_t y : labels) h.u64(y);
    h.u64(n_categories);
    return h.digest();
  }
};

// `per_class` isotropic normal draws around each mean, class-major order.
inline Dataset make_gaussian_blobs(std::size_t n_categories, std::size_t per_class,
                                   const std::vector<std::vector<double>>& means, double stddev,
                                   std::uint64_t seed) {
  require(n_categories >= 2, ErrorCode::InvalidArgument, "blobs need at least 2 categories");
  require(means.size() == n_categories, ErrorCode::InvalidArgument, "one mean per category required");
  require(per_class >= 1, ErrorCode::InvalidArgument, "per_class must be >= 1");
  require(stddev >= 0.0, ErrorCode::InvalidArgument, "stddev must be >= 0");
  const std::size_t width = means.front().size();
  require(width >= 1, ErrorCode::InvalidArgument, "means must be non-empty");
  for (std::size_t i = 0; i < means.size(); ++i) {
    require(means[i].size() == width, ErrorCode::InvalidArgument, "means differ in dimension");
    for (std::size_t j = 0; j < i; ++j)
      require(means[i] != means[j], ErrorCode::DuplicateMeans,
              "categories " + std::to_string(j) + " and " + std::to_string(i) + " share a mean");
  }
  Rng rng(seed);
  std::vector<double> x;
  std::vector<std::size_t> y;
  x.reserve(n_categories * per_class * width);
  for (std::size_t k = 0; k < n_categories; ++k)
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t d = 0; d < width; ++d) x.push_back(rng.normal(means[k][d], stddev));
      y.push_back(k);
    }
  const std::size_t rows = y.size();
  return Dataset(Tensor({rows, width}, std::move(x)), std::move(y), n_categories);
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// MNIST-format image/label pair. Pixels are scaled to [0,1]; the category
// count is the largest label plus one unless given.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<std::size_t> n_categories = std::nullopt) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  require(img.size() >= 16, ErrorCode::BadMagic, images_path + ": too short for an IDX header");
  require(detail::read_be32(img, 0) == kIdxImageMagic, ErrorCode::BadMagic,
          images_path + ": expected magic 0x00000803");
  require(lab.size() >= 8, ErrorCode::BadMagic, labels_path + ": too short for an IDX header");
  require(detail::read_be32(lab, 0) == kIdxLabelMagic, ErrorCode::BadMagic,
          labels_path + ": expected magic 0x00000801");
  const std::size_t n_images = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_labels = detail::read_be32(lab, 4);
  require(n_images == n_labels, ErrorCode::CountMismatch,
          std::to_string(n_images) + " images vs " + std::to_string(n_labels) + " labels");
  require(n_images > 0, ErrorCode::EmptyDataset, "IDX files contain no samples");
  const std::size_t width = rows * cols;
  require(img.size() == 16 + n_images * width, ErrorCode::CountMismatch,
          images_path + ": payload size does not match header");
  require(lab.size() == 8 + n_labels, ErrorCode::CountMismatch,
          labels_path + ": payload size does not match header");
  std::vector<double> x(n_images * width);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(img[16 + i]) / 255.0;
  std::vector<std::size_t> y(n_labels);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    y[i] = lab[8 + i];
    max_label = std::max(max_label, y[i]);
  }
  const std::size_t n = n_categories.value_or(max_label + 1);
  require(max_label < n, ErrorCode::InvalidArgument, "label exceeds category count");
  return Dataset(Tensor({n_images, width}, std::move(x)), std::move(y), n, Domain{0.0, 1.0});
}

// CSV with header `label,f0,f1,...`. Features are taken as-is.
inline Dataset load_csv(const std::string& path, std::optional<std::size_t> n_categories = std::nullopt) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptyDataset, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line.rfind("label", 0) == 0, ErrorCode::MalformedRow, path + ":1: header must start with 'label'");
  const std::size_t width =
      static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  require(width >= 1, ErrorCode::MalformedRow, path + ":1: header names no features");

  auto parse = [](std::string_view tok, double& out) {
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return res.ec == std::errc{} && res.ptr == tok.data() + tok.size() && !tok.empty();
  };

  std::vector<double> x;
  std::vector<std::size_t> y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    require(fields.size() == width + 1, ErrorCode::MalformedRow,
            where + ": expected " + std::to_string(width + 1) + " fields");
    double label = 0.0;
    require(parse(fields[0], label) && label >= 0.0 && label == std::floor(label), ErrorCode::MalformedRow,
            where + ": label must be a non-negative integer");
    if (n_categories)
      require(label < static_cast<double>(*n_categories), ErrorCode::MalformedRow,
              where + ": label " + std::to_string(static_cast<long long>(label)) + " >= " +
                  std::to_string(*n_categories) + " categories");
    y.push_back(static_cast<std::size_t>(label));
    for (std::size_t f = 1; f <= width; ++f) {
      double v = 0.0;
      require(parse(fields[f], v), ErrorCode::MalformedRow, where + ": bad number in field " + std::to_string(f));
      x.push_back(v);
    }
  }
  require(!y.empty(), ErrorCode::EmptyDataset, path + ": no data rows");
  const std::size_t n = n_categories.value_or(*std::max_element(y.begin(), y.end()) + 1);
  const std::size_t rows = y.size();
  return Dataset(Tensor({rows, width}, std::move(x)), std::move(y), n);
}

inline void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path);
  out << "label";
  for (std::size_t f = 0; f < data.width(); ++f) out << ",f" << f;
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << data.labels[r];
    for (std::size_t f = 0; f < data.width(); ++f) out << ',' << data.inputs.at(r, f);
    out << '\n';
  }
}

}  // namespace advamd

#pragma once

// Binary model checkpoint. Little-endian layout:
//
//   0   char[8]  "ADVAMDCK"
//   8   u32      format version (1)
//   12  u32 n, n bytes  topology descriptor ("dense:2x32,bn:32,relu,dense:32x4")
//       u64      category count
//       u8       aux statistics initialized
//       per layer, in topology order:
//         dense  f64[out*in] weight (row-major), f64[out] bias
//         bn     f64[w] gamma, f64[w] beta, f64 momentum, f64 eps,
//                main: f64[w] mean, f64[w] var, u64 count; aux: same
//         relu   nothing
//       u32 n, n bytes  run configuration text (config.hpp key = value form)
//       u64      seed
//   end u64      FNV-1a over every preceding byte
//
// Loading checks magic and version before the checksum, so a file written
// by another format version reports VersionMismatch rather than CorruptFile.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advamd/config.hpp"
#include "advamd/error.hpp"
#include "advamd/hash.hpp"
#include "advamd/nn.hpp"

namespace advamd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'A', 'M', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  RunConfig config;
  std::uint64_t seed = 0;
};

namespace ckpt_detail {

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void doubles(const std::vector<double>& vs) {
    for (double v : vs) pod(v);
  }
  void text(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : buf_(b), end_(end) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::vector<double> doubles(std::size_t n) {
    need(n * sizeof(double));
    std::vector<double> out(n);
    std::memcpy(out.data(), buf_.data() + at_, n * sizeof(double));
    at_ += n * sizeof(double);
    return out;
  }
  std::string text() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + at_), n);
    at_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    at_ += n;
  }
  bool done() const { return at_ == end_; }

 private:
  void need(std::size_t n) const {
    require(n <= end_ - at_, ErrorCode::CorruptFile, "checkpoint payload ends early");
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t end_;
  std::size_t at_ = 0;
};

inline std::uint64_t checksum(const std::vector<std::uint8_t>& b, std::size_t n) {
  Fnv1a h;
  h.bytes(std::span<const std::uint8_t>(b.data(), n));
  return h.digest();
}

inline void write_stats(Writer& w, const BnStats& s) {
  w.doubles(s.running_mean);
  w.doubles(s.running_var);
  w.pod(s.count);
}

inline BnStats read_stats(Reader& r, std::size_t width) {
  BnStats s(width);
  s.running_mean = r.doubles(width);
  s.running_var = r.doubles(width);
  s.count = r.pod<std::uint64_t>();
  return s;
}

inline std::size_t parse_width(const std::string& tok, const std::string& s) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &used);
  } catch (const std::logic_error&) {
    fail(ErrorCode::TopologyMismatch, "bad width in topology token '" + tok + "'");
  }
  require(used == s.size() && v > 0, ErrorCode::TopologyMismatch, "bad width in topology token '" + tok + "'");
  return v;
}

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Model& model, const RunConfig& cfg, std::uint64_t seed) {
  ckpt_detail::Writer w;
  w.buf.insert(w.buf.end(), kCheckpointMagic, kCheckpointMagic + 8);
  w.pod(kCheckpointVersion);
  w.text(model.topology());
  w.pod(static_cast<std::uint64_t>(model.n_categories()));
  w.pod(static_cast<std::uint8_t>(model.aux_initialized() ? 1 : 0));
  for (const Layer& layer : model.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      w.doubles(d->weight.values);
      w.doubles(d->bias.values);
    } else if (const auto* bn = std::get_if<DualBatchNorm>(&layer)) {
      w.doubles(bn->gamma.values);
      w.doubles(bn->beta.values);
      w.pod(bn->momentum);
      w.pod(bn->eps);
      ckpt_detail::write_stats(w, bn->main_stats);
      ckpt_detail::write_stats(w, bn->aux_stats);
    }
  }
  w.text(to_text(cfg));
  w.pod(seed);
  w.pod(ckpt_detail::checksum(w.buf, w.buf.size()));
  return std::move(w.buf);
}

// `expected_topology`, when given, must match the stored descriptor.
inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& b,
                                         const std::optional<std::string>& expected_topology = std::nullopt) {
  require(b.size() >= 12 && std::memcmp(b.data(), kCheckpointMagic, 8) == 0, ErrorCode::CorruptFile,
          "not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  std::memcpy(&version, b.data() + 8, 4);
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  require(b.size() >= 20, ErrorCode::CorruptFile, "checkpoint truncated");
  const std::size_t body = b.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, b.data() + body, 8);
  require(stored == ckpt_detail::checksum(b, body), ErrorCode::CorruptFile, "checkpoint checksum mismatch");

  ckpt_detail::Reader r(b, body);
  r.skip(12);  // magic and version, checked above
  const std::string topo = r.text();
  if (expected_topology)
    require(topo == *expected_topology, ErrorCode::TopologyMismatch,
            "checkpoint topology '" + topo + "' vs expected '" + *expected_topology + "'");
  const auto n_categories = r.pod<std::uint64_t>();
  const bool aux_init = r.pod<std::uint8_t>() != 0;

  std::vector<Layer> layers;
  std::stringstream ss(topo);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "relu") {
      layers.emplace_back(ReluLayer{});
    } else if (tok.rfind("dense:", 0) == 0) {
      const auto x = tok.find('x', 6);
      require(x != std::string::npos, ErrorCode::TopologyMismatch, "bad topology token '" + tok + "'");
      const std::size_t in = ckpt_detail::parse_width(tok, tok.substr(6, x - 6));
      const std::size_t out = ckpt_detail::parse_width(tok, tok.substr(x + 1));
      Tensor w({out, in}, r.doubles(out * in));
      Tensor bias({out}, r.doubles(out));
      layers.emplace_back(DenseLayer(std::move(w), std::move(bias)));
    } else if (tok.rfind("bn:", 0) == 0) {
      const std::size_t width = ckpt_detail::parse_width(tok, tok.substr(3));
      auto gamma = r.doubles(width);
      auto beta = r.doubles(width);
      const double momentum = r.pod<double>();
      const double eps = r.pod<double>();
      DualBatchNorm bn(width, momentum, eps);
      bn.gamma.values = std::move(gamma);
      bn.beta.values = std::move(beta);
      bn.main_stats = ckpt_detail::read_stats(r, width);
      bn.aux_stats = ckpt_detail::read_stats(r, width);
      layers.emplace_back(std::move(bn));
    } else {
      fail(ErrorCode::TopologyMismatch, "unknown topology token '" + tok + "'");
    }
  }
  const std::string cfg_text = r.text();
  const auto seed = r.pod<std::uint64_t>();
  require(r.done(), ErrorCode::CorruptFile, "trailing bytes after checkpoint payload");

  std::optional<Model> model;
  try {
    model.emplace(std::move(layers), n_categories);
  } catch (const Error& e) {
    fail(ErrorCode::TopologyMismatch, std::string("stored layers do not form a model: ") + e.what());
  }
  if (aux_init) model->mark_aux_initialized();
  RunConfig cfg;
  try {
    cfg = parse_config(cfg_text, "checkpoint");
  } catch (const Error& e) {
    fail(ErrorCode::CorruptFile, std::string("stored configuration unreadable: ") + e.what());
  }
  return {std::move(*model), std::move(cfg), seed};
}

inline void save_checkpoint(const Model& model, const RunConfig& cfg, std::uint64_t seed, const std::string& path) {
  const auto bytes = serialize_checkpoint(model, cfg, seed);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<std::string>& expected_topology = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(b, expected_topology);
}

}  // namespace advamd

// Copyright 2026 The cafesim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Biased compression operators with an explicit encoder / decoder split.
//
// Wire format of an EncodedPayload:
//
//   codec_id (8) | d (32, LE) | round (32, LE) | digest (32, LE) | body
//
// The body is a bit stream packed MSB-first. Every real value on the wire is
// an IEEE-754 single written as four little-endian bytes. Body layouts:
//
//   identity      d × value(32)
//   topk          k × [index(w) value(32)]                     w = ceil(log2 d)
//   quant-topk    scale(32) k × [index(w) symbol(b)]
//   lowrank       per layer, in ShapeMap order:
//                   matrix  P rows×r values(32) then Q cols×r values(32),
//                           both row-major
//                   vector  k_l × [index(w_l) value(32)], k_l = ceil(len/2)
//   quant-lowrank per layer:
//                   matrix  scaleP(32) rows·r symbol(b) scaleQ(32) cols·r symbol(b)
//                   vector  scale(32) k_l × [index(w_l) symbol(b)]
//
// Quantizer symbols are the level index offset by 2^(b-1)-1 so they are
// non-negative. The header is not counted in bit_count.

#ifndef CAFESIM_COMPRESS_HPP_
#define CAFESIM_COMPRESS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cafesim/bitstream.hpp"
#include "cafesim/errors.hpp"
#include "cafesim/kernels.hpp"

namespace cafesim {

// ---------------------------------------------------------------------------
// Layer shapes.

struct LayerShape {
  std::size_t rows = 1;
  std::size_t cols = 1;
  /// Pure vector (bias-like). Bypasses low-rank factorization.
  bool is_vector = true;

  std::size_t size() const { return rows * cols; }
};

/// Ordered layer shapes whose element counts sum to d.
class ShapeMap {
 public:
  ShapeMap() = default;
  explicit ShapeMap(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
    for (const auto& l : layers_)
      if (l.rows == 0 || l.cols == 0) throw DimensionError("ShapeMap: empty layer");
  }

  /// A single vector layer of length d.
  static ShapeMap flat(std::size_t d) { return ShapeMap({LayerShape{1, d, true}}); }

  static LayerShape matrix(std::size_t rows, std::size_t cols) {
    return LayerShape{rows, cols, rows == 1 || cols == 1};
  }
  static LayerShape vector(std::size_t len) { return LayerShape{1, len, true}; }

  const std::vector<LayerShape>& layers() const { return layers_; }

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& l : layers_) t += l.size();
    return t;
  }

  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> out;
    std::size_t off = 0;
    for (const auto& l : layers_) {
      out.push_back(off);
      off += l.size();
    }
    return out;
  }

  /// Splits a flat vector into per-layer row-major slices.
  std::vector<ParamVector> unflatten(std::span<const double> v) const {
    if (v.size() != total()) throw DimensionError("unflatten: length mismatch");
    std::vector<ParamVector> out;
    std::size_t off = 0;
    for (const auto& l : layers_) {
      out.emplace_back(v.begin() + off, v.begin() + off + l.size());
      off += l.size();
    }
    return out;
  }

  static ParamVector flatten(const std::vector<ParamVector>& parts) {
    ParamVector out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  std::string describe() const {
    std::string s;
    for (const auto& l : layers_) {
      if (!s.empty()) s += ',';
      s += std::to_string(l.rows) + 'x' + std::to_string(l.cols) + (l.is_vector ? "v" : "m");
    }
    return s;
  }

 private:
  std::vector<LayerShape> layers_;
};

// ---------------------------------------------------------------------------
// Compressor configuration.

enum class CompressorKind : std::uint8_t { kIdentity, kTopK, kLowRank, kQuantized };

struct CompressorSpec {
  CompressorKind kind = CompressorKind::kIdentity;
  /// For kQuantized: TopK or LowRank.
  CompressorKind inner = CompressorKind::kTopK;
  /// TopK size: absolute count when non-zero, otherwise fraction of d.
  std::size_t topk_count = 0;
  double topk_fraction = 0.0;
  std::size_t rank = 1;
  std::size_t power_iters = 1;
  unsigned bits = 0;

  static CompressorSpec identity() { return {}; }
  static CompressorSpec topk_fraction_of(double fraction) {
    CompressorSpec s;
    s.kind = CompressorKind::kTopK;
    s.topk_fraction = fraction;
    return s;
  }
  static CompressorSpec topk(std::size_t k) {
    CompressorSpec s;
    s.kind = CompressorKind::kTopK;
    s.topk_count = k;
    return s;
  }
  static CompressorSpec lowrank(std::size_t r, std::size_t power_iters = 1) {
    CompressorSpec s;
    s.kind = CompressorKind::kLowRank;
    s.rank = r;
    s.power_iters = power_iters;
    return s;
  }
  static CompressorSpec quantized(CompressorSpec inner, unsigned bits) {
    if (inner.kind != CompressorKind::kTopK && inner.kind != CompressorKind::kLowRank)
      throw SpecError("quantized: inner compressor must be topk or lowrank");
    inner.inner = inner.kind;
    inner.kind = CompressorKind::kQuantized;
    inner.bits = bits;
    return inner;
  }

  bool operator==(const CompressorSpec&) const = default;

  /// Family of the sparsifier / factorizer, i.e. `inner` for quantized specs.
  CompressorKind base() const { return kind == CompressorKind::kQuantized ? inner : kind; }

  /// Number of kept entries for a TopK family over d values.
  std::size_t topk_k(std::size_t d) const {
    if (topk_count > 0) {
      if (topk_count > d)
        throw SpecError("topk: k=" + std::to_string(topk_count) + " exceeds d=" + std::to_string(d));
      return topk_count;
    }
    if (!(topk_fraction > 0.0 && topk_fraction <= 1.0))
      throw SpecError("topk: fraction must lie in (0, 1]");
    const double raw = std::ceil(topk_fraction * static_cast<double>(d) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, d);
  }

  std::uint8_t codec_id() const {
    switch (kind) {
      case CompressorKind::kIdentity: return 0;
      case CompressorKind::kTopK: return 1;
      case CompressorKind::kLowRank: return 2;
      case CompressorKind::kQuantized: return inner == CompressorKind::kTopK ? 3 : 4;
    }
    return 0xff;
  }

  std::string describe() const {
    auto topk_desc = [&] {
      return topk_count > 0 ? "topk(k=" + std::to_string(topk_count) + ")"
                            : "topk(frac=" + format_real(topk_fraction) + ")";
    };
    auto lr_desc = [&] {
      return "lowrank(r=" + std::to_string(rank) + ",iters=" + std::to_string(power_iters) + ")";
    };
    switch (kind) {
      case CompressorKind::kIdentity: return "identity";
      case CompressorKind::kTopK: return topk_desc();
      case CompressorKind::kLowRank: return lr_desc();
      case CompressorKind::kQuantized:
        return "quant(b=" + std::to_string(bits) + "," +
               (inner == CompressorKind::kTopK ? topk_desc() : lr_desc()) + ")";
    }
    return "?";
  }

  void validate(const ShapeMap& shapes) const {
    const std::size_t d = shapes.total();
    if (d == 0) throw DimensionError("compressor: empty shape map");
    if (kind == CompressorKind::kQuantized) {
      if (inner != CompressorKind::kTopK && inner != CompressorKind::kLowRank)
        throw SpecError("quantized: inner must be topk or lowrank");
      if (bits < 2 || bits > 16) throw SpecError("quantized: bits must lie in [2, 16]");
    }
    if (base() == CompressorKind::kTopK) (void)topk_k(d);
    if (base() == CompressorKind::kLowRank) {
      if (rank < 1) throw SpecError("lowrank: rank must be >= 1");
      if (power_iters < 1) throw SpecError("lowrank: power_iters must be >= 1");
      for (const auto& l : shapes.layers()) {
        if (l.is_vector) continue;
        if (rank > std::min(l.rows, l.cols))
          throw SpecError("lowrank: rank " + std::to_string(rank) + " exceeds layer " +
                          std::to_string(l.rows) + "x" + std::to_string(l.cols));
      }
    }
  }

 private:
  static std::string format_real(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }
};

/// Contract constant ω with ‖C(x) − x‖² ≤ ω‖x‖², when one is certified:
/// 0 for identity, 1 − k/d for top-k. Low-rank and quantized codecs carry no
/// certified constant.
inline std::optional<double> certified_omega(const CompressorSpec& spec, std::size_t d) {
  switch (spec.kind) {
    case CompressorKind::kIdentity: return 0.0;
    case CompressorKind::kTopK:
      return 1.0 - static_cast<double>(spec.topk_k(d)) / static_cast<double>(d);
    default: return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Payload.

struct EncodedPayload {
  std::uint8_t codec_id = 0;
  std::uint32_t d = 0;
  std::uint32_t round = 0;
  std::uint32_t digest = 0;
  std::vector<std::uint8_t> body;
  /// Exact body size in bits (header excluded).
  std::uint64_t bit_count = 0;

  static constexpr std::size_t kHeaderBytes = 13;

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + body.size());
    out.push_back(codec_id);
    auto put32 = [&](std::uint32_t v) {
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    };
    put32(d);
    put32(round);
    put32(digest);
    out.insert(out.end(), body.begin(), body.end());
    return out;
  }

  /// Parses the wire form. bit_count is set to the padded body size; decode()
  /// checks it against the size implied by the spec.
  static EncodedPayload from_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes) throw CorruptPayload("payload shorter than header");
    EncodedPayload p;
    p.codec_id = bytes[0];
    auto get32 = [&](std::size_t off) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[off + b]) << (8 * b);
      return v;
    };
    p.d = get32(1);
    p.round = get32(5);
    p.digest = get32(9);
    p.body.assign(bytes.begin() + kHeaderBytes, bytes.end());
    p.bit_count = p.body.size() * 8;
    return p;
  }
};

/// FNV-1a over the canonical description of (spec, shapes).
inline std::uint32_t spec_digest(const CompressorSpec& spec, const ShapeMap& shapes) {
  const std::string s = spec.describe() + "|" + shapes.describe();
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

inline double payload_bpp(const EncodedPayload& p, std::size_t d) {
  return static_cast<double>(p.bit_count) / static_cast<double>(d);
}

/// Shannon entropy of the symbol histogram, times the symbol count, per
/// parameter. Estimates what an ideal entropy coder would spend on symbols.
inline double empirical_entropy_bpp(std::span<const std::int64_t> symbols, std::size_t d) {
  if (symbols.empty()) throw RangeError("empirical_entropy_bpp: no symbols");
  std::map<std::int64_t, std::size_t> hist;
  for (auto s : symbols) ++hist[s];
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [sym, count] : hist) {
    const double p = static_cast<double>(count) / n;
    h -= p * std::log2(p);
  }
  return h * n / static_cast<double>(d);
}

// ---------------------------------------------------------------------------
// Building blocks.

/// The k largest-magnitude entries, ties to the lower index, sorted by index.
inline std::vector<std::pair<std::size_t, double>> topk_select(std::span<const double> v,
                                                               std::size_t k) {
  if (k < 1 || k > v.size())
    throw RangeError("topk_select: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(v.size()) + "]");
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(v[a]), mb = std::abs(v[b]);
    return ma != mb ? ma > mb : a < b;
  };
  if (k < v.size()) std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), before);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(k);
  for (auto i : idx) out.emplace_back(i, v[i]);
  return out;
}

/// Output of the symmetric mid-tread quantizer.
struct Quantized {
  /// Signed level indices j in [-(2^(b-1)-1), 2^(b-1)-1]; value ≈ j·step.
  std::vector<std::int64_t> levels;
  double lo = 0.0;  ///< −M
  double hi = 0.0;  ///< +M
  unsigned bits = 0;

  double step() const { return hi / static_cast<double>((1ll << (bits - 1)) - 1); }
  std::vector<double> dequantize() const {
    std::vector<double> out(levels.size());
    const double s = step();
    for (std::size_t i = 0; i < levels.size(); ++i)
      out[i] = levels[i] == 0 ? 0.0 : static_cast<double>(levels[i]) * s;
    return out;
  }
};

namespace detail {

inline std::int64_t quantize_level(double x, double scale, unsigned bits) {
  const std::int64_t top = (1ll << (bits - 1)) - 1;
  if (scale == 0.0) return 0;
  const double step = scale / static_cast<double>(top);
  const auto j = static_cast<std::int64_t>(std::llround(x / step));
  return std::clamp<std::int64_t>(j, -top, top);
}

inline void check_bits(unsigned bits) {
  if (bits < 2 || bits > 16) throw RangeError("quantizer: bits must lie in [2, 16]");
}

}  // namespace detail

/// Symmetric uniform quantizer over [−M, M], M = max|value|, with 2^b − 1
/// levels spaced M/(2^(b−1)−1) apart. Zero and ±M are exact levels.
inline Quantized quantize_uniform(std::span<const double> values, unsigned bits) {
  detail::check_bits(bits);
  if (values.empty()) throw RangeError("quantize_uniform: no values");
  if (!all_finite(values)) throw RangeError("quantize_uniform: non-finite value");
  double m = 0.0;
  for (double x : values) m = std::max(m, std::abs(x));
  Quantized q;
  q.bits = bits;
  q.lo = -m;
  q.hi = m;
  q.levels.reserve(values.size());
  for (double x : values) q.levels.push_back(detail::quantize_level(x, m, bits));
  return q;
}

struct LowRankFactors {
  DenseMatrix p;  ///< rows × r, orthonormal columns
  DenseMatrix q;  ///< cols × r
};

/// One-shot power iteration factorization M ≈ P Qᵀ. Q starts as a seeded
/// Gaussian drawn from `ctx`, so both ends can regenerate it.
inline LowRankFactors lowrank_factorize(const DenseMatrix& m, std::size_t r,
                                        std::size_t iters, const SeedCtx& ctx) {
  if (r < 1 || r > std::min(m.rows(), m.cols()))
    throw SpecError("lowrank_factorize: rank " + std::to_string(r) + " invalid for " +
                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  if (iters < 1) throw SpecError("lowrank_factorize: iters must be >= 1");
  DenseMatrix q(m.cols(), r,
                seeded_gaussian(ctx.with_purpose(Purpose::kLowRankInit), m.cols() * r));
  DenseMatrix p;
  for (std::size_t it = 0; it < iters; ++it) {
    p = gram_schmidt(matmul(m, q), ctx);
    q = matmul_tn(m, p);
  }
  return {std::move(p), std::move(q)};
}

// ---------------------------------------------------------------------------
// Encoder / decoder.

namespace detail {

/// Smallest single-precision value >= x (x >= 0), so a transmitted quantizer
/// scale never clips the values it was computed from.
inline float f32_ceil(double x) {
  auto f = static_cast<float>(x);
  if (static_cast<double>(f) < x) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  return f;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline std::uint64_t symbol_of(std::int64_t level, unsigned bits) {
  return static_cast<std::uint64_t>(level + ((1ll << (bits - 1)) - 1));
}

inline std::int64_t level_of(std::uint64_t symbol, unsigned bits) {
  const std::int64_t top = (1ll << (bits - 1)) - 1;
  const auto level = static_cast<std::int64_t>(symbol) - top;
  if (level < -top || level > top) throw CorruptPayload("quantizer symbol out of range");
  return level;
}

inline double dequant(std::int64_t level, float scale, unsigned bits) {
  if (level == 0) return 0.0;
  const double step = static_cast<double>(scale) / static_cast<double>((1ll << (bits - 1)) - 1);
  return static_cast<double>(level) * step;
}

inline void write_quantized_block(BitWriter& w, std::span<const double> values, unsigned bits) {
  const float scale = f32_ceil(max_abs(values));
  w.write_f32(scale);
  for (double x : values) w.write(symbol_of(quantize_level(x, scale, bits), bits), bits);
}

inline std::vector<double> read_quantized_block(BitReader& r, std::size_t n, unsigned bits,
                                                std::vector<std::int64_t>* symbols) {
  const float scale = r.read_f32();
  if (!std::isfinite(scale) || scale < 0.0f) throw CorruptPayload("bad quantizer scale");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sym = r.read(bits);
    if (symbols) symbols->push_back(static_cast<std::int64_t>(sym));
    out[i] = dequant(level_of(sym, bits), scale, bits);
  }
  return out;
}

inline void write_sparse(BitWriter& w, std::span<const double> v, std::size_t k,
                         const CompressorSpec& spec) {
  const auto picks = topk_select(v, k);
  const unsigned ib = index_bits(v.size());
  if (spec.kind == CompressorKind::kQuantized) {
    std::vector<double> vals;
    vals.reserve(picks.size());
    for (const auto& [i, x] : picks) vals.push_back(x);
    const float scale = f32_ceil(max_abs(vals));
    w.write_f32(scale);
    for (const auto& [i, x] : picks) {
      w.write(i, ib);
      w.write(symbol_of(quantize_level(x, scale, spec.bits), spec.bits), spec.bits);
    }
  } else {
    for (const auto& [i, x] : picks) {
      w.write(i, ib);
      w.write_f32(static_cast<float>(x));
    }
  }
}

inline void read_sparse(BitReader& r, std::span<double> out, std::size_t k,
                        const CompressorSpec& spec, std::vector<std::int64_t>* symbols) {
  const unsigned ib = index_bits(out.size());
  const bool quant = spec.kind == CompressorKind::kQuantized;
  float scale = 0.0f;
  if (quant) {
    scale = r.read_f32();
    if (!std::isfinite(scale) || scale < 0.0f) throw CorruptPayload("bad quantizer scale");
  }
  std::size_t last = 0;
  for (std::size_t e = 0; e < k; ++e) {
    const auto i = static_cast<std::size_t>(r.read(ib));
    if (i >= out.size() || (e > 0 && i <= last)) throw CorruptPayload("bad sparse index");
    last = i;
    if (quant) {
      const auto sym = r.read(spec.bits);
      if (symbols) symbols->push_back(static_cast<std::int64_t>(sym));
      out[i] = dequant(level_of(sym, spec.bits), scale, spec.bits);
    } else {
      out[i] = static_cast<double>(r.read_f32());
    }
  }
}

inline std::size_t vector_layer_k(std::size_t len) { return (len + 1) / 2; }

/// Exact body size in bits implied by (spec, shapes).
inline std::uint64_t expected_bits(const CompressorSpec& spec, const ShapeMap& shapes) {
  const std::uint64_t d = shapes.total();
  const bool quant = spec.kind == CompressorKind::kQuantized;
  const std::uint64_t vbits = quant ? spec.bits : 32;
  switch (spec.base()) {
    case CompressorKind::kIdentity: return 32 * d;
    case CompressorKind::kTopK: {
      const std::uint64_t k = spec.topk_k(d);
      return (quant ? 32 : 0) + k * (index_bits(d) + vbits);
    }
    case CompressorKind::kLowRank: {
      std::uint64_t bits = 0;
      for (const auto& l : shapes.layers()) {
        if (l.is_vector) {
          const std::uint64_t k = vector_layer_k(l.size());
          bits += (quant ? 32 : 0) + k * (index_bits(l.size()) + vbits);
        } else {
          bits += (quant ? 64 : 0) + spec.rank * (l.rows + l.cols) * vbits;
        }
      }
      return bits;
    }
    default: break;
  }
  throw SpecError("unknown compressor");
}

inline std::vector<double> decode_body(const CompressorSpec& spec, const EncodedPayload& p,
                                       const ShapeMap& shapes,
                                       std::vector<std::int64_t>* symbols) {
  const std::size_t d = shapes.total();
  if (p.d != d) throw DimensionError("decode: payload d=" + std::to_string(p.d) +
                                     " but shapes total " + std::to_string(d));
  if (p.codec_id != spec.codec_id()) throw CorruptPayload("decode: codec id mismatch");
  if (p.digest != spec_digest(spec, shapes)) throw CorruptPayload("decode: spec digest mismatch");
  const std::uint64_t bits = expected_bits(spec, shapes);
  if (p.body.size() != (bits + 7) / 8) throw CorruptPayload("decode: body size mismatch");

  BitReader r(p.body);
  ParamVector out(d, 0.0);
  const bool quant = spec.kind == CompressorKind::kQuantized;
  switch (spec.base()) {
    case CompressorKind::kIdentity:
      for (auto& x : out) x = static_cast<double>(r.read_f32());
      break;
    case CompressorKind::kTopK:
      read_sparse(r, out, spec.topk_k(d), spec, symbols);
      break;
    case CompressorKind::kLowRank: {
      std::size_t off = 0;
      for (const auto& l : shapes.layers()) {
        std::span<double> slice(out.data() + off, l.size());
        if (l.is_vector) {
          read_sparse(r, slice, vector_layer_k(l.size()), spec, symbols);
        } else {
          const std::size_t rk = spec.rank;
          DenseMatrix pm, qm;
          if (quant) {
            pm = DenseMatrix(l.rows, rk, read_quantized_block(r, l.rows * rk, spec.bits, symbols));
            qm = DenseMatrix(l.cols, rk, read_quantized_block(r, l.cols * rk, spec.bits, symbols));
          } else {
            std::vector<double> pv(l.rows * rk), qv(l.cols * rk);
            for (auto& x : pv) x = static_cast<double>(r.read_f32());
            for (auto& x : qv) x = static_cast<double>(r.read_f32());
            pm = DenseMatrix(l.rows, rk, std::move(pv));
            qm = DenseMatrix(l.cols, rk, std::move(qv));
          }
          const DenseMatrix rec = matmul_nt(pm, qm);
          std::copy(rec.data().begin(), rec.data().end(), slice.begin());
        }
        off += l.size();
      }
      break;
    }
    default:
      throw SpecError("decode: unknown compressor");
  }
  if (r.position() != bits) throw CorruptPayload("decode: trailing bits");
  for (double& x : out) x += 0.0;  // -0 -> +0
  if (!all_finite(out)) throw CorruptPayload("decode: non-finite value");
  return out;
}

}  // namespace detail

/// Encoder E. `ctx` labels the round (and seeds low-rank initialization per
/// layer); the round is copied into the header.
inline EncodedPayload encode(const CompressorSpec& spec, std::span<const double> v,
                             const ShapeMap& shapes, const SeedCtx& ctx) {
  const std::size_t d = shapes.total();
  if (v.size() != d)
    throw DimensionError("encode: vector length " + std::to_string(v.size()) +
                         " != shapes total " + std::to_string(d));
  spec.validate(shapes);
  if (!all_finite(v)) throw NonFiniteError("encode: non-finite input");
  if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("encode: d too large");

  BitWriter w;
  const bool quant = spec.kind == CompressorKind::kQuantized;
  switch (spec.base()) {
    case CompressorKind::kIdentity:
      for (double x : v) w.write_f32(static_cast<float>(x));
      break;
    case CompressorKind::kTopK:
      detail::write_sparse(w, v, spec.topk_k(d), spec);
      break;
    case CompressorKind::kLowRank: {
      std::size_t off = 0;
      std::uint64_t layer = 0;
      for (const auto& l : shapes.layers()) {
        std::span<const double> slice(v.data() + off, l.size());
        if (l.is_vector) {
          detail::write_sparse(w, slice, detail::vector_layer_k(l.size()), spec);
        } else {
          DenseMatrix m(l.rows, l.cols, std::vector<double>(slice.begin(), slice.end()));
          auto f = lowrank_factorize(m, spec.rank, spec.power_iters, ctx.with_layer(layer));
          if (quant) {
            detail::write_quantized_block(w, f.p.data(), spec.bits);
            detail::write_quantized_block(w, f.q.data(), spec.bits);
          } else {
            for (double x : f.p.data()) w.write_f32(static_cast<float>(x));
            for (double x : f.q.data()) w.write_f32(static_cast<float>(x));
          }
        }
        off += l.size();
        ++layer;
      }
      break;
    }
    default:
      throw SpecError("encode: unknown compressor");
  }

  EncodedPayload p;
  p.codec_id = spec.codec_id();
  p.d = static_cast<std::uint32_t>(d);
  p.round = static_cast<std::uint32_t>(ctx.round);
  p.digest = spec_digest(spec, shapes);
  p.bit_count = w.bit_count();
  p.body = std::move(w).take();
  return p;
}

/// Decoder D. Output is C(v) = D(E(v)).
inline ParamVector decode(const CompressorSpec& spec, const EncodedPayload& p,
                          const ShapeMap& shapes, const SeedCtx& /*ctx*/ = {}) {
  return detail::decode_body(spec, p, shapes, nullptr);
}

/// Quantizer symbols carried by a quantized payload (empty otherwise).
inline std::vector<std::int64_t> payload_symbols(const CompressorSpec& spec,
                                                 const EncodedPayload& p,
                                                 const ShapeMap& shapes) {
  std::vector<std::int64_t> symbols;
  if (spec.kind == CompressorKind::kQuantized) detail::decode_body(spec, p, shapes, &symbols);
  return symbols;
}

/// C(v) = D(E(v)).
inline ParamVector apply(const CompressorSpec& spec, std::span<const double> v,
                         const ShapeMap& shapes, const SeedCtx& ctx) {
  return decode(spec, encode(spec, v, shapes, ctx), shapes, ctx);
}

}  // namespace cafesim

#endif  // CAFESIM_COMPRESS_HPP_

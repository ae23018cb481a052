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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "cafesim/bitstream.hpp"
#include "cafesim/compress.hpp"
#include "golden_cases.hpp"

namespace cafesim {
namespace {

ParamVector f32_round(std::span<const double> v) {
  ParamVector out;
  for (double x : v) out.push_back(static_cast<double>(static_cast<float>(x)));
  return out;
}

// Sort-everything reference for the top-k index set.
std::set<std::size_t> topk_oracle(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  return {idx.begin(), idx.begin() + k};
}

TEST(BitstreamTest, RoundTripsFieldsOfAnyWidth) {
  BitWriter w;
  w.write(5, 3);
  w.write(0x1234, 13);
  w.write(1, 1);
  w.write_f32(-2.5f);
  w.write(0xdeadbeefcafeull, 48);
  EXPECT_EQ(w.bit_count(), 3u + 13 + 1 + 32 + 48);
  const auto bytes = std::move(w).take();
  BitReader r(bytes);
  EXPECT_EQ(r.read(3), 5u);
  EXPECT_EQ(r.read(13), 0x1234u);
  EXPECT_EQ(r.read(1), 1u);
  EXPECT_EQ(r.read_f32(), -2.5f);
  EXPECT_EQ(r.read(48), 0xdeadbeefcafeull);
  EXPECT_THROW(r.read(8), CorruptPayload);
}

TEST(BitstreamTest, IndexBits) {
  EXPECT_EQ(index_bits(1), 0u);
  EXPECT_EQ(index_bits(2), 1u);
  EXPECT_EQ(index_bits(3), 2u);
  EXPECT_EQ(index_bits(4), 2u);
  EXPECT_EQ(index_bits(5), 3u);
  EXPECT_EQ(index_bits(1u << 22), 22u);
  EXPECT_EQ(index_bits((1u << 22) + 1), 23u);
}

TEST(ShapeMapTest, FlattenRoundTrip) {
  const ShapeMap s({ShapeMap::matrix(3, 4), ShapeMap::vector(4), ShapeMap::matrix(1, 6)});
  EXPECT_EQ(s.total(), 22u);
  EXPECT_TRUE(s.layers()[2].is_vector);
  const auto v = seeded_gaussian(SeedCtx{1}, 22);
  EXPECT_EQ(ShapeMap::flatten(s.unflatten(v)), v);
  EXPECT_EQ(s.offsets(), (std::vector<std::size_t>{0, 12, 16}));
  EXPECT_THROW(s.unflatten(ParamVector(5)), DimensionError);
}

TEST(TopKSelectTest, Examples) {
  const auto a = topk_select(std::vector<double>{1, -1, 1}, 2);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], (std::pair<std::size_t, double>{0, 1.0}));
  EXPECT_EQ(a[1], (std::pair<std::size_t, double>{1, -1.0}));
  const auto b = topk_select(std::vector<double>{0, 0, 9}, 1);
  EXPECT_EQ(b[0], (std::pair<std::size_t, double>{2, 9.0}));
  EXPECT_THROW(topk_select(std::vector<double>{1, 2}, 0), RangeError);
  EXPECT_THROW(topk_select(std::vector<double>{1, 2}, 3), RangeError);
}

TEST(TopKSelectTest, MatchesSortOracle) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto v = seeded_gaussian(SeedCtx{s}, 200);
    const auto picks = topk_select(v, 20);
    std::set<std::size_t> got;
    for (const auto& [i, x] : picks) {
      got.insert(i);
      EXPECT_EQ(x, v[i]);
    }
    EXPECT_EQ(got, topk_oracle(v, 20));
    EXPECT_TRUE(std::is_sorted(picks.begin(), picks.end()));
  }
}

TEST(CompressorSpecTest, TopKCountFromFraction) {
  EXPECT_EQ(CompressorSpec::topk_fraction_of(0.1).topk_k(1000), 100u);
  EXPECT_EQ(CompressorSpec::topk_fraction_of(0.001).topk_k(2010), 3u);
  EXPECT_EQ(CompressorSpec::topk_fraction_of(0.001).topk_k(10), 1u);
  EXPECT_EQ(CompressorSpec::topk_fraction_of(1.0).topk_k(7), 7u);
  EXPECT_THROW(CompressorSpec::topk_fraction_of(1.5).topk_k(10), SpecError);
  EXPECT_THROW(CompressorSpec::topk(11).topk_k(10), SpecError);
}

TEST(CompressorSpecTest, Validation) {
  const ShapeMap s({ShapeMap::matrix(4, 3), ShapeMap::vector(3)});
  EXPECT_THROW(CompressorSpec::lowrank(4).validate(s), SpecError);
  EXPECT_NO_THROW(CompressorSpec::lowrank(3).validate(s));
  EXPECT_THROW(CompressorSpec::quantized(CompressorSpec::identity(), 4), SpecError);
  auto q = CompressorSpec::quantized(CompressorSpec::topk(2), 4);
  q.bits = 17;
  EXPECT_THROW(q.validate(s), SpecError);
}

TEST(CertifiedOmegaTest, Values) {
  EXPECT_EQ(*certified_omega(CompressorSpec::identity(), 10), 0.0);
  EXPECT_DOUBLE_EQ(*certified_omega(CompressorSpec::topk(10), 1000), 0.99);
  EXPECT_FALSE(certified_omega(CompressorSpec::lowrank(1), 10).has_value());
}

TEST(EncodeTest, IdentityIs32BitsPerValue) {
  const ParamVector v{1.0, -2.0, 0.1, 3.0};
  const auto s = ShapeMap::flat(4);
  const auto p = encode(CompressorSpec::identity(), v, s, {});
  EXPECT_EQ(p.bit_count, 128u);
  EXPECT_DOUBLE_EQ(payload_bpp(p, 4), 32.0);
  EXPECT_EQ(decode(CompressorSpec::identity(), p, s), f32_round(v));
}

TEST(EncodeTest, TopKSingleEntryLayout) {
  const ParamVector v{0, 5, 0};
  const auto s = ShapeMap::flat(3);
  const auto p = encode(CompressorSpec::topk(1), v, s, {});
  EXPECT_EQ(p.bit_count, 34u);
  // index 1 in two bits, then 5.0f little-endian: 00 00 a0 40.
  BitReader r(p.body);
  EXPECT_EQ(r.read(2), 1u);
  EXPECT_EQ(r.read(8), 0x00u);
  EXPECT_EQ(r.read(8), 0x00u);
  EXPECT_EQ(r.read(8), 0xa0u);
  EXPECT_EQ(r.read(8), 0x40u);
  EXPECT_EQ(decode(CompressorSpec::topk(1), p, s), v);
}

TEST(EncodeTest, TopKExamples) {
  const ParamVector v{1, -7, 3, 0};
  const auto s = ShapeMap::flat(4);
  EXPECT_EQ(apply(CompressorSpec::topk(2), v, s, {}), (ParamVector{0, -7, 3, 0}));
  const auto q = apply(CompressorSpec::quantized(CompressorSpec::topk(2), 4), v, s, {});
  // Step is M/(2^(b-1)-1) = 7/7 at b=4; both survivors land within one step.
  EXPECT_EQ(q[0], 0.0);
  EXPECT_EQ(q[3], 0.0);
  EXPECT_NEAR(q[1], -7.0, 1.0);
  EXPECT_NEAR(q[2], 3.0, 1.0);
  const auto full = seeded_gaussian(SeedCtx{4}, 50);
  EXPECT_EQ(apply(CompressorSpec::topk(50), full, ShapeMap::flat(50), {}), f32_round(full));
}

TEST(EncodeTest, TopKBppFormula) {
  // 10% of d in (2^21, 2^22] costs 0.1 * (32 + 22) bits per parameter.
  const std::size_t d = 3000000;
  const auto spec = CompressorSpec::topk_fraction_of(0.1);
  const ShapeMap s = ShapeMap::flat(d);
  EXPECT_EQ(detail::expected_bits(spec, s), 300000ull * 54);
  EXPECT_NEAR(static_cast<double>(detail::expected_bits(spec, s)) / d, 5.40, 1e-12);
}

TEST(EncodeTest, LowRankBppFormula) {
  const std::size_t l = 16, r = 2;
  const ShapeMap s({ShapeMap::matrix(l, l)});
  const auto v = seeded_gaussian(SeedCtx{5}, l * l);
  const auto p = encode(CompressorSpec::lowrank(r), v, s, SeedCtx{1});
  EXPECT_DOUBLE_EQ(payload_bpp(p, l * l), static_cast<double>(r * 2 * l * 32) / (l * l));
}

TEST(EncodeTest, BppIsAdditiveOverLayers) {
  const ShapeMap a({ShapeMap::matrix(8, 6)}), b({ShapeMap::vector(10)});
  const ShapeMap ab({ShapeMap::matrix(8, 6), ShapeMap::vector(10)});
  const auto spec = CompressorSpec::lowrank(2);
  const auto v = seeded_gaussian(SeedCtx{8}, 58);
  const auto pa = encode(spec, std::span<const double>(v).first(48), a, SeedCtx{1});
  const auto pb = encode(spec, std::span<const double>(v).subspan(48), b, SeedCtx{1});
  const auto pab = encode(spec, v, ab, SeedCtx{1});
  EXPECT_NEAR(payload_bpp(pab, 58), (48 * payload_bpp(pa, 48) + 10 * payload_bpp(pb, 10)) / 58, 1e-12);
}

TEST(EncodeTest, ZeroVectorDecodesToZeroForEverySpec) {
  const auto s = golden::shapes();
  const ParamVector zero(s.total(), 0.0);
  for (const auto& c : golden::cases()) {
    const auto out = apply(c.spec, zero, s, golden::ctx());
    for (double x : out) {
      EXPECT_EQ(x, 0.0) << c.name;
      EXPECT_FALSE(std::signbit(x)) << c.name;
    }
  }
}

TEST(EncodeTest, Errors) {
  const auto s = ShapeMap::flat(4);
  EXPECT_THROW(encode(CompressorSpec::identity(), ParamVector(3), s, {}), DimensionError);
  EXPECT_THROW(encode(CompressorSpec::identity(), ParamVector{1, NAN, 0, 0}, s, {}), NonFiniteError);
  auto p = encode(CompressorSpec::topk(2), ParamVector{1, 2, 3, 4}, s, {});
  EXPECT_THROW(decode(CompressorSpec::topk(3), p, s), CorruptPayload);
  EXPECT_THROW(decode(CompressorSpec::identity(), p, s), CorruptPayload);
  EXPECT_THROW(decode(CompressorSpec::topk(2), p, ShapeMap::flat(5)), DimensionError);
  auto truncated = p;
  truncated.body.pop_back();
  EXPECT_THROW(decode(CompressorSpec::topk(2), truncated, s), CorruptPayload);
}

TEST(EncodeTest, WireFormRoundTrip) {
  const auto s = golden::shapes();
  for (const auto& c : golden::cases()) {
    const auto p = encode(c.spec, golden::input(), s, golden::ctx());
    const auto bytes = p.to_bytes();
    ASSERT_EQ(bytes.size(), EncodedPayload::kHeaderBytes + (p.bit_count + 7) / 8);
    const auto back = EncodedPayload::from_bytes(bytes);
    EXPECT_EQ(back.codec_id, p.codec_id);
    EXPECT_EQ(back.round, 3u);
    EXPECT_EQ(decode(c.spec, back, s), decode(c.spec, p, s)) << c.name;
  }
}

TEST(EncodeTest, RoundTripDeterminism) {
  const auto s = golden::shapes();
  for (const auto& c : golden::cases()) {
    const auto a = encode(c.spec, golden::input(), s, golden::ctx());
    const auto b = encode(c.spec, golden::input(), s, golden::ctx());
    EXPECT_EQ(a.to_bytes(), b.to_bytes()) << c.name;
    EXPECT_EQ(decode(c.spec, a, s), decode(c.spec, b, s)) << c.name;
    EXPECT_EQ(a.bit_count, detail::expected_bits(c.spec, s)) << c.name;
  }
}

TEST(EncodeTest, MatchesGoldenFixtures) {
  const auto s = golden::shapes();
  for (const auto& c : golden::cases()) {
    const auto bytes = encode(c.spec, golden::input(), s, golden::ctx()).to_bytes();
    const auto file = golden::path(CAFESIM_GOLDEN_DIR, c);
    if (golden::update_requested()) golden::write(file, bytes);
    const auto want = golden::read(file);
    ASSERT_TRUE(want.has_value()) << "missing fixture " << file;
    EXPECT_EQ(bytes, *want) << c.name;
  }
}

TEST(ContractTest, TopKNeverViolatesOmega) {
  for (std::size_t k : {1u, 5u, 20u, 100u}) {
    const auto spec = CompressorSpec::topk(k);
    const double w = *certified_omega(spec, 100);
    int violations = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto v = seeded_gaussian(SeedCtx{s, k}, 100);
      const auto c = apply(spec, v, ShapeMap::flat(100), {});
      // Kept entries travel as f32; allow for that rounding only.
      if (sqnorm(subtract(c, v)) > (w + 1e-12) * sqnorm(v)) ++violations;
    }
    EXPECT_EQ(violations, 0) << "k=" << k;
  }
}

TEST(ContractTest, QuantizedTopKKeepsTheSparsityPattern) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto v = seeded_gaussian(SeedCtx{s, 77}, 64);
    const auto t = apply(CompressorSpec::topk(8), v, ShapeMap::flat(64), {});
    const auto q = apply(CompressorSpec::quantized(CompressorSpec::topk(8), 8), v, ShapeMap::flat(64), {});
    for (std::size_t i = 0; i < 64; ++i) {
      if (t[i] == 0.0) {
        EXPECT_EQ(q[i], 0.0);
      }
    }
  }
}

TEST(QuantizerTest, Examples) {
  const auto z = quantize_uniform(std::vector<double>{0, 0, 0}, 4);
  for (double x : z.dequantize()) EXPECT_EQ(x, 0.0);
  const auto e = quantize_uniform(std::vector<double>{-1, 1}, 2);
  EXPECT_EQ(e.dequantize(), (std::vector<double>{-1, 1}));
  EXPECT_THROW(quantize_uniform(std::vector<double>{1}, 1), RangeError);
  EXPECT_THROW(quantize_uniform(std::vector<double>{1}, 17), RangeError);
}

TEST(QuantizerTest, ErrorIsAtMostHalfAStep) {
  // 2^b − 1 levels with zero and ±M exact are spaced M/(2^(b−1) − 1) apart,
  // so the worst case is M/(2^b − 2): M/62 at b = 6.
  const auto v = seeded_gaussian(SeedCtx{31}, 1000);
  const auto q = quantize_uniform(v, 6);
  const auto back = q.dequantize();
  const double m = q.hi;
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(back[i] - v[i]));
  EXPECT_LE(worst, m / 62 + 1e-12);
  std::set<std::int64_t> levels(q.levels.begin(), q.levels.end());
  EXPECT_LE(levels.size(), 63u);
}

TEST(LowRankTest, RecoversRankOne) {
  const auto u = seeded_gaussian(SeedCtx{1}, 7), w = seeded_gaussian(SeedCtx{2}, 5);
  DenseMatrix m(7, 5);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) m(i, j) = u[i] * w[j];
  const auto f = lowrank_factorize(m, 1, 1, SeedCtx{3});
  const auto rec = matmul_nt(f.p, f.q);
  EXPECT_LE(std::sqrt(sqnorm(subtract(rec.data(), m.data())) / sqnorm(m.data())), 1e-8);
}

TEST(LowRankTest, FullRankAndZero) {
  const DenseMatrix m(10, 8, seeded_gaussian(SeedCtx{4}, 80));
  const auto f = lowrank_factorize(m, 8, 1, SeedCtx{5});
  const auto rec = matmul_nt(f.p, f.q);
  EXPECT_LE(std::sqrt(sqnorm(subtract(rec.data(), m.data())) / sqnorm(m.data())), 1e-6);
  const auto z = lowrank_factorize(DenseMatrix(4, 3), 2, 1, SeedCtx{6});
  const auto zr = matmul_nt(z.p, z.q);
  for (double x : zr.data()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(lowrank_factorize(m, 9, 1, {}), SpecError);
}

TEST(LowRankTest, FullRankCodecReproducesRoundedInput) {
  const ShapeMap s({ShapeMap::matrix(6, 4)});
  const auto v = seeded_gaussian(SeedCtx{12}, 24);
  const auto out = apply(CompressorSpec::lowrank(4, 2), v, s, SeedCtx{2});
  EXPECT_LE(max_abs_diff(out, f32_round(v)), 1e-6);
}

TEST(LowRankTest, VectorLayersUseHalfTopK) {
  const ShapeMap s({ShapeMap::vector(5)});
  const ParamVector v{5, -1, 4, 0.5, -3};
  EXPECT_EQ(apply(CompressorSpec::lowrank(1), v, s, {}), (ParamVector{5, 0, 4, 0, -3}));
}

TEST(EntropyTest, Examples) {
  EXPECT_EQ(empirical_entropy_bpp(std::vector<std::int64_t>{3, 3, 3, 3}, 8), 0.0);
  EXPECT_DOUBLE_EQ(empirical_entropy_bpp(std::vector<std::int64_t>{0, 1, 0, 1}, 8), 0.5);
  std::vector<std::int64_t> uniform;
  for (int rep = 0; rep < 100; ++rep)
    for (int s = 0; s < 16; ++s) uniform.push_back(s);
  EXPECT_NEAR(empirical_entropy_bpp(uniform, 1600), 4.0, 0.01);
  EXPECT_THROW(empirical_entropy_bpp(std::vector<std::int64_t>{}, 1), RangeError);
}

TEST(EntropyTest, PayloadSymbolsOnlyForQuantized) {
  const auto s = golden::shapes();
  const auto spec = CompressorSpec::quantized(CompressorSpec::topk(6), 4);
  const auto p = encode(spec, golden::input(), s, golden::ctx());
  const auto sym = payload_symbols(spec, p, s);
  EXPECT_EQ(sym.size(), 6u);
  for (auto x : sym) EXPECT_LT(x, 15);
  const auto plain = encode(CompressorSpec::topk(6), golden::input(), s, golden::ctx());
  EXPECT_TRUE(payload_symbols(CompressorSpec::topk(6), plain, s).empty());
}

}  // namespace
}  // namespace cafesim

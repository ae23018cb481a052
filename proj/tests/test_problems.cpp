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
#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "cafesim/problems.hpp"
#include "oracles.hpp"

namespace cafesim {
namespace {

Objective quad(DenseMatrix a, ParamVector b) {
  return Objective(QuadraticObjective{std::move(a), std::move(b), 0.0});
}

ParamVector unit(std::size_t d, std::size_t i) {
  ParamVector e(d, 0.0);
  e[i] = 1.0;
  return e;
}

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p.string();
}

TEST(ObjectiveTest, QuadraticGradientIsIdentityMap) {
  const auto f = quad(DenseMatrix::identity(4), ParamVector(4, 0.0));
  const ParamVector x{1.5, -2, 0, 7};
  EXPECT_EQ(gradient(f, x), x);
  EXPECT_DOUBLE_EQ(value(f, x), 0.5 * (2.25 + 4 + 49));
}

TEST(ObjectiveTest, LogisticAtZeroIsLogTwo) {
  auto data = std::make_shared<const Dataset>(
      gen_classification(SeedCtx{3}, 5, 2, 40, 1.0));
  const Objective f(LogisticObjective{data, 0.0});
  EXPECT_NEAR(value(f, ParamVector(f.dim(), 0.0)), std::log(2.0), 1e-12);
}

TEST(ObjectiveTest, ShapeErrors) {
  DenseMatrix a = DenseMatrix::identity(2);
  a(0, 1) = 1.0;
  EXPECT_THROW(quad(a, ParamVector(2)), SymmetryError);
  EXPECT_THROW(quad(DenseMatrix::identity(2), ParamVector(3)), DimensionError);
  const auto f = quad(DenseMatrix::identity(2), ParamVector(2));
  EXPECT_THROW(gradient(f, ParamVector(3)), DimensionError);
}

TEST(ObjectiveTest, GradientMatchesFiniteDifferences) {
  EXPECT_LE(oracle::fd_worst_relative_error(100), 1e-6);
}

TEST(ObjectiveTest, SmoothnessInequality) {
  // ‖∇f(x)‖² ≤ 2L(f(x) − f*) for L-smooth f with minimum f*.
  EXPECT_GE(oracle::lemma3_worst_slack(100), -1e-9);
}

TEST(ObjectiveTest, LogisticSmoothnessBoundDominatesHessian) {
  // Finite-difference Hessian spectral norm at a few points stays below the bound.
  auto data = std::make_shared<const Dataset>(gen_classification(SeedCtx{8}, 3, 3, 20, 2.0));
  const Objective f(LogisticObjective{data, 1e-2});
  const double bound = logistic_smoothness_bound(f.logistic());
  const std::size_t d = f.dim();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = seeded_gaussian(SeedCtx{s, 9}, d);
    Eigen::MatrixXd h(d, d);
    for (std::size_t j = 0; j < d; ++j) {
      auto xp = x, xm = x;
      xp[j] += 1e-5;
      xm[j] -= 1e-5;
      const auto gp = gradient(f, xp), gm = gradient(f, xm);
      for (std::size_t i = 0; i < d; ++i) h(i, j) = (gp[i] - gm[i]) / 2e-5;
    }
    const Eigen::MatrixXd sym = 0.5 * (h + h.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    EXPECT_LE(es.eigenvalues().cwiseAbs().maxCoeff(), bound * (1 + 1e-6));
  }
}

TEST(GenClassificationTest, Deterministic) {
  const auto a = gen_classification(SeedCtx{1}, 4, 3, 10, 2.0);
  const auto b = gen_classification(SeedCtx{1}, 4, 3, 10, 2.0);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.size(), 30u);
  EXPECT_THROW(gen_classification(SeedCtx{1}, 4, 1, 10, 2.0), RangeError);
}

TEST(GenClassificationTest, SeparatedBlobsAreLearnable) {
  auto data = std::make_shared<const Dataset>(gen_classification(SeedCtx{2}, 5, 2, 100, 10.0));
  const Objective f(LogisticObjective{data, 0.0});
  const double step = 1.0 / logistic_smoothness_bound(f.logistic());
  ParamVector x(f.dim(), 0.0);
  for (int it = 0; it < 500; ++it) axpy(-step, gradient(f, x), x);
  EXPECT_GE(accuracy(*data, x), 0.99);
}

TEST(GenClassificationTest, CoincidentMeansAreNotLearnable) {
  auto data = std::make_shared<const Dataset>(gen_classification(SeedCtx{3}, 5, 4, 500, 0.0));
  const Objective f(LogisticObjective{data, 1e-2});
  const double step = 1.0 / logistic_smoothness_bound(f.logistic());
  ParamVector x(f.dim(), 0.0);
  for (int it = 0; it < 300; ++it) axpy(-step, gradient(f, x), x);
  EXPECT_NEAR(accuracy(*data, x), 0.25, 0.05);
}

TEST(PartitionTest, IidSingleClientIsWholeDataset) {
  const auto data = gen_classification(SeedCtx{4}, 3, 3, 10, 1.0);
  const auto parts = partition(data, {}, 1, SeedCtx{5});
  ASSERT_EQ(parts.size(), 1u);
  std::multiset<int> a(data.labels.begin(), data.labels.end());
  std::multiset<int> b(parts[0].labels.begin(), parts[0].labels.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(parts[0].size(), data.size());
}

TEST(PartitionTest, IidCoversEverySampleOnce) {
  const auto data = gen_classification(SeedCtx{4}, 3, 5, 21, 1.0);
  const auto parts = partition(data, {}, 10, SeedCtx{5});
  std::size_t total = 0;
  for (const auto& p : parts) {
    total += p.size();
    EXPECT_GE(p.size(), 10u);
  }
  EXPECT_EQ(total, data.size());
}

TEST(PartitionTest, ByClassHoldsExactLabelCount) {
  const auto data = gen_classification(SeedCtx{6}, 3, 10, 100, 1.0);
  const auto parts = partition(data, {PartitionMode::kByClass, 0.4}, 10, SeedCtx{7});
  const std::size_t first = parts[0].size();
  for (const auto& p : parts) {
    EXPECT_EQ(std::set<int>(p.labels.begin(), p.labels.end()).size(), 4u);
    EXPECT_EQ(p.size(), first);
  }
  EXPECT_THROW(partition(data, {PartitionMode::kByClass, 0.0}, 10, {}), PartitionError);
}

TEST(ServerSplitTest, BetaControlsMix) {
  const auto data = gen_classification(SeedCtx{8}, 3, 4, 250, 1.0);
  const std::vector<int> in{0, 1}, out{2, 3};
  auto count_in = [&](const Dataset& s) {
    std::size_t n = 0;
    for (int y : s.labels) n += y < 2;
    return n;
  };
  const auto all_in = make_server_split(data, 1.0, 0.1, in, out, SeedCtx{1});
  EXPECT_EQ(all_in.size(), 100u);
  EXPECT_EQ(count_in(all_in), 100u);
  const auto none_in = make_server_split(data, 0.0, 0.1, in, out, SeedCtx{1});
  EXPECT_EQ(count_in(none_in), 0u);
  const auto half = make_server_split(data, 0.5, 0.1, in, out, SeedCtx{1});
  EXPECT_NEAR(static_cast<double>(count_in(half)), 50.0, 1.0);
  EXPECT_THROW(make_server_split(data, 1.5, 0.1, in, out, {}), PartitionError);
  EXPECT_THROW(make_server_split(data, 0.5, 0.1, in, in, {}), PartitionError);
}

TEST(CsvLoaderTest, ReadsAndRejects) {
  const auto good = write_temp("cafesim_good.csv", "f0,f1,label\n1.5,2,0\n-1,0.25,1\n");
  const auto d = load_dataset_csv(good);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.classes, 2);
  EXPECT_EQ(d.features(1, 1), 0.25);

  const auto bad = write_temp("cafesim_bad.csv", "f0,f1,label\n1,2,0\n1,x,1\n");
  try {
    load_dataset_csv(bad);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  const auto short_row = write_temp("cafesim_short.csv", "f0,f1,label\n1,0\n");
  EXPECT_THROW(load_dataset_csv(short_row), ParseError);
}

TEST(ConstantsTest, HandComputedDissimilarity) {
  // A1 = A2 = I, b1 = −b2 = e1; at x = t·e2, B² = (t² + 1)/t².
  FederatedProblem p;
  p.clients.push_back(quad(DenseMatrix::identity(2), unit(2, 0)));
  p.clients.push_back(quad(DenseMatrix::identity(2), scaled(unit(2, 0), -1.0)));
  const auto r = dissimilarity_at(p, ParamVector{0.0, 1.0});
  ASSERT_TRUE(r.b_sq.has_value());
  EXPECT_DOUBLE_EQ(*r.b_sq, 2.0);
  EXPECT_DOUBLE_EQ(*dissimilarity_at(p, ParamVector{0.0, 2.0}).b_sq, 5.0 / 4.0);
}

TEST(ConstantsTest, IdenticalClientsHaveUnitB) {
  QuadraticFamily fam;
  fam.dim = 8;
  fam.clients = 4;
  fam.identical = true;
  const auto p = make_quadratic_problem(fam, SeedCtx{1});
  const auto rep = estimate_constants(p, {seeded_gaussian(SeedCtx{2}, 8)}, SeedCtx{3});
  EXPECT_NEAR(rep.B_sq, 1.0, 1e-12);
  EXPECT_EQ(rep.L_method, ConstantMethod::kExact);
  EXPECT_NEAR(rep.L, fam.lmax, 1e-9);
  EXPECT_NEAR(rep.f_star, 0.0, 1e-12);
}

TEST(ConstantsTest, ServerEqualToSingleClientHasZeroG) {
  QuadraticFamily fam;
  fam.dim = 6;
  fam.clients = 1;
  fam.server = ServerObjective::kMean;
  const auto p = make_quadratic_problem(fam, SeedCtx{4});
  const auto rep = estimate_constants(p, {seeded_gaussian(SeedCtx{5}, 6)}, SeedCtx{6});
  EXPECT_TRUE(rep.has_server);
  EXPECT_EQ(rep.G_sq, 0.0);
}

TEST(ConstantsTest, PerturbedServerHasPositiveG) {
  const auto p = oracle::theorem_problem(1, ServerObjective::kPerturbed);
  const auto rep = estimate_constants(p, {seeded_gaussian(SeedCtx{5}, 50)}, SeedCtx{6});
  EXPECT_GT(rep.G_sq, 0.0);
  EXPECT_LT(rep.G_sq, 1.0);
  EXPECT_GE(rep.B_sq, 1.0);
}

TEST(ConstantsTest, SharedMinimizerFamily) {
  const auto p = oracle::theorem_problem(7);
  const auto [x_star, f_star] = quadratic_optimum(p);
  EXPECT_NEAR(f_star, 0.0, 1e-10);
  for (const auto& c : p.clients) EXPECT_LE(norm(gradient(c, x_star)), 1e-9);
}

TEST(QuadraticOptimumTest, Examples) {
  FederatedProblem p;
  p.clients.push_back(quad(DenseMatrix::identity(3), unit(3, 0)));
  const auto [x, f] = quadratic_optimum(p);
  EXPECT_LE(max_abs_diff(x, unit(3, 0)), 1e-14);
  EXPECT_DOUBLE_EQ(f, value(p.clients[0], unit(3, 0)));

  const DenseMatrix g(30, 30, seeded_gaussian(SeedCtx{10}, 900));
  DenseMatrix a = matmul_tn(g, g);
  for (std::size_t i = 0; i < 30; ++i) a(i, i) += 1.0;
  const auto b = seeded_gaussian(SeedCtx{11}, 30);
  FederatedProblem q;
  q.clients.push_back(quad(a, b));
  const auto [xs, fs] = quadratic_optimum(q);
  EXPECT_LE(norm(subtract(matvec(a, xs), b)), 1e-10);
}

}  // namespace
}  // namespace cafesim

#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace ham;
using ham::testing::naive_matmul;
using ham::testing::random_layer;
using ham::testing::random_matrix;

namespace {

TaskAdapter adapter_with_last(const Matrix& B, const Matrix& A, std::uint32_t id = 0, double alpha = 1.0) {
  TaskAdapter a;
  a.task_id = id;
  a.alpha = alpha;
  a.layers.emplace_back(Matrix{{1}, {1}, {1}}, Matrix{{1, 1, 1}});
  a.layers.emplace_back(B, A);
  return a;
}

AdapterGroup group_from(const TaskAdapter& a, std::uint32_t id) {
  AdapterGroup g;
  g.group_id = id;
  concat_into_group(g, a);
  return g;
}

TaskAdapter random_adapter(Rng& rng, std::uint32_t id, std::size_t d = 5, std::size_t k = 4, std::size_t r = 2) {
  TaskAdapter a;
  a.task_id = id;
  a.alpha = 0.5 + rng.uniform();
  a.layers.push_back(random_layer(d, k, r, rng));
  a.layers.push_back(random_layer(d, d, r, rng));
  return a;
}

}  // namespace

TEST(Similarity, SelfIsOne) {
  Rng rng(1);
  const TaskAdapter a = random_adapter(rng, 0);
  EXPECT_NEAR(similarity(a, group_from(a, 0)), 1.0, 1e-12);
}

TEST(Similarity, ConstructedOrthogonalIsZero) {
  // last-layer deltas e1 e1^T and e2 e2^T
  const TaskAdapter a = adapter_with_last(Matrix{{1}, {0}, {0}}, Matrix{{1, 0, 0}});
  const TaskAdapter b = adapter_with_last(Matrix{{0}, {1}, {0}}, Matrix{{0, 1, 0}});
  EXPECT_EQ(similarity(a, group_from(b, 0)), 0.0);
}

TEST(Similarity, UsesLastLayerOnly) {
  Rng rng(2);
  TaskAdapter a = random_adapter(rng, 0);
  const AdapterGroup g = group_from(a, 0);
  a.layers[0] = random_layer(5, 4, 2, rng);
  EXPECT_NEAR(similarity(a, g), 1.0, 1e-12);
  EXPECT_LT(similarity(a, g, SimilarityScope::all_layers), 1.0);
}

TEST(Similarity, MatchesDoubleLoopOracle) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const TaskAdapter a = random_adapter(rng, 0);
    const TaskAdapter b = random_adapter(rng, 1);
    const Matrix da = naive_matmul(a.layers[1].B, a.layers[1].A);
    const Matrix db = naive_matmul(b.layers[1].B, b.layers[1].A);
    double uv = 0, uu = 0, vv = 0;
    for (std::size_t i = 0; i < da.rows(); ++i)
      for (std::size_t j = 0; j < da.cols(); ++j) {
        uv += da(i, j) * db(i, j);
        uu += da(i, j) * da(i, j);
        vv += db(i, j) * db(i, j);
      }
    EXPECT_NEAR(similarity(a, group_from(b, 0)), std::fabs(uv) / std::sqrt(uu * vv), 1e-12);
  }
}

TEST(Similarity, ZeroDeltaThrows) {
  Rng rng(4);
  TaskAdapter a = random_adapter(rng, 0);
  const AdapterGroup g = group_from(random_adapter(rng, 1), 0);
  a.layers[1].A = Matrix(2, 5);
  EXPECT_THROW(similarity(a, g), DegenerateInputError);
}

TEST(AssignGroup, EmptyRegistryCreates) {
  Rng rng(5);
  const GroupRegistry reg(2, 0.3);
  const auto d = assign_group(random_adapter(rng, 0), reg);
  EXPECT_TRUE(d.create_new);
  EXPECT_TRUE(d.similarities.empty());
}

TEST(AssignGroup, ThresholdAndCap) {
  const TaskAdapter e1 = adapter_with_last(Matrix{{1}, {0}, {0}}, Matrix{{1, 0, 0}}, 0);
  const TaskAdapter e2 = adapter_with_last(Matrix{{0}, {1}, {0}}, Matrix{{0, 1, 0}}, 1);
  // last-layer delta [[1, 0.5, 0], 0, 0]: |cos| with e1 e1^T = 1/sqrt(1.25)
  const TaskAdapter near1 = adapter_with_last(Matrix{{1}, {0}, {0}}, Matrix{{1, 0.5, 0}}, 2);
  const TaskAdapter e3 = adapter_with_last(Matrix{{0}, {0}, {1}}, Matrix{{0, 0, 1}}, 3);

  GroupRegistry reg(2, 0.3);
  reg.groups.push_back(group_from(e1, 0));
  auto d = assign_group(near1, reg);
  EXPECT_FALSE(d.create_new);
  EXPECT_EQ(d.group_id, 0u);
  EXPECT_NEAR(d.similarities[0], 1.0 / std::sqrt(1.25), 1e-12);

  d = assign_group(e2, reg);  // below threshold, room left
  EXPECT_TRUE(d.create_new);

  reg.groups.push_back(group_from(e2, 1));
  d = assign_group(e3, reg);  // below threshold, cap reached: best group anyway
  EXPECT_FALSE(d.create_new);
  EXPECT_EQ(d.group_id, 0u);

  // exactly at the threshold joins
  GroupRegistry at(2, 1.0 / std::sqrt(1.25));
  at.groups.push_back(group_from(e1, 0));
  EXPECT_FALSE(assign_group(near1, at).create_new);
}

TEST(AssignGroup, OrthogonalityRulePicksLeastSimilar) {
  const TaskAdapter e1 = adapter_with_last(Matrix{{1}, {0}, {0}}, Matrix{{1, 0, 0}}, 0);
  const TaskAdapter e2 = adapter_with_last(Matrix{{0}, {1}, {0}}, Matrix{{0, 1, 0}}, 1);
  const TaskAdapter near1 = adapter_with_last(Matrix{{1}, {0}, {0}}, Matrix{{1, 0.5, 0}}, 2);
  GroupRegistry reg(3, 0.3);
  reg.groups.push_back(group_from(e1, 0));
  reg.groups.push_back(group_from(e2, 1));
  const auto j = assign_group(near1, reg, GroupingRule::orthogonality);
  EXPECT_FALSE(j.create_new);
  EXPECT_EQ(j.group_id, 1u);  // orthogonal to e2 e2^T
  reg.tau_sim = -0.1;  // nothing passes, room left
  EXPECT_TRUE(assign_group(near1, reg, GroupingRule::orthogonality).create_new);
}

TEST(GroupAlpha, FirstMemberSetsAlpha) {
  AdapterGroup g;
  g.alpha = 123.0;
  update_group_alpha(g, 0.7);
  EXPECT_EQ(g.alpha, 0.7);
  EXPECT_EQ(g.member_count, 1u);
}

TEST(GroupAlpha, RunningMeanEqualsArithmeticMean) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> alphas(n);
    for (double& a : alphas) a = rng.normal(1.0, 2.0);
    rng.shuffle(std::span<double>(alphas));
    AdapterGroup g;
    for (double a : alphas) update_group_alpha(g, a);
    const double mean = std::accumulate(alphas.begin(), alphas.end(), 0.0) / static_cast<double>(n);
    EXPECT_NEAR(g.alpha, mean, 1e-12);
    EXPECT_EQ(g.member_count, n);
  }
}

TEST(GroupAlpha, Examples) {
  AdapterGroup g;
  for (double a : {1.0, 2.0, 3.0}) update_group_alpha(g, a);
  EXPECT_DOUBLE_EQ(g.alpha, 2.0);
}

TEST(Prune, PerMatrixTopK) {
  Rng rng(7);
  const TaskAdapter a = random_adapter(rng, 0);
  const TaskAdapter p = prune(a, 0.5);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(p.layers[l].B, prune_by_magnitude(a.layers[l].B, 0.5));
    EXPECT_EQ(p.layers[l].A, prune_by_magnitude(a.layers[l].A, 0.5));
  }
  EXPECT_EQ(p.alpha, a.alpha);
  EXPECT_EQ(prune(a, 1.0), a);
  EXPECT_THROW(prune(a, 0.0), ConfigError);
}

TEST(Concat, BlockIdentity) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    AdapterGroup g;
    std::vector<TaskAdapter> members;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      members.push_back(random_adapter(rng, static_cast<std::uint32_t>(i)));
      concat_into_group(g, members.back());
    }
    for (std::size_t l = 0; l < 2; ++l) {
      Matrix sum(members[0].layers[l].out_dim(), members[0].layers[l].in_dim());
      for (const auto& m : members) add_scaled(sum, 1.0, naive_matmul(m.layers[l].B, m.layers[l].A));
      EXPECT_LT(max_abs_diff(delta_weight(g.layers[l]), sum), 1e-9);
      EXPECT_EQ(g.layers[l].rank(), n * 2);
    }
    EXPECT_EQ(g.member_count, n);
    EXPECT_EQ(g.member_task_ids.size(), n);
  }
}

TEST(Concat, RankMismatchThrows) {
  Rng rng(9);
  AdapterGroup g;
  concat_into_group(g, random_adapter(rng, 0, 5, 4, 2));
  EXPECT_THROW(concat_into_group(g, random_adapter(rng, 1, 5, 4, 3)), ShapeError);
  EXPECT_THROW(concat_into_group(g, random_adapter(rng, 1, 6, 4, 2)), ShapeError);
}

TEST(Consolidate, GroupCapTrace) {
  Rng rng(10);
  for (std::size_t gmax : {1u, 2u, 4u}) {
    GroupRegistry reg(gmax, 0.99);  // threshold so high every task wants a new group
    const ConsolidationConfig cfg{0.6, GroupingRule::similarity, SimilarityScope::last_layer};
    for (std::uint32_t t = 0; t < 8; ++t) {
      const auto rec = ham_consolidate(random_adapter(rng, t), reg, cfg);
      EXPECT_EQ(rec.decision.create_new, t < gmax);
      EXPECT_LE(reg.size(), gmax);
    }
    EXPECT_EQ(reg.size(), gmax);
    std::size_t members = 0;
    for (const auto& g : reg.groups) {
      members += g.member_count;
      EXPECT_EQ(g.rank(), g.member_count * 2);
    }
    EXPECT_EQ(members, 8u);
  }
}

TEST(Consolidate, RetainsPrunedParametersOnly) {
  Rng rng(11);
  GroupRegistry reg(2, 0.3);
  const TaskAdapter a = random_adapter(rng, 0);
  const auto rec = ham_consolidate(a, reg, {0.5});
  EXPECT_EQ(rec.retained_parameters, nonzero_parameter_count(prune(a, 0.5)));
  EXPECT_EQ(nonzero_parameter_count(reg.groups[0]), rec.retained_parameters);
  EXPECT_EQ(reg.groups[0].alpha, a.alpha);
}

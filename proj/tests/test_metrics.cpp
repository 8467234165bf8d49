#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace ham;

namespace {

AccuracyMatrix random_matrix_acc(std::size_t n, Rng& rng) {
  AccuracyMatrix m(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> row(t + 1);
    for (double& a : row) a = rng.uniform();
    m.record_row(t, row);
  }
  return m;
}

// Independent scan written from the definition: 1-based indices, peak over t in [i, N-1].
double brute_force_fm(const AccuracyMatrix& m) {
  const std::size_t N = m.num_tasks();
  double total = 0.0;
  for (std::size_t i = 1; i <= N - 1; ++i) {
    double best = -1.0;
    for (std::size_t t = i; t <= N - 1; ++t)
      if (m.at(t - 1, i - 1) > best) best = m.at(t - 1, i - 1);
    total += best - m.at(N - 1, i - 1);
  }
  return total / static_cast<double>(N - 1);
}

}  // namespace

TEST(Metrics, AllOnes) {
  AccuracyMatrix m(3);
  for (std::size_t t = 0; t < 3; ++t) m.record_row(t, std::vector<double>(t + 1, 1.0));
  EXPECT_EQ(average_accuracy(m), 1.0);
  EXPECT_EQ(forgetting_measure(m), 0.0);
}

TEST(Metrics, TwoTaskExamples) {
  AccuracyMatrix m(2);
  m.record_row(0, std::vector<double>{0.9});
  m.record_row(1, std::vector<double>{0.7, 0.3});
  EXPECT_NEAR(forgetting_measure(m), 0.2, 1e-15);
  AccuracyMatrix a(2);
  a.record_row(0, std::vector<double>{0.5});
  a.record_row(1, std::vector<double>{0.4, 0.8});
  EXPECT_NEAR(average_accuracy(a), 0.6, 1e-15);
}

TEST(Metrics, MonotoneAccuracyHasNoPositiveForgetting) {
  AccuracyMatrix m(4);
  for (std::size_t t = 0; t < 4; ++t) {
    std::vector<double> row(t + 1);
    for (std::size_t i = 0; i <= t; ++i) row[i] = 0.5 + 0.1 * static_cast<double>(t - i);
    m.record_row(t, row);
  }
  EXPECT_LE(forgetting_measure(m), 0.0);
}

TEST(Metrics, RandomMatricesMatchOracles) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    const AccuracyMatrix m = random_matrix_acc(n, rng);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += m.at(n - 1, i);
    EXPECT_NEAR(average_accuracy(m), mean / static_cast<double>(n), 1e-12);
    EXPECT_NEAR(forgetting_measure(m), brute_force_fm(m), 1e-12);
  }
}

TEST(Metrics, InvariantUnderFinalRowPermutationAndShift) {
  Rng rng(4);
  AccuracyMatrix m = random_matrix_acc(6, rng);
  std::vector<double> last(m.row(5).begin(), m.row(5).end());
  const double aa = average_accuracy(m);
  rng.shuffle(std::span<double>(last));
  AccuracyMatrix p = m;
  p.record_row(5, last);
  EXPECT_NEAR(average_accuracy(p), aa, 1e-12);

  AccuracyMatrix small(6);
  AccuracyMatrix shifted(6);
  for (std::size_t t = 0; t < 6; ++t) {
    std::vector<double> row(t + 1), up(t + 1);
    for (std::size_t i = 0; i <= t; ++i) {
      row[i] = 0.5 * rng.uniform();
      up[i] = row[i] + 0.3;
    }
    small.record_row(t, row);
    shifted.record_row(t, up);
  }
  EXPECT_NEAR(forgetting_measure(shifted), forgetting_measure(small), 1e-12);
}

TEST(Metrics, Errors) {
  AccuracyMatrix m(3);
  EXPECT_THROW(average_accuracy(m), StateError);
  EXPECT_THROW(m.record_row(0, std::vector<double>{0.5, 0.5}), StateError);
  EXPECT_THROW(m.record_row(0, std::vector<double>{1.5}), StateError);
  EXPECT_THROW(m.record_row(3, std::vector<double>{0.5, 0.5, 0.5, 0.5}), StateError);
  AccuracyMatrix one(1);
  one.record_row(0, std::vector<double>{0.5});
  EXPECT_EQ(average_accuracy(one), 0.5);
  EXPECT_THROW(forgetting_measure(one), StateError);
  m.record_row(0, std::vector<double>{0.5});
  EXPECT_THROW(forgetting_measure(m), StateError);
}

TEST(Metrics, CsvLayout) {
  AccuracyMatrix m(2);
  m.record_row(0, std::vector<double>{0.9});
  m.record_row(1, std::vector<double>{0.7, 0.25});
  std::ostringstream out;
  m.write_csv(out);
  EXPECT_EQ(out.str(), "after_task,task_1,task_2\n1,0.900000,\n2,0.700000,0.250000\n");
}

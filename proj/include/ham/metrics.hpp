#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ham/error.hpp"

namespace ham {

/// a[t][i]: accuracy on task i after training task t (0-based, i <= t).
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t num_tasks = 0) : rows_(num_tasks) {}

  std::size_t num_tasks() const noexcept { return rows_.size(); }

  void record_row(std::size_t after_task, std::span<const double> accuracies) {
    if (after_task >= rows_.size()) throw StateError("accuracy row beyond the task count");
    if (accuracies.size() != after_task + 1) {
      throw StateError("row " + std::to_string(after_task) + " needs " +
                       std::to_string(after_task + 1) + " entries, got " +
                       std::to_string(accuracies.size()));
    }
    for (double a : accuracies) {
      if (!(a >= 0.0 && a <= 1.0)) throw StateError("accuracy outside [0, 1]");
    }
    rows_[after_task].assign(accuracies.begin(), accuracies.end());
  }

  bool row_complete(std::size_t t) const { return t < rows_.size() && rows_[t].size() == t + 1; }
  double at(std::size_t t, std::size_t i) const {
    if (!row_complete(t) || i > t) throw StateError("accuracy entry not recorded");
    return rows_[t][i];
  }
  std::span<const double> row(std::size_t t) const { return rows_.at(t); }

  /// Header `after_task,task_1..task_N`, one line per recorded row, blanks above the diagonal.
  void write_csv(std::ostream& out) const {
    out << "after_task";
    for (std::size_t i = 0; i < rows_.size(); ++i) out << ",task_" << i + 1;
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < rows_.size(); ++t) {
      if (!row_complete(t)) continue;
      out << t + 1;
      for (std::size_t i = 0; i < rows_.size(); ++i) {
        out << ',';
        if (i <= t) {
          std::snprintf(buf, sizeof buf, "%.6f", rows_[t][i]);
          out << buf;
        }
      }
      out << '\n';
    }
  }

 private:
  std::vector<std::vector<double>> rows_;
};

/// Mean of the final row.
inline double average_accuracy(const AccuracyMatrix& m) {
  const std::size_t n = m.num_tasks();
  if (n == 0 || !m.row_complete(n - 1)) throw StateError("average_accuracy: final row incomplete");
  double sum = 0.0;
  for (double a : m.row(n - 1)) sum += a;
  return sum / static_cast<double>(n);
}

/// Mean over tasks 1..N-1 of (peak accuracy before the final task) - (final accuracy).
inline double forgetting_measure(const AccuracyMatrix& m) {
  const std::size_t n = m.num_tasks();
  if (n < 2) throw StateError("forgetting_measure: needs at least two tasks");
  if (!m.row_complete(n - 1)) throw StateError("forgetting_measure: final row incomplete");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double peak = m.at(i, i);
    for (std::size_t t = i + 1; t + 1 < n; ++t) peak = std::max(peak, m.at(t, i));
    sum += peak - m.at(n - 1, i);
  }
  return sum / static_cast<double>(n - 1);
}

}  // namespace ham

#pragma once
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "reppad/model.hpp"

namespace reppad {

// rank = 1 + count of real items (index >= 1) scoring strictly above the target;
// ties never worsen the rank. scores has vocab+1 entries; row 0 is ignored.
template <class T>
int64_t rank_from_scores(const T* scores, int32_t vocab, int32_t target) {
  if (target < 1 || target > vocab)
    throw std::invalid_argument("rank_from_scores: target " + std::to_string(target) +
                                " outside item range [1, " + std::to_string(vocab) + "]");
  const T s = scores[target];
  int64_t above = 0;
  for (int32_t j = 1; j <= vocab; ++j)
    if (scores[j] > s) ++above;
  return 1 + above;
}

// Full-ranking evaluation of one (history, target) pair per sample. When `exclude`
// is given (one item list per sample), those candidates are pushed below every
// other score before ranking — the optional drop-already-interacted protocol. The
// target itself is never excluded.
template <class T>
std::vector<int64_t> rank_targets(Model<T>& m, const std::vector<PaddedSample>& inputs,
                                  const std::vector<int32_t>& targets,
                                  int64_t batch_size = 256,
                                  const std::vector<std::vector<int32_t>>* exclude = nullptr) {
  if (inputs.size() != targets.size())
    throw std::invalid_argument("rank_targets: one target per input required");
  if (exclude && exclude->size() != inputs.size())
    throw std::invalid_argument("rank_targets: one exclusion list per input required");
  std::vector<int64_t> ranks(inputs.size());
  const int64_t stride = m.vocab + 1;
  for (size_t lo = 0; lo < inputs.size(); lo += static_cast<size_t>(batch_size)) {
    const size_t hi = std::min(inputs.size(), lo + static_cast<size_t>(batch_size));
    std::vector<PaddedSample> chunk(inputs.begin() + static_cast<int64_t>(lo),
                                    inputs.begin() + static_cast<int64_t>(hi));
    std::vector<T> scores = score_last(m, chunk);
    for (size_t i = lo; i < hi; ++i) {
      T* row = scores.data() + (i - lo) * static_cast<size_t>(stride);
      if (exclude) {
        for (int32_t item : (*exclude)[i])
          if (item >= 1 && item <= m.vocab && item != targets[i])
            row[item] = -std::numeric_limits<T>::infinity();
      }
      ranks[i] = rank_from_scores(row, m.vocab, targets[i]);
    }
  }
  return ranks;
}

double hr_at_k(const std::vector<int64_t>& ranks, int k);
double ndcg_at_k(const std::vector<int64_t>& ranks, int k);

struct MetricTable {
  double hr5 = 0, hr10 = 0, hr20 = 0, ndcg5 = 0, ndcg10 = 0, ndcg20 = 0;
};

MetricTable metrics_from_ranks(const std::vector<int64_t>& ranks);

struct EvalReport {
  MetricTable valid, test;
  std::vector<int64_t> valid_ranks, test_ranks;  // kept for significance tests

  std::string to_json() const;
  // One flat row per (split, metric): dataset,backbone,policy,seed,split,metric,value
  std::string csv_rows(const std::string& dataset, const std::string& backbone,
                       const std::string& policy, uint64_t seed) const;
  static std::string csv_header();
};

// Stops after `patience` consecutive epochs without strict improvement.
class EarlyStopMonitor {
 public:
  explicit EarlyStopMonitor(int patience = 20);
  // Feed this epoch's validation metric; true means stop after this epoch.
  bool observe(double metric);
  int best_epoch() const { return best_epoch_; }    // 0-based
  double best_value() const { return best_value_; }
  int epochs_seen() const { return seen_; }
  bool last_improved() const { return last_improved_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  int seen_ = 0;
  double best_value_;
  bool last_improved_ = false;
};

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation accurate to
// well beyond 6 decimal digits over the t-test range.
double reg_inc_beta(double a, double b, double x);

// Two-sided paired t-test on per-user metric arrays over the same user ordering.
// Conventions: zero-variance differences give p = 0 (nonzero mean) or p = 1 (all
// zero); a single pair follows the same rule.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace reppad

#include "reppad/eval.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace reppad {

namespace {

void check_ranks(const std::vector<int64_t>& ranks, int k) {
  if (k < 1) throw std::invalid_argument("metrics: K must be >= 1");
  if (ranks.empty()) throw std::invalid_argument("metrics: no ranks");
  for (int64_t r : ranks)
    if (r < 1) throw std::invalid_argument("metrics: rank must be >= 1");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double hr_at_k(const std::vector<int64_t>& ranks, int k) {
  check_ranks(ranks, k);
  int64_t hits = 0;
  for (int64_t r : ranks)
    if (r <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(const std::vector<int64_t>& ranks, int k) {
  check_ranks(ranks, k);
  double acc = 0;
  for (int64_t r : ranks)
    if (r <= k) acc += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return acc / static_cast<double>(ranks.size());
}

MetricTable metrics_from_ranks(const std::vector<int64_t>& ranks) {
  MetricTable t;
  t.hr5 = hr_at_k(ranks, 5);
  t.hr10 = hr_at_k(ranks, 10);
  t.hr20 = hr_at_k(ranks, 20);
  t.ndcg5 = ndcg_at_k(ranks, 5);
  t.ndcg10 = ndcg_at_k(ranks, 10);
  t.ndcg20 = ndcg_at_k(ranks, 20);
  return t;
}

namespace {
nlohmann::ordered_json table_json(const MetricTable& t) {
  nlohmann::ordered_json j;
  j["HR@5"] = t.hr5;
  j["HR@10"] = t.hr10;
  j["HR@20"] = t.hr20;
  j["NDCG@5"] = t.ndcg5;
  j["NDCG@10"] = t.ndcg10;
  j["NDCG@20"] = t.ndcg20;
  return j;
}
}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["valid"] = table_json(valid);
  j["test"] = table_json(test);
  return j.dump(2);
}

std::string EvalReport::csv_header() {
  return "dataset,backbone,policy,seed,split,metric,value\n";
}

std::string EvalReport::csv_rows(const std::string& dataset, const std::string& backbone,
                                 const std::string& policy, uint64_t seed) const {
  std::ostringstream os;
  auto emit = [&](const char* split, const MetricTable& t) {
    const std::pair<const char*, double> rows[] = {
        {"HR@5", t.hr5},     {"HR@10", t.hr10},   {"HR@20", t.hr20},
        {"NDCG@5", t.ndcg5}, {"NDCG@10", t.ndcg10}, {"NDCG@20", t.ndcg20}};
    for (const auto& [metric, value] : rows)
      os << dataset << ',' << backbone << ',' << policy << ',' << seed << ',' << split
         << ',' << metric << ',' << fmt(value) << '\n';
  };
  emit("valid", valid);
  emit("test", test);
  return os.str();
}

EarlyStopMonitor::EarlyStopMonitor(int patience) : patience_(patience) {
  if (patience < 1) throw std::invalid_argument("early stop: patience must be >= 1");
  best_value_ = -std::numeric_limits<double>::infinity();
}

bool EarlyStopMonitor::observe(double metric) {
  const int epoch = seen_++;
  last_improved_ = metric > best_value_;
  if (last_improved_) {
    best_value_ = metric;
    best_epoch_ = epoch;
  }
  return epoch - best_epoch_ >= patience_;
}

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("reg_inc_beta: continued fraction failed to converge");
}

}  // namespace

double reg_inc_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("reg_inc_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: arrays must align user-by-user");
  if (a.empty()) throw std::invalid_argument("paired_t_test: empty arrays");
  const size_t n = a.size();
  double mean = 0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  if (ss == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  if (n < 2) return mean == 0.0 ? 1.0 : 0.0;
  const double df = static_cast<double>(n - 1);
  const double sd = std::sqrt(ss / df);
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  // two-sided p = I_{df/(df+t^2)}(df/2, 1/2)
  return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

}  // namespace reppad

#include "wsi/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "wsi/error.hpp"

namespace wsi::eval {

namespace {

/// Fenwick tree over compressed ranks.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  /// Count of inserted ranks < i.
  std::int64_t below(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace

double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of positives (ties share the average rank), in half units
  // so the statistic stays exact in integers.
  std::int64_t rank_sum2 = 0, pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j);  // 2 * average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum2 += twice_mid;
        ++pos;
      }
    i = j;
  }
  for (int l : labels)
    if (l != 0 && l != 1) fail(ErrorCode::ShapeMismatch, "binary labels must be 0 or 1");
  const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
  if (pos == 0 || neg == 0) fail(ErrorCode::SingleClassOnly, "AUC needs both classes");
  const std::int64_t u2 = rank_sum2 - pos * (pos + 1);  // 2 * Mann-Whitney U
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double macro_auc(const std::vector<double>& probabilities, std::size_t k, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  if (k < 2 || probabilities.size() != n * k) fail(ErrorCode::ShapeMismatch, "probabilities must be n x k");
  std::vector<std::size_t> counts(k, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) fail(ErrorCode::ShapeMismatch, "label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] == 0) fail(ErrorCode::MissingClass, "class " + std::to_string(c) + " has no samples");
  double total = 0;
  std::vector<double> scores(n);
  std::vector<int> binary(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probabilities[i * k + c];
      binary[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    total += binary_auc(scores, binary);
  }
  return total / static_cast<double>(k);
}

double concordance_index(const std::vector<double>& risks, const std::vector<double>& times,
                         const std::vector<bool>& events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n) fail(ErrorCode::ShapeMismatch, "risks, times, events differ in length");

  // Compress risks to ranks.
  std::vector<double> sorted_risks(risks);
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
                                    sorted_risks.begin());
  };

  // Sweep times from latest to earliest; the tree holds samples with strictly
  // later times than the current group.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  Fenwick tree(sorted_risks.size());
  std::int64_t inserted = 0, comparable = 0, concordant2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      const std::size_t s = order[t];
      if (!events[s]) continue;
      const std::size_t r = rank_of(risks[s]);
      const std::int64_t lower = tree.below(r);
      const std::int64_t lower_or_equal = tree.below(r + 1);
      comparable += inserted;
      concordant2 += 2 * lower + (lower_or_equal - lower);
    }
    for (std::size_t t = i; t < j; ++t) {
      tree.add(rank_of(risks[order[t]]));
      ++inserted;
    }
    i = j;
  }
  if (comparable == 0) fail(ErrorCode::NoComparablePairs, "no comparable pairs");
  return static_cast<double>(concordant2) / (2.0 * static_cast<double>(comparable));
}

MetricsReport summarize(std::string metric, std::string fingerprint, std::vector<double> per_fold) {
  MetricsReport r;
  r.metric = std::move(metric);
  r.config_fingerprint = std::move(fingerprint);
  r.per_fold = std::move(per_fold);
  if (r.per_fold.empty()) return r;
  const double n = static_cast<double>(r.per_fold.size());
  r.mean = std::accumulate(r.per_fold.begin(), r.per_fold.end(), 0.0) / n;
  if (r.per_fold.size() > 1) {
    double ss = 0;
    for (double v : r.per_fold) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / (n - 1));
  }
  return r;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os.precision(17);
  os << "config,fold,metric,value\n";
  for (const auto& r : reports)
    for (std::size_t f = 0; f < r.per_fold.size(); ++f)
      os << r.config_fingerprint << ',' << f << ',' << r.metric << ',' << r.per_fold[f] << '\n';
}

}  // namespace wsi::eval

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wsi::eval {

/// Mann-Whitney AUC: (concordant + 0.5 * tied) / (pos * neg) pairs.
/// Throws SingleClassOnly.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Unweighted mean of one-vs-rest AUCs. `probabilities` is row-major n x k.
/// Throws MissingClass when some class in [0, k) has no sample.
double macro_auc(const std::vector<double>& probabilities, std::size_t k, const std::vector<int>& labels);

/// Harrell's concordance. Pair (i, j) is comparable when t_i < t_j and i had
/// an event; it scores 1 if risk_i > risk_j and 0.5 on tied risks.
/// Throws NoComparablePairs.
double concordance_index(const std::vector<double>& risks, const std::vector<double>& times,
                         const std::vector<bool>& events);

struct MetricsReport {
  std::string metric;
  std::string config_fingerprint;
  std::vector<double> per_fold;
  double mean = 0;
  /// Sample standard deviation (n - 1 denominator); 0 for a single fold.
  double stddev = 0;
};

MetricsReport summarize(std::string metric, std::string fingerprint, std::vector<double> per_fold);

/// CSV `config,fold,metric,value`.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);

}  // namespace wsi::eval

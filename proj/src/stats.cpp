#include "todrr/stats.hpp"

#include <algorithm>
#include <cmath>

#include "todrr/error.hpp"

namespace todrr::stats {

double binomial_test_two_sided(std::size_t successes, std::size_t trials) {
  if (trials == 0) throw UsageError("binomial test needs at least one trial");
  if (successes > trials) throw UsageError("successes exceed trials");
  const double n = static_cast<double>(trials);
  const double log_half_n = n * std::log(0.5);
  auto log_pmf = [&](std::size_t i) {
    const double k = static_cast<double>(i);
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + log_half_n;
  };
  // Under p = 1/2 the pmf is symmetric and unimodal, so the outcomes no more
  // likely than the observed one are exactly the two tails beyond it.
  const std::size_t m = std::min(successes, trials - successes);
  double tail = 0.0;
  for (std::size_t i = 0; i <= m; ++i) tail += std::exp(log_pmf(i));
  const double p = 2.0 * tail;
  return std::min(1.0, p);
}

double fleiss_kappa(const std::vector<std::vector<std::size_t>>& ratings) {
  if (ratings.empty()) throw UsageError("fleiss_kappa needs at least one task");
  const std::size_t categories = ratings.front().size();
  if (categories < 2) throw UsageError("fleiss_kappa needs at least two categories");
  std::size_t raters = 0;
  for (std::size_t c : ratings.front()) raters += c;
  if (raters < 2) throw UsageError("fleiss_kappa needs at least two raters per task");

  std::vector<double> category_totals(categories, 0.0);
  double agreement_sum = 0.0;
  bool unanimous = true;
  for (const auto& row : ratings) {
    if (row.size() != categories) throw UsageError("fleiss_kappa: ragged category counts");
    std::size_t sum = 0;
    double sq = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < categories; ++j) {
      sum += row[j];
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      category_totals[j] += static_cast<double>(row[j]);
      if (row[j] > 0) ++nonzero;
    }
    if (sum != raters) throw UsageError("fleiss_kappa: every task needs the same number of raters");
    if (nonzero > 1) unanimous = false;
    const double n = static_cast<double>(raters);
    agreement_sum += (sq - n) / (n * (n - 1.0));
  }
  if (unanimous) return 1.0;
  const double total = static_cast<double>(ratings.size() * raters);
  double expected = 0.0;
  for (double t : category_totals) expected += (t / total) * (t / total);
  const double observed = agreement_sum / static_cast<double>(ratings.size());
  return (observed - expected) / (1.0 - expected);
}

}  // namespace todrr::stats

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace todrr::stats {

// Exact two-sided binomial test against p = 0.5: the total probability of
// all outcomes no more likely than the observed one.
double binomial_test_two_sided(std::size_t successes, std::size_t trials);

// Fleiss' kappa over a tasks x categories matrix of rating counts. Every row
// must sum to the same rater count n >= 2. Returns 1 when every task is
// unanimous.
double fleiss_kappa(const std::vector<std::vector<std::size_t>>& ratings);

}  // namespace todrr::stats

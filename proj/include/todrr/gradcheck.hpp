#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "todrr/encoder.hpp"

namespace todrr::encoder {

struct GradCheckCase {
  Objective objective = Objective::classification;
  Mode mode = Mode::cross;
  Distance distance = Distance::euclidean;
  std::string name() const;
};

// classification x {cross, bi} and triplet x {euclidean, cosine} x {cross, bi}.
std::vector<GradCheckCase> default_grad_check_cases();

struct GradCheckResult {
  GradCheckCase c;
  double max_rel_error = 0.0;  // worst over all draws
};

struct GradCheckOptions {
  std::size_t draws = 20;
  std::size_t dim = 8;
  std::size_t batch_size = 6;
  double eps = 1e-5;
  std::uint64_t seed = 13;
};

// Each draw samples a batch of synthetic (context, response) pairs with
// both labels present and a freshly initialised model, then compares the
// analytic gradients of every case against central differences.
std::vector<GradCheckResult> run_grad_checks(const GradCheckOptions& opts,
                                             const std::vector<GradCheckCase>& cases);

}  // namespace todrr::encoder

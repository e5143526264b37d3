#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "splab/tensor.hpp"

namespace splab {

struct GradCheckOptions {
  double step = 1e-4;
  // 0 checks every coordinate; otherwise at most this many seeded coordinates
  // per parameter tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
};

// Compares reverse-mode gradients of the scalar `loss_fn` with central
// differences. The error of one coordinate is
// |analytic - numeric| / max(1, |analytic|, |numeric|); the maximum is returned.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace splab

#include "splab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splab/errors.hpp"
#include "splab/rng.hpp"

namespace splab {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    if (loss.numel() != 1) {
      throw ContractError("grad_check: loss must be scalar, got shape " + shape_string(loss.shape()));
    }
    tape.backward(loss);
  }
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = p.mutable_data();
    for (std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + options.step;
      const double plus = loss_fn().item();
      values[i] = original - options.step;
      const double minus = loss_fn().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.coordinates_checked;
    }
  }
  return result;
}

}  // namespace splab

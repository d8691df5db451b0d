#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "mop/nn/tensor.hpp"
#include "mop/rng.hpp"

namespace test {

/// Finite-difference step and the magnitude below which gradients are
/// compared absolutely rather than relatively.
inline constexpr double kStep = 1e-4;
inline constexpr double kFloor = 1e-6;

struct GradReport {
  /// Worst relative error per tensor name.
  std::map<std::string, double> worst;
  double max_error = 0.0;
  std::string max_tensor;
  std::size_t checked = 0;
};

/// Central differences over every element of every tensor in `params`,
/// compared against `analytic` (same structure). `loss()` must read `params`.
template <typename Params, typename Loss>
GradReport check_gradients(Params& params, const Params& analytic, Loss&& loss) {
  GradReport rep;
  std::vector<std::string> names;
  params.visit([&](std::string_view n, auto&) { names.emplace_back(n); });
  auto spans = mop::nn::tensor_spans(params);
  auto grads = mop::nn::tensor_spans(const_cast<Params&>(analytic));
  for (std::size_t i = 0; i < spans.size(); ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < spans[i].size(); ++j) {
      double& p = spans[i][j];
      const double saved = p;
      p = saved + kStep;
      const double up = loss();
      p = saved - kStep;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2 * kStep);
      const double a = grads[i][j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kFloor});
      worst = std::max(worst, err);
      ++rep.checked;
    }
    rep.worst[names[i]] = worst;
    if (worst > rep.max_error) {
      rep.max_error = worst;
      rep.max_tensor = names[i];
    }
  }
  return rep;
}

/// Replaces every tensor with N(0, scale) entries so that zero-initialised
/// parameters do not make the check vacuous.
template <typename Params>
void randomize(Params& p, std::uint64_t seed, double scale = 0.5) {
  mop::Rng rng(seed);
  p.visit([&](std::string_view, auto& t) {
    t = mop::nn::normal_matrix<double>(t.rows(), t.cols(), scale, rng);
  });
}

}  // namespace test

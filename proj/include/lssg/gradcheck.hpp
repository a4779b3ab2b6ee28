#pragma once

// Central finite differences against hand-derived gradients.
//
// Each target names a span of parameters that the loss closure reads by
// reference; the checker perturbs entries in place, re-evaluates the loss
// and restores the value. Error per target is
//   ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-6)

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lssg/tensor.hpp"

namespace lssg {

template <std::floating_point T>
struct GradTarget {
  std::string name;
  std::span<T> values;
  std::span<const T> analytic;
};

struct GradReport {
  std::string name;
  std::size_t count = 0;
  double rel_error = 0.0;
};

template <std::floating_point T>
double gradient_relative_error(std::span<const T> analytic, std::span<const T> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradient_relative_error: length");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    diff += (a - n) * (a - n);
    na += a * a;
    nn += n * n;
  }
  diff = std::sqrt(diff);
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  // below ~1e-6 the central difference is mostly roundoff
  return diff / std::max(scale, 1e-6);
}

template <std::floating_point T, typename Loss>
std::vector<T> central_difference(std::span<T> values, Loss&& loss, T step) {
  std::vector<T> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + step;
    const T up = loss();
    values[i] = saved - step;
    const T down = loss();
    values[i] = saved;
    out[i] = (up - down) / (T{2} * step);
  }
  return out;
}

// Losses with kinks (ReLU, smooth L1) need the stencil on one smooth piece.
// If the one-sided slopes disagree beyond curvature and roundoff, a kink sits
// inside [x - h, x + h] and the step shrinks tenfold, up to `refinements` times.
template <std::floating_point T, typename Loss>
std::vector<T> piecewise_central_difference(std::span<T> values, Loss&& loss, T step, int refinements) {
  const T base = loss();
  const T eps = std::numeric_limits<T>::epsilon();
  std::vector<T> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    T h = step;
    for (int r = 0;; ++r, h /= T{10}) {
      values[i] = saved + h;
      const T up = loss();
      values[i] = saved - h;
      const T down = loss();
      values[i] = saved;
      out[i] = (up - down) / (T{2} * h);
      const T fwd = (up - base) / h, bwd = (base - down) / h;
      const T noise = T{100} * eps * std::max(std::abs(base), T{1}) / h;
      if (r == refinements || std::abs(fwd - bwd) <= T(1e-5) * std::max(std::abs(fwd), std::abs(bwd)) + noise) break;
    }
  }
  return out;
}

template <std::floating_point T, typename Loss>
std::vector<GradReport> gradcheck(const std::vector<GradTarget<T>>& targets, Loss&& loss,
                                  T step = T(1e-5), int refinements = 0) {
  std::vector<GradReport> reports;
  for (const auto& t : targets) {
    if (t.values.size() != t.analytic.size()) {
      throw ShapeError("gradcheck: '" + t.name + "' analytic gradient length");
    }
    const auto numeric = refinements > 0 ? piecewise_central_difference<T>(t.values, loss, step, refinements)
                                         : central_difference<T>(t.values, loss, step);
    reports.push_back({t.name, t.values.size(),
                       gradient_relative_error<T>(t.analytic, std::span<const T>(numeric))});
  }
  return reports;
}

}  // namespace lssg

#pragma once

// Central finite-difference gradient verification. The error metric is
// |analytic - numeric| / max(1, |analytic|, |numeric|): relative for large
// gradients, absolute below magnitude 1, so near-zero gradients (e.g. of a
// constant function) do not blow up the ratio.

#include <algorithm>
#include <string>
#include <vector>

#include "countnet/autodiff.hpp"
#include "countnet/tensor.hpp"

namespace countnet {

template <typename T>
struct GradCheckItem {
  std::string where;
  T analytic = 0;
  T numeric = 0;
  T error = 0;
};

template <typename T>
struct GradCheckReport {
  bool pass = true;
  T max_error = 0;
  GradCheckItem<T> worst;
  std::vector<GradCheckItem<T>> failures;  // capped at 16
  std::size_t checked = 0;
};

// f: (Tape<T>&, const std::vector<Var<T>>& leaves) -> scalar Var<T>.
// Every input is treated as differentiable.
template <typename T, typename Fn>
GradCheckReport<T> grad_check(Fn&& f, std::vector<Tensor<T>> inputs, T h, T tol,
                              std::vector<std::string> names = {}) {
  if (h <= T(0)) throw ValueError("grad_check requires h > 0");
  while (names.size() < inputs.size()) names.push_back("input" + std::to_string(names.size()));

  auto eval = [&](const std::vector<Tensor<T>>& xs, std::vector<Var<T>>* leaves_out,
                  Tape<T>* tape) -> Var<T> {
    std::vector<Var<T>> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape->leaf(x, true));
    Var<T> loss = f(*tape, leaves);
    if (loss.value().size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
    if (leaves_out) *leaves_out = leaves;
    return loss;
  };

  // analytic pass
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    Var<T> loss = eval(inputs, &leaves, &tape);
    tape.backward(loss);
    for (const auto& v : leaves) analytic.push_back(tape.grad_or_zeros(v.id));
  }

  GradCheckReport<T> report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const T saved = inputs[i][e];
      inputs[i][e] = saved + h;
      Tape<T> tp;
      const T lp = eval(inputs, nullptr, &tp).value()[0];
      inputs[i][e] = saved - h;
      Tape<T> tm;
      const T lm = eval(inputs, nullptr, &tm).value()[0];
      inputs[i][e] = saved;

      const T numeric = (lp - lm) / (2 * h);
      const T a = analytic[i][e];
      const T denom = std::max(T(1), std::max(std::abs(a), std::abs(numeric)));
      const T err = std::abs(a - numeric) / denom;
      ++report.checked;
      GradCheckItem<T> item{names[i] + "[" + std::to_string(e) + "]", a, numeric, err};
      if (err > report.max_error) {
        report.max_error = err;
        report.worst = item;
      }
      if (err >= tol) {
        report.pass = false;
        if (report.failures.size() < 16) report.failures.push_back(item);
      }
    }
  }
  return report;
}

}  // namespace countnet

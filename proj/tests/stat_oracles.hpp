#pragma once

// Test-side statistics helpers: chi-square goodness-of-fit p-values via the
// regularized incomplete gamma function. Lives with the tests so oracles
// stay independent of the library under test.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

namespace statsutil {

inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 500; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Upper-tail regularized incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q domain");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_contfrac(a, x);
}

// P(chi2 >= observed) for the given degrees of freedom.
inline double chi_square_pvalue(double chi2, double dof) {
  return gamma_q(dof / 2.0, chi2 / 2.0);
}

// Goodness-of-fit p-value from observed counts and expected probabilities.
template <class Key>
double chi_square_gof(const std::map<Key, long long>& observed,
                      const std::map<Key, double>& expected_probability,
                      long long total_draws) {
  double chi2 = 0.0;
  std::size_t cells = 0;
  for (const auto& [key, prob] : expected_probability) {
    const double expected = prob * static_cast<double>(total_draws);
    if (expected <= 0.0) continue;
    auto it = observed.find(key);
    const double obs = it == observed.end() ? 0.0 : static_cast<double>(it->second);
    chi2 += (obs - expected) * (obs - expected) / expected;
    ++cells;
  }
  // Any observation outside the expected support falsifies the fit outright.
  for (const auto& [key, count] : observed) {
    if (count > 0 && !expected_probability.contains(key)) return 0.0;
  }
  if (cells < 2) throw std::invalid_argument("chi-square needs >= 2 cells");
  return chi_square_pvalue(chi2, static_cast<double>(cells - 1));
}

}  // namespace statsutil

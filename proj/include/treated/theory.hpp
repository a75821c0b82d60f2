#pragma once

// Posterior probability that an input is adversarial given whether the
// reference models agreed on it, under equal priors on clean/adversarial:
//
//   P(adv | consistent)   = q / (p + q)
//   P(adv | inconsistent) = (1 - q) / (2 - (p + q))
//
// p = P(consistent | clean), q = P(consistent | adversarial).

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "treated/ensemble.hpp"
#include "treated/errors.hpp"
#include "treated/rng.hpp"

namespace treated {

struct PQEstimate {
  double p = 0.0;
  double q = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_adv = 0;
};

namespace detail {
inline void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
  }
}
}  // namespace detail

inline double posterior_given_consistent(double p, double q) {
  detail::check_unit(p, "p");
  detail::check_unit(q, "q");
  if (p + q == 0.0) throw UndefinedPosterior("P(E|C) undefined at p + q = 0");
  return 1.0 / (1.0 + p / q);  // q / (p + q), monotone under rounding
}

inline double posterior_given_inconsistent(double p, double q) {
  detail::check_unit(p, "p");
  detail::check_unit(q, "q");
  if (p + q == 2.0) throw UndefinedPosterior("P(E|D) undefined at p + q = 2");
  return 1.0 / (1.0 + (1.0 - p) / (1.0 - q));  // (1 - q) / (2 - p - q)
}

inline PQEstimate estimate_pq(std::span<const Verdict> clean, std::span<const Verdict> adversarial) {
  if (clean.empty() || adversarial.empty()) {
    throw std::invalid_argument("estimate_pq: both verdict lists must be non-empty");
  }
  auto rate = [](std::span<const Verdict> vs) {
    std::size_t n = 0;
    for (const auto& v : vs) n += v.consistent;
    return static_cast<double>(n) / static_cast<double>(vs.size());
  };
  return {rate(clean), rate(adversarial), clean.size(), adversarial.size()};
}

/// Empirical conditionals from a simulation; absent when the conditioning event never occurred.
struct MonteCarloPosterior {
  std::optional<double> given_consistent;
  std::optional<double> given_inconsistent;
  std::size_t n_consistent = 0;
  std::size_t n_inconsistent = 0;
};

// Each trial draws "adversarial" with probability prior_adv, then "consistent"
// with probability q (adversarial) or p (clean). With prior_adv = 0.5 the
// frequencies converge to the closed forms above.
inline MonteCarloPosterior monte_carlo_posterior(double p, double q, double prior_adv, std::size_t trials,
                                                 std::uint64_t seed) {
  detail::check_unit(p, "p");
  detail::check_unit(q, "q");
  detail::check_unit(prior_adv, "prior_adv");
  if (trials < 1) throw std::invalid_argument("monte_carlo_posterior: trials must be >= 1");
  Rng rng(seed);
  std::size_t adv_and_c = 0, adv_and_d = 0;
  MonteCarloPosterior out;
  for (std::size_t i = 0; i < trials; ++i) {
    const bool adversarial = rng.uniform() < prior_adv;
    const bool consistent = rng.uniform() < (adversarial ? q : p);
    if (consistent) {
      ++out.n_consistent;
      adv_and_c += adversarial;
    } else {
      ++out.n_inconsistent;
      adv_and_d += adversarial;
    }
  }
  if (out.n_consistent) out.given_consistent = static_cast<double>(adv_and_c) / static_cast<double>(out.n_consistent);
  if (out.n_inconsistent) {
    out.given_inconsistent = static_cast<double>(adv_and_d) / static_cast<double>(out.n_inconsistent);
  }
  return out;
}

struct PosteriorGrid {
  std::vector<double> p_axis;
  std::vector<double> q_axis;
  // Indexed [p_index][q_index]; absent where the posterior is undefined.
  std::vector<std::vector<std::optional<double>>> given_consistent;
  std::vector<std::vector<std::optional<double>>> given_inconsistent;
};

/// 0, step, 2*step, ... and always ending at exactly 1.
inline std::vector<double> unit_axis(double step) {
  std::vector<double> axis;
  for (std::size_t i = 0;; ++i) {
    const double v = static_cast<double>(i) * step;
    if (v > 1.0 - 1e-9) break;
    axis.push_back(v);
  }
  axis.push_back(1.0);
  return axis;
}

inline PosteriorGrid sweep_grid(double p_step, double q_step) {
  for (double s : {p_step, q_step}) {
    if (!(s > 0.0 && s <= 0.5)) throw std::invalid_argument("sweep_grid: steps must lie in (0, 0.5]");
  }
  PosteriorGrid g;
  g.p_axis = unit_axis(p_step);
  g.q_axis = unit_axis(q_step);
  g.given_consistent.assign(g.p_axis.size(), std::vector<std::optional<double>>(g.q_axis.size()));
  g.given_inconsistent = g.given_consistent;
  for (std::size_t i = 0; i < g.p_axis.size(); ++i) {
    for (std::size_t j = 0; j < g.q_axis.size(); ++j) {
      const double p = g.p_axis[i], q = g.q_axis[j];
      if (p + q > 0.0) g.given_consistent[i][j] = posterior_given_consistent(p, q);
      if (p + q < 2.0) g.given_inconsistent[i][j] = posterior_given_inconsistent(p, q);
    }
  }
  return g;
}

/// TSV with header `p q pec ped`; undefined cells are written as NA.
inline void write_grid_tsv(std::ostream& out, const PosteriorGrid& g) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  out << "p\tq\tpec\tped\n";
  char axis[64];
  for (std::size_t i = 0; i < g.p_axis.size(); ++i) {
    for (std::size_t j = 0; j < g.q_axis.size(); ++j) {
      std::snprintf(axis, sizeof axis, "%.4f\t%.4f", g.p_axis[i], g.q_axis[j]);
      out << axis << '\t' << cell(g.given_consistent[i][j]) << '\t' << cell(g.given_inconsistent[i][j]) << '\n';
    }
  }
}

}  // namespace treated

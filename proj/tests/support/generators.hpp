#pragma once

// Random formula/signal generators shared by property and acceptance tests.

#include "pastel/common/rng.hpp"
#include "pastel/env/planar_env.hpp"
#include "pastel/stl/formula.hpp"

#include <algorithm>
#include <vector>

namespace pastel::testkit {

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline stl::Formula random_atom(Rng& rng, bool allow_regions) {
  if (allow_regions && uniform_int(rng, 0, 2) == 0) {
    static const char* names[] = {"R1", "R2", "R3", "O1"};
    const auto pol = uniform_int(rng, 0, 1) == 0 ? env::Polarity::inside : env::Polarity::outside;
    return stl::Formula::region(names[uniform_int(rng, 0, 3)], pol);
  }
  std::vector<double> w(4, 0.0);
  const int k = uniform_int(rng, 0, 3);
  w[static_cast<std::size_t>(k)] = uniform_int(rng, 0, 1) == 0 ? 1.0 : -1.0;
  if (uniform_int(rng, 0, 3) == 0) w[static_cast<std::size_t>((k + 1) % 4)] = uniform(rng, -1.0, 1.0);
  const double threshold = k < 2 ? uniform(rng, 0.0, 10.0) : uniform(rng, -2.0, 2.0);
  return stl::Formula::affine(std::move(w), -w[static_cast<std::size_t>(k)] * threshold);
}

/// Depth counts atoms as 1; temporal windows never exceed `budget` in total.
inline stl::Formula random_formula(Rng& rng, int max_depth, int budget, bool allow_regions = true) {
  if (max_depth <= 1 || uniform_int(rng, 0, 4) == 0) return random_atom(rng, allow_regions);
  const int choice = uniform_int(rng, 0, 5);
  auto window = [&](int& remaining) {
    const int hi = uniform_int(rng, 0, std::min(remaining, 8));
    const int lo = uniform_int(rng, 0, hi);
    remaining -= hi;
    return stl::Interval{lo, hi};
  };
  switch (choice) {
    case 0: return stl::Formula::negation(random_formula(rng, max_depth - 1, budget, allow_regions));
    case 1:
      return stl::Formula::conjunction(random_formula(rng, max_depth - 1, budget, allow_regions),
                                       random_formula(rng, max_depth - 1, budget, allow_regions));
    case 2:
      return stl::Formula::disjunction(random_formula(rng, max_depth - 1, budget, allow_regions),
                                       random_formula(rng, max_depth - 1, budget, allow_regions));
    case 3: {
      int rem = budget;
      const auto w = window(rem);
      return stl::Formula::eventually(w, random_formula(rng, max_depth - 1, rem, allow_regions));
    }
    case 4: {
      int rem = budget;
      const auto w = window(rem);
      return stl::Formula::always(w, random_formula(rng, max_depth - 1, rem, allow_regions));
    }
    default: {
      int rem = budget;
      const auto w = window(rem);
      return stl::Formula::until(w, random_formula(rng, max_depth - 1, rem, allow_regions),
                                 random_formula(rng, max_depth - 1, rem, allow_regions));
    }
  }
}

/// Positions in [0,10]^2, velocities in [-2,2]; four components per sample.
inline stl::Signal random_signal(Rng& rng, std::size_t length) {
  std::vector<double> v;
  v.reserve(length * 4);
  for (std::size_t t = 0; t < length; ++t) {
    v.push_back(uniform(rng, 0.0, 10.0));
    v.push_back(uniform(rng, 0.0, 10.0));
    v.push_back(uniform(rng, -2.0, 2.0));
    v.push_back(uniform(rng, -2.0, 2.0));
  }
  return stl::Signal(4, std::move(v));
}

inline stl::Signal px_signal(std::vector<double> px) {
  std::vector<double> v;
  for (double x : px) v.insert(v.end(), {x, 0.0, 0.0, 0.0});
  return stl::Signal(4, std::move(v));
}

} // namespace pastel::testkit

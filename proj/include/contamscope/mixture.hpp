#pragma once

// Two-state Gaussian mixture of synthetic difficulty: closed-form moments,
// seeded sampling, and labelled synthetic DVD datasets.

#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace contamscope {

template <typename Scalar = double>
struct MixtureSpec {
  Scalar pi_m = Scalar(0.5);
  Scalar mu_m = Scalar(0);
  Scalar sigma_m = Scalar(0);
  Scalar mu_u = Scalar(0);
  Scalar sigma_u = Scalar(0);
};

template <typename Scalar>
void validate(const MixtureSpec<Scalar>& s) {
  if (!(s.pi_m >= Scalar(0) && s.pi_m <= Scalar(1))) throw InvariantError("pi_m must lie in [0, 1]");
  if (!(s.sigma_m >= Scalar(0)) || !(s.sigma_u >= Scalar(0))) {
    throw InvariantError("component sigmas must be >= 0");
  }
}

template <typename Scalar>
Scalar mixture_mean(const MixtureSpec<Scalar>& s) {
  return s.pi_m * s.mu_m + (Scalar(1) - s.pi_m) * s.mu_u;
}

template <typename Scalar>
Scalar mixture_variance(const MixtureSpec<Scalar>& s) {
  const Scalar mu = mixture_mean(s);
  const Scalar pi_u = Scalar(1) - s.pi_m;
  const Scalar dm = s.mu_m - mu;
  const Scalar du = s.mu_u - mu;
  return s.pi_m * (s.sigma_m * s.sigma_m + dm * dm) + pi_u * (s.sigma_u * s.sigma_u + du * du);
}

/// E[Var | Z]
template <typename Scalar>
Scalar within_component_variance(const MixtureSpec<Scalar>& s) {
  return s.pi_m * s.sigma_m * s.sigma_m + (Scalar(1) - s.pi_m) * s.sigma_u * s.sigma_u;
}

/// Var[E | Z]
template <typename Scalar>
Scalar between_component_variance(const MixtureSpec<Scalar>& s) {
  const Scalar gap = s.mu_m - s.mu_u;
  return s.pi_m * (Scalar(1) - s.pi_m) * gap * gap;
}

/// n draws of Z ~ Bernoulli(pi_m) followed by Normal(mu_Z, sigma_Z).
Eigen::VectorXd sample_d_values(const MixtureSpec<double>& spec, Eigen::Index n, std::uint64_t seed);

/// DVD scores for `items` synthetic items: the first ceil(items/2) draw from
/// `contaminated`, the rest from `clean`, each item on its own seed stream.
/// `clean.pi_m` must be 0.
std::vector<DetectorScore> make_synthetic_dataset(const MixtureSpec<double>& contaminated,
                                                  const MixtureSpec<double>& clean, int items,
                                                  int samples_per_item, std::uint64_t seed);

}  // namespace contamscope

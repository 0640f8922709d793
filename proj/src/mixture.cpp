#include "contamscope/mixture.hpp"

#include "contamscope/random.hpp"
#include "contamscope/stats.hpp"

#include <random>
#include <string>

namespace contamscope {

namespace {

constexpr std::uint64_t kMixtureStream = 0x6d69787475726531ULL;

Eigen::VectorXd draw(const MixtureSpec<double>& spec, Eigen::Index n, std::mt19937_64& rng) {
  Eigen::VectorXd out(n);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool memory = uniform01(rng) < spec.pi_m;
    const double z = normal(rng);
    out[i] = memory ? spec.mu_m + spec.sigma_m * z : spec.mu_u + spec.sigma_u * z;
  }
  return out;
}

}  // namespace

Eigen::VectorXd sample_d_values(const MixtureSpec<double>& spec, Eigen::Index n, std::uint64_t seed) {
  validate(spec);
  if (n < 1) throw InvariantError("n must be >= 1");
  auto rng = make_engine(kMixtureStream, seed);
  return draw(spec, n, rng);
}

std::vector<DetectorScore> make_synthetic_dataset(const MixtureSpec<double>& contaminated,
                                                  const MixtureSpec<double>& clean, int items,
                                                  int samples_per_item, std::uint64_t seed) {
  validate(contaminated);
  validate(clean);
  if (clean.pi_m != 0.0) throw InvariantError("clean spec must have pi_m = 0");
  if (items < 0) throw InvariantError("items must be >= 0");
  if (samples_per_item < 1) throw InvariantError("samples_per_item must be >= 1");

  const int n_contaminated = (items + 1) / 2;
  std::vector<DetectorScore> out;
  out.reserve(static_cast<std::size_t>(items));
  for (int i = 0; i < items; ++i) {
    const bool is_contaminated = i < n_contaminated;
    auto rng = make_engine(kMixtureStream ^ static_cast<std::uint64_t>(i + 1), seed);
    const Eigen::VectorXd d = draw(is_contaminated ? contaminated : clean, samples_per_item, rng);
    DetectorScore s;
    s.detector = Detector::dvd;
    s.item_id = "syn-" + std::to_string(i);
    s.value = population_variance(d);
    s.orientation = orientation_of(Detector::dvd);
    s.label = is_contaminated ? Label::contaminated : Label::clean;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace contamscope

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string_view>

#include <Eigen/Dense>

namespace linpo {

/// Splittable counter-based generator (SplittableRandom-style).
///
/// Streams are keyed by (seed, tag, index), so independent purposes
/// ("traj", "zeta", "env", ...) never share draws and adding a new
/// consumer cannot perturb an existing stream.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : state_(mix64(seed + 0x9e3779b97f4a7c15ULL) ^
               mix64(fnv1a(tag) + 0x3c6ef372fe94f82aULL) ^
               mix64(index + 0x78dde6e5fd29f05bULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform draw in the open interval (0, 1); never 0, safe under log().
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (pairwise, second draw cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  Eigen::VectorXd normal_vector(int dim) {
    Eigen::VectorXd g(dim);
    for (int i = 0; i < dim; ++i) g(i) = normal();
    return g;
  }

  /// Index sampled from a probability vector by cumulative scan.
  int categorical(const Eigen::VectorXd& probs) {
    const double u = uniform();
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs(i);
      if (u < acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;
  }

  /// Uniform draw from the probability simplex (symmetric Dirichlet(1)).
  Eigen::VectorXd dirichlet(int dim) {
    Eigen::VectorXd v(dim);
    double sum = 0.0;
    for (int i = 0; i < dim; ++i) {
      v(i) = -std::log(uniform());
      sum += v(i);
    }
    return v / sum;
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace linpo

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rnntrack {

using Vec3 = Eigen::Vector3d;

// Unit vectors discretizing the sphere (or, with `hemisphere`, one
// representative per antipodal pair). Immutable once built.
class DirectionSet {
 public:
  DirectionSet() = default;

  // Normalizes each vector. Throws InvalidArgument on zero vectors, duplicates,
  // or (hemisphere only) antipodal pairs.
  static DirectionSet from_vectors(std::vector<Vec3> vectors, bool hemisphere);

  std::size_t size() const noexcept { return dirs_.size(); }
  bool hemisphere() const noexcept { return hemisphere_; }
  const Vec3& operator[](std::size_t i) const { return dirs_[i]; }
  std::span<const Vec3> directions() const noexcept { return dirs_; }

  // Class index of the end-of-fiber label, one past the last direction.
  std::size_t eof_class() const noexcept { return dirs_.size(); }
  std::size_t num_classes() const noexcept { return dirs_.size() + 1; }

  std::string to_text() const;
  static DirectionSet from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DirectionSet load(const std::filesystem::path& path);

  friend bool operator==(const DirectionSet&, const DirectionSet&) = default;

 private:
  DirectionSet(std::vector<Vec3> dirs, bool hemisphere)
      : dirs_(std::move(dirs)), hemisphere_(hemisphere) {}

  friend DirectionSet generate_directions(std::size_t, bool);

  std::vector<Vec3> dirs_;
  bool hemisphere_ = false;
};

/// Near-uniform deterministic point set on the sphere.
///
/// Full sphere: golden-spiral lattice refined by a fixed number of
/// iterations minimizing the covering radius, so the worst-case gap to the
/// nearest member stays close to the hexagonal bound. Hemisphere: golden
/// spiral over z > 0 with the same refinement applied to the antipodally
/// symmetrized set.
/// Throws InvalidArgument for count < 2.
DirectionSet generate_directions(std::size_t count, bool hemisphere);

// Angle in [0, pi]. Throws InvalidArgument if either vector is zero.
double angle_between(const Vec3& u, const Vec3& v);

// Index of the member nearest to `v` by angle; ties go to the lowest index.
// `v` is normalized internally; zero vectors throw InvalidArgument.
std::size_t classify_direction(const Vec3& v, const DirectionSet& ds);

// Soft label over num_classes() entries. For a direction class k,
// probs[m] is proportional to exp(-angle(d_m, d_k) / tau) over the direction
// classes and the EoF entry is 0. The EoF class maps to a one-hot EoF label.
struct SmoothLabel {
  Eigen::VectorXd probs;
  double tau = 0.0;
};

SmoothLabel smooth_label(std::size_t class_index, const DirectionSet& ds, double tau);

// Real, antipodally symmetric spherical harmonics of even order.
// Coefficient j enumerates l = 0, 2, ..., order and m = -l..l.
class ShBasis {
 public:
  explicit ShBasis(int order);

  int order() const noexcept { return order_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>((order_ + 1) * (order_ + 2) / 2); }

  // Degree l of coefficient j.
  int degree_of(std::size_t j) const;

  Eigen::VectorXd evaluate(const Vec3& dir) const;
  Eigen::MatrixXd matrix(std::span<const Vec3> dirs) const;

 private:
  int order_;
};

// Precomputed linear map from values on `src` to values on `dst` via a
// regularized least-squares SH fit. The fit penalizes
// reg * sum_j (l_j (l_j + 1))^2 c_j^2 (Laplace-Beltrami).
class ShResampler {
 public:
  ShResampler(std::span<const Vec3> src, std::span<const Vec3> dst, int order, double reg);

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& values) const;
  const Eigen::MatrixXd& operator_matrix() const noexcept { return op_; }

 private:
  Eigen::MatrixXd op_;  // dst x src
};

Eigen::VectorXd sh_fit_and_sample(const Eigen::Ref<const Eigen::VectorXd>& values,
                                  const DirectionSet& src, const DirectionSet& dst, int order,
                                  double reg);

inline constexpr int kDefaultShOrder = 8;
inline constexpr double kDefaultShRegularization = 0.006;

}  // namespace rnntrack

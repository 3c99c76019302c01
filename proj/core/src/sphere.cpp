#include "rnntrack/sphere.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>

#include "rnntrack/error.hpp"

namespace rnntrack {

namespace {

constexpr double kGoldenAngle = std::numbers::pi * (3.0 - 2.23606797749978969641);

// Forward-mode dual number carrying partials w.r.t. the nine coordinates of a
// point triple. Only the operations used by circumradius() are provided.
struct Dual9 {
  double v = 0.0;
  std::array<double, 9> d{};

  static Dual9 constant(double x) { return {x, {}}; }
  static Dual9 variable(double x, int slot) {
    Dual9 r{x, {}};
    r.d[slot] = 1.0;
    return r;
  }
};

Dual9 operator+(const Dual9& a, const Dual9& b) {
  Dual9 r{a.v + b.v, {}};
  for (int i = 0; i < 9; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual9 operator-(const Dual9& a, const Dual9& b) {
  Dual9 r{a.v - b.v, {}};
  for (int i = 0; i < 9; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual9 operator*(const Dual9& a, const Dual9& b) {
  Dual9 r{a.v * b.v, {}};
  for (int i = 0; i < 9; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual9 operator*(double s, const Dual9& a) {
  Dual9 r{s * a.v, {}};
  for (int i = 0; i < 9; ++i) r.d[i] = s * a.d[i];
  return r;
}
Dual9 operator/(const Dual9& a, const Dual9& b) {
  Dual9 r{a.v / b.v, {}};
  const double inv = 1.0 / (b.v * b.v);
  for (int i = 0; i < 9; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
  return r;
}
Dual9 sqrt(const Dual9& a) {
  const double s = std::sqrt(a.v);
  Dual9 r{s, {}};
  for (int i = 0; i < 9; ++i) r.d[i] = a.d[i] / (2.0 * s);
  return r;
}
Dual9 acos(const Dual9& a) {
  const double x = std::clamp(a.v, -1.0, 1.0);
  const double k = -1.0 / std::sqrt(std::max(1e-300, 1.0 - x * x));
  Dual9 r{std::acos(x), {}};
  for (int i = 0; i < 9; ++i) r.d[i] = k * a.d[i];
  return r;
}

using D3 = std::array<Dual9, 3>;

Dual9 dot(const D3& a, const D3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
D3 sub(const D3& a, const D3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
D3 cross(const D3& a, const D3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
D3 normalized(const D3& a) {
  const Dual9 n = sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Angular radius of the spherical cap through three points, with partials
// w.r.t. their (unnormalized) coordinates.
Dual9 circumradius(const Vec3& pa, const Vec3& pb, const Vec3& pc) {
  const auto lift = [](const Vec3& p, int base) {
    return D3{Dual9::variable(p.x(), base), Dual9::variable(p.y(), base + 1),
              Dual9::variable(p.z(), base + 2)};
  };
  const D3 a = normalized(lift(pa, 0));
  const D3 b = normalized(lift(pb, 3));
  const D3 c = normalized(lift(pc, 6));
  D3 n = normalized(cross(sub(b, a), sub(c, a)));
  if (dot(n, a).v < 0.0) n = {-1.0 * n[0], -1.0 * n[1], -1.0 * n[2]};
  return acos(dot(n, a));
}

struct Triple {
  std::array<std::size_t, 3> idx;
};

// Empty-circumcap triples among nearest neighbours: the Voronoi vertices of
// the point set. Their circumradii bound the covering radius.
std::vector<Triple> voronoi_vertices(const std::vector<Vec3>& pts, std::size_t k) {
  const std::size_t n = pts.size();
  k = std::min(k, n - 1);
  std::vector<std::vector<std::size_t>> knn(n);
  std::vector<std::pair<double, std::size_t>> scratch(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) scratch[j] = {-pts[i].dot(pts[j]), j};
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k + 1),
                      scratch.end());
    for (std::size_t r = 0; r <= k; ++r)
      if (scratch[r].second != i) knn[i].push_back(scratch[r].second);
    knn[i].resize(k);
  }
  std::set<std::array<std::size_t, 3>> seen;
  std::vector<Triple> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = knn[i];
    for (std::size_t x = 0; x < nb.size(); ++x) {
      for (std::size_t y = x + 1; y < nb.size(); ++y) {
        std::array<std::size_t, 3> t{i, nb[x], nb[y]};
        std::sort(t.begin(), t.end());
        if (seen.contains(t)) continue;
        const Vec3& a = pts[t[0]];
        Vec3 c = (pts[t[1]] - a).cross(pts[t[2]] - a);
        const double cn = c.norm();
        if (cn < 1e-300) continue;
        c /= cn;
        if (c.dot(a) < 0.0) c = -c;
        const double cap = c.dot(a);
        bool empty = true;
        for (std::size_t v : t) {
          for (std::size_t q : knn[v]) {
            if (q == t[0] || q == t[1] || q == t[2]) continue;
            if (c.dot(pts[q]) > cap + 1e-13) {
              empty = false;
              break;
            }
          }
          if (!empty) break;
        }
        if (!empty) continue;
        seen.insert(t);
        out.push_back({t});
      }
    }
  }
  return out;
}

// Shrinks the largest holes of the point set: Adam on a log-sum-exp of the
// Voronoi-vertex circumradii. With `symmetric`, the working set is the
// points together with their antipodes and gradients are folded back.
void refine_covering(std::vector<Vec3>& pts, bool symmetric) {
  const std::size_t n = pts.size();
  constexpr int kOuter = 60;
  constexpr int kInner = 20;
  constexpr double kSharpness = 3000.0;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  // Step scaled to the mean point spacing.
  double lr = 0.015 * std::sqrt(4.0 * std::numbers::pi / static_cast<double>(n * (symmetric ? 2 : 1)));

  std::vector<Vec3> m(n, Vec3::Zero()), v(n, Vec3::Zero());
  long step = 0;
  std::vector<Vec3> work;
  const auto build_work = [&] {
    work = pts;
    if (symmetric)
      for (std::size_t i = 0; i < n; ++i) work.push_back(-pts[i]);
  };
  // Index into `pts` and sign for a working-set index.
  const auto owner = [&](std::size_t w) -> std::pair<std::size_t, double> {
    return w < n ? std::pair{w, 1.0} : std::pair{w - n, -1.0};
  };

  for (int outer = 0; outer < kOuter; ++outer) {
    build_work();
    const auto triples = voronoi_vertices(work, 14);
    if (triples.empty()) return;
    std::vector<double> theta(triples.size());
    std::vector<std::array<double, 9>> grad(triples.size());
    for (int inner = 0; inner < kInner; ++inner) {
      build_work();
      double tmax = -1.0;
      for (std::size_t t = 0; t < triples.size(); ++t) {
        const auto& id = triples[t].idx;
        const Dual9 r = circumradius(work[id[0]], work[id[1]], work[id[2]]);
        theta[t] = r.v;
        grad[t] = r.d;
        tmax = std::max(tmax, r.v);
      }
      double z = 0.0;
      for (double th : theta) z += std::exp(kSharpness * (th - tmax));
      std::vector<Vec3> g(n, Vec3::Zero());
      for (std::size_t t = 0; t < triples.size(); ++t) {
        const double w = std::exp(kSharpness * (theta[t] - tmax)) / z;
        if (w < 1e-14) continue;
        for (int s = 0; s < 3; ++s) {
          const auto [i, sign] = owner(triples[t].idx[static_cast<std::size_t>(s)]);
          g[i] += sign * w * Vec3(grad[t][3 * s], grad[t][3 * s + 1], grad[t][3 * s + 2]);
        }
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i].cwiseProduct(g[i]);
        const Vec3 mh = m[i] / c1;
        const Vec3 vh = v[i] / c2;
        pts[i] -= lr * mh.cwiseQuotient((vh.cwiseSqrt().array() + kEps).matrix());
        pts[i].normalize();
      }
    }
    lr *= 0.95;
  }
}

std::vector<Vec3> spiral_full(std::size_t count) {
  std::vector<Vec3> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * static_cast<double>(i) / static_cast<double>(count - 1);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = kGoldenAngle * static_cast<double>(i);
    pts[i] = Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  return pts;
}

std::vector<Vec3> spiral_hemisphere(std::size_t count) {
  std::vector<Vec3> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = kGoldenAngle * static_cast<double>(i);
    pts[i] = Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  return pts;
}

// Flip each point into the upper half space (ties by y, then x).
void canonicalize_hemisphere(std::vector<Vec3>& pts) {
  for (auto& p : pts) {
    const bool flip = p.z() < 0.0 || (p.z() == 0.0 && (p.y() < 0.0 || (p.y() == 0.0 && p.x() < 0.0)));
    if (flip) p = -p;
  }
}

// Refinement needs enough points for a triangulated working set.
constexpr std::size_t kMinRefineCount = 12;

}  // namespace

DirectionSet DirectionSet::from_vectors(std::vector<Vec3> vectors, bool hemisphere) {
  for (auto& v : vectors) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("direction set: zero or non-finite vector");
    // Already-unit vectors are kept bit-exact so text round trips are lossless.
    if (std::abs(n - 1.0) > 1e-15) v /= n;
  }
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      if ((vectors[i] - vectors[j]).norm() < 1e-12)
        throw InvalidArgument("direction set: duplicate vectors at " + std::to_string(i) + ", " +
                              std::to_string(j));
      if (hemisphere && (vectors[i] + vectors[j]).norm() < 1e-9)
        throw InvalidArgument("direction set: antipodal vectors at " + std::to_string(i) + ", " +
                              std::to_string(j));
    }
  }
  return DirectionSet(std::move(vectors), hemisphere);
}

std::string DirectionSet::to_text() const {
  std::ostringstream os;
  os << dirs_.size() << ' ' << (hemisphere_ ? 1 : 0) << '\n';
  os << std::setprecision(17);
  for (const auto& d : dirs_) os << d.x() << ' ' << d.y() << ' ' << d.z() << '\n';
  return os.str();
}

DirectionSet DirectionSet::from_text(const std::string& text) {
  std::istringstream is(text);
  std::size_t count = 0;
  int flag = -1;
  if (!(is >> count >> flag) || (flag != 0 && flag != 1))
    throw FormatError("direction set: bad header", 0);
  std::vector<Vec3> vecs(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x, y, z;
    if (!(is >> x >> y >> z))
      throw FormatError("direction set: missing line " + std::to_string(i + 1),
                        static_cast<std::uint64_t>(std::max<std::streamoff>(0, is.tellg())));
    vecs[i] = Vec3(x, y, z);
  }
  return from_vectors(std::move(vecs), flag == 1);
}

void DirectionSet::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_text();
}

DirectionSet DirectionSet::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

DirectionSet generate_directions(std::size_t count, bool hemisphere) {
  if (count < 2) throw InvalidArgument("generate_directions: count must be >= 2");

  static std::mutex mutex;
  static std::map<std::pair<std::size_t, bool>, DirectionSet> cache;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find({count, hemisphere}); it != cache.end()) return it->second;
  }

  std::vector<Vec3> pts = hemisphere ? spiral_hemisphere(count) : spiral_full(count);
  const std::size_t working = hemisphere ? 2 * count : count;
  if (working >= kMinRefineCount) refine_covering(pts, hemisphere);
  if (hemisphere) canonicalize_hemisphere(pts);
  DirectionSet ds(std::move(pts), hemisphere);

  std::lock_guard lock(mutex);
  return cache.emplace(std::pair{count, hemisphere}, std::move(ds)).first->second;
}

double angle_between(const Vec3& u, const Vec3& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw InvalidArgument("angle_between: zero vector");
  return std::acos(std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0));
}

std::size_t classify_direction(const Vec3& v, const DirectionSet& ds) {
  const double n = v.norm();
  if (!(n > 0.0)) throw InvalidArgument("classify_direction: zero vector");
  if (ds.size() == 0) throw InvalidArgument("classify_direction: empty direction set");
  const Vec3 u = v / n;
  // Dot products within this margin count as ties.
  constexpr double kTie = 1e-12;
  std::size_t best = 0;
  double best_dot = u.dot(ds[0]);
  for (std::size_t m = 1; m < ds.size(); ++m) {
    const double d = u.dot(ds[m]);
    if (d > best_dot + kTie) {
      best_dot = d;
      best = m;
    }
  }
  return best;
}

SmoothLabel smooth_label(std::size_t class_index, const DirectionSet& ds, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("smooth_label: tau must be positive");
  if (class_index > ds.eof_class()) throw InvalidArgument("smooth_label: class index out of range");
  SmoothLabel label{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.num_classes())), tau};
  if (class_index == ds.eof_class()) {
    label.probs[static_cast<Eigen::Index>(class_index)] = 1.0;
    return label;
  }
  const Vec3& ref = ds[class_index];
  double z = 0.0;
  for (std::size_t m = 0; m < ds.size(); ++m) {
    const double w = std::exp(-angle_between(ds[m], ref) / tau);
    label.probs[static_cast<Eigen::Index>(m)] = w;
    z += w;
  }
  label.probs /= z;
  return label;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

ShBasis::ShBasis(int order) : order_(order) {
  if (order < 0 || order % 2 != 0) throw InvalidArgument("ShBasis: order must be even and >= 0");
}

int ShBasis::degree_of(std::size_t j) const {
  for (int l = 0; l <= order_; l += 2) {
    const auto block = static_cast<std::size_t>(2 * l + 1);
    if (j < block) return l;
    j -= block;
  }
  throw InvalidArgument("ShBasis: coefficient index out of range");
}

namespace {

// Associated Legendre P_l^m(x) without the Condon-Shortley phase.
double assoc_legendre(int l, int m, double x) {
  double pmm = 1.0;
  if (m > 0) {
    const double somx2 = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
    double fact = 1.0;
    for (int i = 1; i <= m; ++i) {
      pmm *= fact * somx2;
      fact += 2.0;
    }
  }
  if (l == m) return pmm;
  double pmmp1 = x * (2 * m + 1) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2 * ll - 1) * pmmp1 - (ll + m - 1) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double sh_norm(int l, int m) {
  // sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!)
  double ratio = 1.0;
  for (int k = l - m + 1; k <= l + m; ++k) ratio /= k;
  return std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * ratio);
}

}  // namespace

Eigen::VectorXd ShBasis::evaluate(const Vec3& dir) const {
  const Vec3 u = dir.normalized();
  const double cos_theta = std::clamp(u.z(), -1.0, 1.0);
  const double phi = std::atan2(u.y(), u.x());
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  Eigen::Index j = 0;
  for (int l = 0; l <= order_; l += 2) {
    for (int m = -l; m <= l; ++m) {
      const int am = std::abs(m);
      const double base = sh_norm(l, am) * assoc_legendre(l, am, cos_theta);
      if (m < 0)
        out[j++] = std::numbers::sqrt2 * base * std::sin(am * phi);
      else if (m == 0)
        out[j++] = base;
      else
        out[j++] = std::numbers::sqrt2 * base * std::cos(m * phi);
    }
  }
  return out;
}

Eigen::MatrixXd ShBasis::matrix(std::span<const Vec3> dirs) const {
  Eigen::MatrixXd b(static_cast<Eigen::Index>(dirs.size()), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < dirs.size(); ++i) b.row(static_cast<Eigen::Index>(i)) = evaluate(dirs[i]).transpose();
  return b;
}

ShResampler::ShResampler(std::span<const Vec3> src, std::span<const Vec3> dst, int order, double reg) {
  if (reg < 0.0) throw InvalidArgument("sh fit: regularization must be >= 0");
  const ShBasis basis(order);
  const Eigen::MatrixXd bs = basis.matrix(src);
  const Eigen::MatrixXd bd = basis.matrix(dst);
  const auto ncoef = static_cast<Eigen::Index>(basis.size());
  if (reg == 0.0 && bs.rows() < ncoef)
    throw IllConditionedFit("sh fit: " + std::to_string(bs.rows()) + " source directions < " +
                            std::to_string(ncoef) + " coefficients without regularization");
  Eigen::MatrixXd normal = bs.transpose() * bs;
  for (Eigen::Index j = 0; j < ncoef; ++j) {
    const double l = basis.degree_of(static_cast<std::size_t>(j));
    normal(j, j) += reg * l * l * (l + 1) * (l + 1);
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-10 * hi)) throw IllConditionedFit("sh fit: normal matrix is rank deficient");
  op_ = bd * normal.ldlt().solve(bs.transpose());
}

Eigen::VectorXd ShResampler::apply(const Eigen::Ref<const Eigen::VectorXd>& values) const {
  if (values.size() != op_.cols()) throw InvalidArgument("sh resample: value count mismatch");
  return op_ * values;
}

Eigen::VectorXd sh_fit_and_sample(const Eigen::Ref<const Eigen::VectorXd>& values,
                                  const DirectionSet& src, const DirectionSet& dst, int order,
                                  double reg) {
  return ShResampler(src.directions(), dst.directions(), order, reg).apply(values);
}

}  // namespace rnntrack

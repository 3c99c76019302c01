#include "rnntrack/phantom.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <numbers>

#include "rnntrack/error.hpp"
#include "rnntrack/sphere.hpp"

namespace rnntrack {

namespace {

Vec3 any_perpendicular(const Vec3& t) {
  const Vec3 axis = std::abs(t.x()) <= std::abs(t.y()) && std::abs(t.x()) <= std::abs(t.z()) ? Vec3::UnitX()
                    : std::abs(t.y()) <= std::abs(t.z())                                       ? Vec3::UnitY()
                                                                                                : Vec3::UnitZ();
  return (axis - axis.dot(t) * t).normalized();
}

std::vector<Voxel> end_roi(const std::vector<Vec3>& centerline, bool first, double radius, const Dims& dims) {
  const Vec3 e = first ? centerline.front() : centerline.back();
  const Vec3 next = first ? centerline[1] : centerline[centerline.size() - 2];
  const Vec3 out = (e - next).normalized();
  const Vec3 a = e - 2.0 * out;  // two voxels inside the bundle
  const double len = 3.5;         // to 1.5 voxels past the end
  const double r = radius + 1.0;  // any voxel holding a point within radius
  std::vector<Voxel> roi;
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const Vec3 c(x + 0.5, y + 0.5, z + 0.5);
        const double s = (c - a).dot(out);
        if (s < 0.0 || s > len) continue;
        if ((c - a - s * out).norm() <= r) roi.push_back({x, y, z});
      }
  return roi;
}

}  // namespace

void BundleSpec::validate() const {
  if (centerline.size() < 2) throw InvalidArgument("bundle '" + name + "': centerline needs at least 2 points");
  if (!(radius > 0.0)) throw InvalidArgument("bundle '" + name + "': radius must be > 0");
  for (std::size_t i = 1; i < centerline.size(); ++i)
    if ((centerline[i] - centerline[i - 1]).norm() == 0.0)
      throw InvalidArgument("bundle '" + name + "': repeated centerline point");
}

void TensorParams::validate() const {
  if (!(lambda_radial > 0.0 && lambda_axial >= lambda_radial))
    throw InvalidArgument("TensorParams: need lambda_axial >= lambda_radial > 0");
  if (!(s0 > 0.0)) throw InvalidArgument("TensorParams: s0 must be > 0");
  if (!(std::abs(axial_ramp) < 2.0)) throw InvalidArgument("TensorParams: |axial_ramp| must be < 2");
}

std::vector<Streamline> build_bundle(const BundleSpec& spec, double step, Rng& rng) {
  spec.validate();
  if (!(step > 0.0)) throw InvalidArgument("build_bundle: step must be > 0");
  Streamline center;
  try {
    center = resample_equidistant(Streamline{spec.centerline}, step);
  } catch (const TooShort&) {
    throw InvalidArgument("bundle '" + spec.name + "': centerline shorter than one step");
  }
  const auto& c = center.points;
  const std::size_t n = c.size();
  std::vector<Vec3> tangent(n), normal(n), binormal(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3& a = c[k == 0 ? 0 : k - 1];
    const Vec3& b = c[k + 1 < n ? k + 1 : n - 1];
    tangent[k] = (b - a).normalized();
  }
  normal[0] = any_perpendicular(tangent[0]);
  for (std::size_t k = 1; k < n; ++k) {
    Vec3 v = normal[k - 1] - normal[k - 1].dot(tangent[k]) * tangent[k];
    normal[k] = v.norm() > 1e-12 ? v.normalized() : any_perpendicular(tangent[k]);
  }
  for (std::size_t k = 0; k < n; ++k) binormal[k] = tangent[k].cross(normal[k]);

  std::vector<Streamline> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const double r = spec.radius * std::sqrt(uniform01(rng));
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    const double a = r * std::cos(theta), b = r * std::sin(theta);
    Streamline s;
    s.points.reserve(n);
    for (std::size_t k = 0; k < n; ++k) s.points.push_back(c[k] + a * normal[k] + b * binormal[k]);
    out.push_back(resample_equidistant(s, step));
  }
  return out;
}

DwiVolume simulate_dwi(std::span<const SimBundle> bundles, const GradientTable& gradients, Dims dims,
                       VoxelSize voxel_size, double noise_sigma, Rng& rng, const TensorParams& background) {
  gradients.validate();
  background.validate();
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("simulate_dwi: noise_sigma must be >= 0");
  const std::size_t nvox = voxel_count(dims);
  if (nvox == 0) throw InvalidArgument("simulate_dwi: empty grid");

  struct Population {
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    double position_sum = 0.0;
    std::size_t segments = 0;
  };
  std::vector<std::vector<Population>> pops(bundles.size(), std::vector<Population>(nvox));
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    bundles[b].tensor.validate();
    for (const Streamline& s : bundles[b].streamlines) {
      if (s.size() < 2) continue;
      const double denom = static_cast<double>(s.size() - 1);
      for (std::size_t j = 0; j + 1 < s.size(); ++j) {
        const Vec3 mid = 0.5 * (s.points[j] + s.points[j + 1]);
        if (!inside(dims, mid)) continue;
        const Vec3 seg = s.points[j + 1] - s.points[j];
        if (seg.norm() == 0.0) continue;
        const Vec3 d = seg.normalized();
        Population& p = pops[b][voxel_index(dims, static_cast<std::size_t>(mid.x()), static_cast<std::size_t>(mid.y()),
                                            static_cast<std::size_t>(mid.z()))];
        p.scatter += d * d.transpose();
        p.position_sum += (static_cast<double>(j) + 0.5) / denom;
        ++p.segments;
      }
    }
  }

  const std::size_t nch = gradients.size();
  DwiVolume vol(dims, voxel_size, nch);
  struct Fiber {
    Vec3 dir;
    double axial, radial, s0;
  };
  std::vector<Fiber> fibers;
  for (std::size_t v = 0; v < nvox; ++v) {
    fibers.clear();
    for (std::size_t b = 0; b < bundles.size(); ++b) {
      const Population& p = pops[b][v];
      if (p.segments == 0) continue;
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(p.scatter);
      const TensorParams& tp = bundles[b].tensor;
      const double u = p.position_sum / static_cast<double>(p.segments);
      fibers.push_back({eig.eigenvectors().col(2), tp.lambda_axial * (1.0 + tp.axial_ramp * (u - 0.5)),
                        tp.lambda_radial, tp.s0});
    }
    float* out = vol.data.data() + v * nch;
    for (std::size_t c = 0; c < nch; ++c) {
      const double bval = gradients.bvals[c];
      double signal = 0.0;
      if (fibers.empty()) {
        signal = background.s0 * (bval > GradientTable::kB0Threshold ? std::exp(-bval * background.lambda_radial) : 1.0);
      } else {
        for (const Fiber& f : fibers) {
          if (bval <= GradientTable::kB0Threshold) {
            signal += f.s0;
          } else {
            const double cosang = gradients.bvecs[c].dot(f.dir);
            signal += f.s0 * std::exp(-bval * (f.radial + (f.axial - f.radial) * cosang * cosang));
          }
        }
        signal /= static_cast<double>(fibers.size());
      }
      if (noise_sigma > 0.0) signal = std::max(0.0, signal + noise_sigma * standard_normal(rng));
      out[c] = static_cast<float>(signal);
    }
  }
  return vol;
}

Tractogram PhantomDataset::ground_truth() const {
  Tractogram t;
  for (const auto& b : bundles) t.streamlines.insert(t.streamlines.end(), b.streamlines.begin(), b.streamlines.end());
  return t;
}

PhantomDataset make_crossing_phantom(const PhantomOptions& options) {
  const Dims dims{32, 32, 32};
  const VoxelSize vs{2.0f, 2.0f, 2.0f};
  TensorParams tensor;
  tensor.axial_ramp = options.axial_ramp;
  tensor.validate();

  PhantomDataset ds;
  for (int i = 0; i < 4; ++i) {
    ds.gradients.bvecs.push_back(Vec3::Zero());
    ds.gradients.bvals.push_back(0.0);
  }
  const DirectionSet dirs = generate_directions(32, true);
  for (const Vec3& d : dirs.directions()) {
    ds.gradients.bvecs.push_back(d);
    ds.gradients.bvals.push_back(tensor.bval);
  }

  std::vector<BundleSpec> specs(2);
  specs[0].name = "straight";
  specs[0].centerline = {Vec3(2.0, 16.0, 16.0), Vec3(30.0, 16.0, 16.0)};
  specs[1].name = "arc";
  for (int deg = 0; deg <= 90; ++deg) {
    const double th = deg * std::numbers::pi / 180.0;
    specs[1].centerline.emplace_back(2.0 + 24.0 * std::cos(th), 2.0 + 24.0 * std::sin(th), 16.0);
  }
  for (auto& s : specs) {
    s.radius = 3.0;
    s.count = options.streamlines_per_bundle;
  }

  for (std::size_t b = 0; b < specs.size(); ++b) {
    Rng rng(derive_seed(options.seed, b + 1));
    PhantomBundle pb;
    pb.name = specs[b].name;
    pb.streamlines = build_bundle(specs[b], options.step, rng);
    pb.roi_a = end_roi(specs[b].centerline, true, specs[b].radius, dims);
    pb.roi_b = end_roi(specs[b].centerline, false, specs[b].radius, dims);
    ds.bundles.push_back(std::move(pb));
  }

  std::vector<SimBundle> sim;
  for (const auto& b : ds.bundles) sim.push_back({b.streamlines, tensor});
  Rng noise_rng(derive_seed(options.seed, 0x6e6f697365ULL));
  ds.volume = simulate_dwi(sim, ds.gradients, dims, vs, options.noise_sigma, noise_rng, tensor);

  // Occupancy dilated by two voxels (26-neighbourhood, twice), plus the ROIs.
  BrainMask occ(dims);
  for (const auto& b : ds.bundles)
    for (const auto& s : b.streamlines)
      for (std::size_t v : traversed_voxels(s, dims)) occ.occupied[v] = 1;
  ds.mask = occ;
  for (int pass = 0; pass < 2; ++pass) {
    BrainMask grown = ds.mask;
    for (std::size_t z = 0; z < dims[2]; ++z)
      for (std::size_t y = 0; y < dims[1]; ++y)
        for (std::size_t x = 0; x < dims[0]; ++x) {
          if (!ds.mask.at(x, y, z)) continue;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long nx = static_cast<long>(x) + dx, ny = static_cast<long>(y) + dy, nz = static_cast<long>(z) + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= static_cast<long>(dims[0]) || ny >= static_cast<long>(dims[1]) ||
                    nz >= static_cast<long>(dims[2]))
                  continue;
                grown.occupied[voxel_index(dims, nx, ny, nz)] = 1;
              }
        }
    ds.mask = std::move(grown);
  }
  for (const auto& b : ds.bundles)
    for (const auto* roi : {&b.roi_a, &b.roi_b})
      for (const Voxel& v : *roi) ds.mask.occupied[voxel_index(dims, v[0], v[1], v[2])] = 1;
  return ds;
}

void write_phantom(const PhantomDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  save_volume(ds.volume, dir / "dwi.vol");
  ds.gradients.save(dir / "grad.txt");
  save_mask(ds.mask, dir / "mask.vol", ds.volume.voxel_size);
  save_tractogram(ds.ground_truth(), dir / "gt.trk");

  nlohmann::ordered_json j;
  j["dims"] = ds.volume.dims;
  j["voxel_size"] = ds.volume.voxel_size;
  j["bundles"] = nlohmann::ordered_json::array();
  for (const auto& b : ds.bundles) {
    const std::string file = "bundle_" + b.name + ".trk";
    save_tractogram(Tractogram{b.streamlines}, dir / file);
    j["bundles"].push_back({{"name", b.name}, {"tractogram", file}, {"roi_a", b.roi_a}, {"roi_b", b.roi_b}});
  }
  std::ofstream f(dir / "rois.json", std::ios::binary);
  if (!f) throw IoError("cannot write '" + (dir / "rois.json").string() + "'");
  f << j.dump(1) << '\n';
  if (!f) throw IoError("write failed for '" + (dir / "rois.json").string() + "'");
}

}  // namespace rnntrack

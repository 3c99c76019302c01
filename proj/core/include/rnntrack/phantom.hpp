#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rnntrack/dwi.hpp"
#include "rnntrack/rng.hpp"
#include "rnntrack/streamline.hpp"
#include "rnntrack/tracker.hpp"

namespace rnntrack {

struct BundleSpec {
  std::string name;
  std::vector<Vec3> centerline;  // control points, voxel coordinates
  double radius = 3.0;           // voxels
  std::size_t count = 1000;

  void validate() const;
};

// Single-tensor signal parameters for one fiber population (mm^2/s, s/mm^2).
struct TensorParams {
  double lambda_axial = 1.7e-3;
  double lambda_radial = 0.3e-3;
  double bval = 1000.0;
  double s0 = 1.0;
  // Relative change of the axial diffusivity from the first to the last end
  // of the bundle: lambda_axial * (1 + axial_ramp * (u - 0.5)), u in [0, 1]
  // the normalized position along the bundle.
  double axial_ramp = 0.0;

  void validate() const;
};

// Streamlines offset from the centerline by a random perpendicular vector of
// length <= radius (uniform over the disk), constant along arc length in a
// parallel-transported frame, then resampled at `step`.
std::vector<Streamline> build_bundle(const BundleSpec& spec, double step, Rng& rng);

struct SimBundle {
  std::span<const Streamline> streamlines;
  TensorParams tensor;
};

// Fiber directions per voxel come from the streamline segments whose
// midpoints fall in it (one population per bundle, its principal direction);
// the signal is the equal-weight tensor mixture. Fiber-free voxels get
// isotropic diffusion with the first bundle's radial diffusivity. Gaussian
// noise of `noise_sigma` is added to every channel, then floored at 0.
DwiVolume simulate_dwi(std::span<const SimBundle> bundles, const GradientTable& gradients, Dims dims,
                       VoxelSize voxel_size, double noise_sigma, Rng& rng, const TensorParams& background = {});

inline constexpr double kDefaultPhantomNoise = 0.02;

struct PhantomBundle {
  std::string name;
  std::vector<Streamline> streamlines;
  std::vector<Voxel> roi_a;  // around the first end
  std::vector<Voxel> roi_b;  // around the last end
};

struct PhantomDataset {
  DwiVolume volume;
  GradientTable gradients;
  BrainMask mask;
  std::vector<PhantomBundle> bundles;

  Tractogram ground_truth() const;  // all bundles concatenated in order
};

struct PhantomOptions {
  std::uint64_t seed = 1;
  double noise_sigma = kDefaultPhantomNoise;
  std::size_t streamlines_per_bundle = 1000;
  double step = 0.5;
  double axial_ramp = 0.3;
};

// 32^3 grid of 2 mm voxels; a straight bundle along x and a quarter-circle
// arc crossing it; 4 b0 volumes and 32 directions at b = 1000.
PhantomDataset make_crossing_phantom(const PhantomOptions& options = {});

// Writes dwi.vol, grad.txt, mask.vol, gt.trk, bundle_<name>.trk and rois.json.
void write_phantom(const PhantomDataset& ds, const std::filesystem::path& dir);

}  // namespace rnntrack

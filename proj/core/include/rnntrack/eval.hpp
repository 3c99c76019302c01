#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rnntrack/dwi.hpp"
#include "rnntrack/phantom.hpp"
#include "rnntrack/streamline.hpp"
#include "rnntrack/tracker.hpp"

namespace rnntrack {

struct GoldBundle {
  std::string name;
  Tractogram streamlines;
  std::vector<Voxel> roi_a;
  std::vector<Voxel> roi_b;
  std::vector<std::size_t> occupancy;  // sorted linear voxel indices
};

struct GoldStandard {
  Dims dims{0, 0, 0};
  VoxelSize voxel_size{1.0f, 1.0f, 1.0f};
  std::vector<GoldBundle> bundles;

  // Fills occupancy from the streamlines and checks ROIs. Throws InvalidData
  // on empty or overlapping ROIs of one bundle, or ROI voxels off grid.
  void finalize();

  static GoldStandard from_phantom(const PhantomDataset& ds);
  // Reads rois.json and the per-bundle tractograms it names.
  static GoldStandard load(const std::filesystem::path& dir);
};

enum class ConnectionKind { Valid, Invalid, NonConnecting };

struct ConnectionTag {
  ConnectionKind kind = ConnectionKind::NonConnecting;
  std::size_t bundle = 0;                         // Valid only
  std::pair<std::size_t, std::size_t> roi_pair{};  // Invalid only; ROI ids 2*bundle + end, first < second
};

struct ConnectionSummary {
  std::vector<ConnectionTag> tags;
  std::size_t valid = 0, invalid = 0, non_connecting = 0;
  double vc = 0.0, ic = 0.0, nc = 0.0;  // percentages, VC + IC + NC == 100 exactly
  bool empty = false;
};

// Endpoints are located by the voxel containing them.
ConnectionSummary classify_connections(const Tractogram& t, const GoldStandard& gs);

struct BundleDetection {
  std::size_t vb = 0;
  std::size_t ib = 0;
};

BundleDetection bundle_detection(const std::vector<ConnectionTag>& tags, const GoldStandard& gs);

struct BundleCoverage {
  std::string name;
  std::size_t valid_streamlines = 0;
  double ol = 0.0, orr = 0.0, f1 = 0.0;  // percentages
};

struct CoverageScores {
  std::vector<BundleCoverage> bundles;
  double ol = 0.0, orr = 0.0, f1 = 0.0;  // means over bundles
};

CoverageScores coverage_scores(const Tractogram& t, const std::vector<ConnectionTag>& tags, const GoldStandard& gs);

struct ScoreReport {
  std::size_t streamlines = 0;
  bool empty = false;
  std::size_t valid = 0, invalid = 0, non_connecting = 0;
  double vc = 0.0, ic = 0.0, nc = 0.0;
  std::size_t vb = 0, ib = 0;
  double ol = 0.0, orr = 0.0, f1 = 0.0;
  std::vector<BundleCoverage> bundles;

  std::string to_json() const;
  std::string to_table() const;
};

// Throws InvalidData when a point of `t` lies outside the gold-standard grid.
ScoreReport score(const Tractogram& t, const GoldStandard& gs);

}  // namespace rnntrack

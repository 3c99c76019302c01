#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rnntrack/dwi.hpp"
#include "rnntrack/model.hpp"
#include "rnntrack/rng.hpp"
#include "rnntrack/sphere.hpp"
#include "rnntrack/streamline.hpp"

namespace rnntrack {

enum class TrackMode { Deterministic, Probabilistic };

enum class TerminationReason { Eof, Entropy, Curvature, OutOfBounds, MaxSteps };

std::string_view to_string(TerminationReason r);
std::string_view to_string(TrackMode m);
TrackMode parse_track_mode(std::string_view s);

struct TrackConfig {
  double alpha = 0.5;  // voxels
  TrackMode mode = TrackMode::Deterministic;
  double entropy_a = 3.0;
  double entropy_b = 10.0;
  double entropy_c = 4.5;
  double max_angle_deg = 60.0;
  double min_length_mm = 20.0;
  double max_length_mm = 200.0;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void validate() const;
};

// a * exp(-t / b) + c
double entropy_threshold(const TrackConfig& tc, std::size_t t);

// Natural-log Shannon entropy with 0 log 0 = 0.
double entropy(const Cfodf& c);

using Voxel = std::array<std::size_t, 3>;

// n points, each uniform inside a uniformly chosen voxel of `voxels`.
std::vector<Vec3> seed_in_voxels(std::span<const Voxel> voxels, std::size_t n, std::uint64_t seed);

// Uniform over the interiors of the masked voxels. Throws InvalidData for an
// empty mask (unless n == 0).
std::vector<Vec3> seed_random(const BrainMask& mask, std::size_t n, std::uint64_t seed);

// Deterministic: argmax over every class including EoF, lowest index on ties.
// Probabilistic: one categorical draw over every class.
std::size_t pick_direction(const Cfodf& c, const DirectionSet& ds, TrackMode mode, Rng& rng);

struct TrackedStreamline {
  Streamline streamline;
  TerminationReason reason = TerminationReason::Eof;
};

// Propagates one streamline from `seed`. When `trace` is given it receives
// the Cfodf emitted at every visited point (one per point, plus the one
// that triggered termination when the step was not taken).
TrackedStreamline track_one(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                            const TrackConfig& tc, const Vec3& seed, Rng& rng, std::vector<Cfodf>* trace = nullptr);

struct TrackStats {
  std::size_t kept = 0;
  std::size_t discarded_short = 0;
  std::size_t discarded_long = 0;
  std::array<std::size_t, 5> reasons{};  // indexed by TerminationReason, over all streamlines

  std::size_t reason_count(TerminationReason r) const { return reasons[static_cast<std::size_t>(r)]; }
  std::string to_json() const;
};

struct TrackOutput {
  Tractogram tractogram;                  // kept streamlines, in seed order
  std::vector<TerminationReason> reasons; // one per kept streamline
  TrackStats stats;
};

// Tracks every seed (seed i draws from stream derive_seed(tc.seed, repetition, i))
// and keeps streamlines whose length in mm lies in [min_length_mm, max_length_mm].
TrackOutput track_all(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                      const TrackConfig& tc, std::span<const Vec3> seeds, std::uint64_t repetition = 0);

struct VisitationMap {
  Dims dims{0, 0, 0};
  std::vector<std::uint32_t> counts;
  std::size_t repetitions = 0;

  std::uint32_t at(std::size_t x, std::size_t y, std::size_t z) const { return counts[voxel_index(dims, x, y, z)]; }
  DwiVolume to_volume(VoxelSize voxel_size) const;
};

// Voxels containing any point of the polyline, sampling every segment at
// 0.2-voxel spacing (voxels clipped by a shorter chord may be missed).
// Independent of the streamline direction. Sorted by linear index, no
// duplicates.
std::vector<std::size_t> traversed_voxels(const Streamline& s, const Dims& dims);

// Runs track_all for repetitions 0..T-1 and counts, per voxel, the
// repetitions in which any kept streamline traversed it.
VisitationMap visitation_map(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                             const TrackConfig& tc, std::span<const Vec3> seeds, std::size_t repetitions);

struct FodfRecord {
  Cfodf cfodf;
  std::size_t count = 1;  // occurrences of the streamline among the samples
};

// sum_i (count_i / total) * cfodf_i, restricted to the direction classes and
// renormalized. Throws InvalidArgument on empty input or zero direction mass.
Eigen::VectorXd empirical_fodf(std::span<const FodfRecord> records);

}  // namespace rnntrack

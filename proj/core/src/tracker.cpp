#include "rnntrack/tracker.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rnntrack/error.hpp"
#include "rnntrack/parallel.hpp"

namespace rnntrack {

std::string_view to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::Eof: return "eof";
    case TerminationReason::Entropy: return "entropy";
    case TerminationReason::Curvature: return "curvature";
    case TerminationReason::OutOfBounds: return "oob";
    case TerminationReason::MaxSteps: return "max_steps";
  }
  return "unknown";
}

std::string_view to_string(TrackMode m) { return m == TrackMode::Deterministic ? "det" : "prob"; }

TrackMode parse_track_mode(std::string_view s) {
  if (s == "det" || s == "deterministic") return TrackMode::Deterministic;
  if (s == "prob" || s == "probabilistic") return TrackMode::Probabilistic;
  throw InvalidArgument("unknown tracking mode '" + std::string(s) + "'");
}

void TrackConfig::validate() const {
  if (!(alpha > 0.0)) throw InvalidArgument("TrackConfig: alpha must be > 0");
  if (!(entropy_a > 0.0 && entropy_b > 0.0 && entropy_c > 0.0))
    throw InvalidArgument("TrackConfig: entropy a, b, c must be > 0");
  if (!(max_angle_deg > 0.0 && max_angle_deg < 180.0)) throw InvalidArgument("TrackConfig: max_angle must be in (0, 180)");
  if (!(min_length_mm >= 0.0 && max_length_mm >= min_length_mm))
    throw InvalidArgument("TrackConfig: need 0 <= min_length_mm <= max_length_mm");
}

double entropy_threshold(const TrackConfig& tc, std::size_t t) {
  return tc.entropy_a * std::exp(-static_cast<double>(t) / tc.entropy_b) + tc.entropy_c;
}

double entropy(const Cfodf& c) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (c[i] > 0.0) h -= c[i] * std::log(c[i]);
  return h;
}

std::vector<Vec3> seed_in_voxels(std::span<const Voxel> voxels, std::size_t n, std::uint64_t seed) {
  std::vector<Vec3> out;
  if (n == 0) return out;
  if (voxels.empty()) throw InvalidData("seeding: no voxels to seed in");
  Rng rng(seed);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Voxel& v = voxels[uniform_index(rng, voxels.size())];
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = static_cast<double>(v[a]) + uniform01(rng);
    out.push_back(p);
  }
  return out;
}

std::vector<Vec3> seed_random(const BrainMask& mask, std::size_t n, std::uint64_t seed) {
  std::vector<Voxel> voxels;
  for (std::size_t z = 0; z < mask.dims[2]; ++z)
    for (std::size_t y = 0; y < mask.dims[1]; ++y)
      for (std::size_t x = 0; x < mask.dims[0]; ++x)
        if (mask.at(x, y, z)) voxels.push_back({x, y, z});
  if (voxels.empty() && n > 0) throw InvalidData("seed_random: empty mask");
  return seed_in_voxels(voxels, n, seed);
}

std::size_t pick_direction(const Cfodf& c, const DirectionSet& ds, TrackMode mode, Rng& rng) {
  if (static_cast<std::size_t>(c.size()) != ds.num_classes())
    throw InvalidArgument("pick_direction: Cfodf size does not match direction set");
  if (mode == TrackMode::Deterministic) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < c.size(); ++i)
      if (c[i] > c[best]) best = i;
    return static_cast<std::size_t>(best);
  }
  const double u = uniform01(rng) * c.sum();
  double acc = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (c[i] <= 0.0) continue;
    acc += c[i];
    last_positive = i;
    if (u < acc) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(last_positive);
}

TrackedStreamline track_one(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                            const TrackConfig& tc, const Vec3& seed, Rng& rng, std::vector<Cfodf>* trace) {
  if (!vol.contains(seed)) throw InvalidArgument("track_one: seed outside volume");
  if (model.num_classes() != ds.num_classes()) throw InvalidArgument("track_one: model classes do not match direction set");
  if (model.input_size() != vol.channels()) throw InvalidArgument("track_one: model input size does not match volume");

  const double cos_max = std::cos(tc.max_angle_deg * std::numbers::pi / 180.0);
  TrackedStreamline out;
  auto& pts = out.streamline.points;
  pts.push_back(seed);
  HiddenState state = model.initial_state();
  Eigen::VectorXd x(static_cast<Eigen::Index>(vol.channels()));
  Vec3 prev = Vec3::Zero();
  bool have_prev = false;
  for (std::size_t t = 0;; ++t) {
    if (t >= tc.max_steps) {
      out.reason = TerminationReason::MaxSteps;
      break;
    }
    const Vec3 p = pts.back();
    vol.sample_at(p, x);
    Cfodf c = model.step(x, state);
    const double h = entropy(c);
    const std::size_t k = pick_direction(c, ds, tc.mode, rng);
    if (trace) trace->push_back(std::move(c));
    if (h > entropy_threshold(tc, t)) {
      out.reason = TerminationReason::Entropy;
      break;
    }
    if (k == ds.eof_class()) {
      out.reason = TerminationReason::Eof;
      break;
    }
    Vec3 d = ds[k];
    if (ds.hemisphere() && have_prev && d.dot(prev) < 0.0) d = -d;
    if (have_prev && d.dot(prev) < cos_max) {
      out.reason = TerminationReason::Curvature;
      break;
    }
    const Vec3 q = p + tc.alpha * d;
    if (!vol.contains(q)) {
      out.reason = TerminationReason::OutOfBounds;
      break;
    }
    pts.push_back(q);
    prev = d;
    have_prev = true;
  }
  return out;
}

std::string TrackStats::to_json() const {
  nlohmann::ordered_json j;
  j["kept"] = kept;
  j["discarded_short"] = discarded_short;
  j["discarded_long"] = discarded_long;
  nlohmann::ordered_json r;
  for (auto reason : {TerminationReason::Eof, TerminationReason::Entropy, TerminationReason::Curvature,
                      TerminationReason::OutOfBounds, TerminationReason::MaxSteps})
    r[std::string(to_string(reason))] = reason_count(reason);
  j["reasons"] = r;
  return j.dump();
}

TrackOutput track_all(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                      const TrackConfig& tc, std::span<const Vec3> seeds, std::uint64_t repetition) {
  tc.validate();
  std::vector<TrackedStreamline> results(seeds.size());
  parallel_for(seeds.size(), tc.threads, [&](std::size_t i) {
    Rng rng(derive_seed(tc.seed, repetition, i));
    results[i] = track_one(model, vol, ds, tc, seeds[i], rng);
  });
  TrackOutput out;
  for (auto& r : results) {
    ++out.stats.reasons[static_cast<std::size_t>(r.reason)];
    const double len = r.streamline.length_mm(vol.voxel_size());
    if (len < tc.min_length_mm) {
      ++out.stats.discarded_short;
    } else if (len > tc.max_length_mm) {
      ++out.stats.discarded_long;
    } else {
      ++out.stats.kept;
      out.tractogram.streamlines.push_back(std::move(r.streamline));
      out.reasons.push_back(r.reason);
    }
  }
  return out;
}

std::vector<std::size_t> traversed_voxels(const Streamline& s, const Dims& dims) {
  std::vector<std::size_t> out;
  const auto add = [&](const Vec3& p) {
    if (!inside(dims, p)) return;
    out.push_back(voxel_index(dims, static_cast<std::size_t>(p.x()), static_cast<std::size_t>(p.y()),
                              static_cast<std::size_t>(p.z())));
  };
  for (const Vec3& p : s.points) add(p);
  for (std::size_t j = 1; j < s.points.size(); ++j) {
    // Canonical endpoint order makes the result independent of direction.
    const bool swap = std::lexicographical_compare(s.points[j].data(), s.points[j].data() + 3,
                                                   s.points[j - 1].data(), s.points[j - 1].data() + 3);
    const Vec3& a = swap ? s.points[j] : s.points[j - 1];
    const Vec3& b = swap ? s.points[j - 1] : s.points[j];
    const auto n = static_cast<std::size_t>(std::ceil((b - a).norm() / 0.2));
    for (std::size_t k = 1; k < n; ++k) add(a + (b - a) * (static_cast<double>(k) / static_cast<double>(n)));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

DwiVolume VisitationMap::to_volume(VoxelSize voxel_size) const {
  DwiVolume v(dims, voxel_size, 1);
  for (std::size_t i = 0; i < counts.size(); ++i) v.data[i] = static_cast<float>(counts[i]);
  return v;
}

VisitationMap visitation_map(const SequenceModel& model, const PreprocessedDwi& vol, const DirectionSet& ds,
                             const TrackConfig& tc, std::span<const Vec3> seeds, std::size_t repetitions) {
  if (tc.mode != TrackMode::Probabilistic) throw InvalidArgument("visitation_map requires probabilistic mode");
  VisitationMap map;
  map.dims = vol.dims();
  map.counts.assign(voxel_count(map.dims), 0);
  map.repetitions = repetitions;
  std::vector<std::uint8_t> seen(map.counts.size());
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    std::fill(seen.begin(), seen.end(), 0);
    const TrackOutput out = track_all(model, vol, ds, tc, seeds, rep);
    for (const auto& s : out.tractogram.streamlines)
      for (std::size_t v : traversed_voxels(s, map.dims)) seen[v] = 1;
    for (std::size_t v = 0; v < seen.size(); ++v) map.counts[v] += seen[v];
  }
  return map;
}

Eigen::VectorXd empirical_fodf(std::span<const FodfRecord> records) {
  if (records.empty()) throw InvalidArgument("empirical_fodf: no records");
  const Eigen::Index c = records.front().cfodf.size();
  if (c < 2) throw InvalidArgument("empirical_fodf: Cfodf must have at least two classes");
  std::size_t total = 0;
  for (const auto& r : records) {
    if (r.cfodf.size() != c) throw InvalidArgument("empirical_fodf: inconsistent Cfodf sizes");
    total += r.count;
  }
  if (total == 0) throw InvalidArgument("empirical_fodf: zero total weight");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(c - 1);
  for (const auto& r : records)
    acc += (static_cast<double>(r.count) / static_cast<double>(total)) * r.cfodf.head(c - 1);
  const double mass = acc.sum();
  if (!(mass > 0.0)) throw InvalidArgument("empirical_fodf: no mass on direction classes");
  return acc / mass;
}

}  // namespace rnntrack

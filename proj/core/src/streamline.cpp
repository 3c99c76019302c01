#include "rnntrack/streamline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rnntrack/binary_io.hpp"
#include "rnntrack/error.hpp"
#include "rnntrack/rng.hpp"

namespace rnntrack {

namespace {
constexpr std::string_view kTractMagic = "TRACTS01";
}

double Streamline::arc_length() const {
  double len = 0.0;
  for (std::size_t j = 1; j < points.size(); ++j) len += (points[j] - points[j - 1]).norm();
  return len;
}

double Streamline::length_mm(const VoxelSize& vs) const {
  const Vec3 scale(vs[0], vs[1], vs[2]);
  double len = 0.0;
  for (std::size_t j = 1; j < points.size(); ++j) len += (points[j] - points[j - 1]).cwiseProduct(scale).norm();
  return len;
}

Streamline resample_equidistant(const Streamline& s, double step) {
  if (!(step > 0.0)) throw InvalidArgument("resample_equidistant: step must be positive");
  const double total = s.arc_length();
  if (s.size() < 2 || total < step) throw TooShort("resample_equidistant: path shorter than one step");

  // Remainders below this fraction of a step are treated as rounding error.
  constexpr double kMargin = 1e-9;
  Streamline out;
  out.points.push_back(s.points.front());
  double target = step;
  double walked = 0.0;  // arc length at the start of the current segment
  for (std::size_t j = 1; j < s.size(); ++j) {
    const Vec3& a = s.points[j - 1];
    const Vec3& b = s.points[j];
    const double seg = (b - a).norm();
    while (seg > 0.0 && target <= walked + seg * (1.0 + 1e-15) && target <= total - kMargin * step) {
      const double t = std::clamp((target - walked) / seg, 0.0, 1.0);
      out.points.push_back(a + t * (b - a));
      target += step;
    }
    walked += seg;
  }
  out.points.push_back(s.points.back());
  return out;
}

std::vector<std::size_t> extract_labels(const Streamline& s, const DirectionSet& ds) {
  if (s.size() < 2) throw InvalidStreamline("extract_labels: streamline needs at least 2 points");
  std::vector<std::size_t> labels(s.size());
  for (std::size_t j = 0; j + 1 < s.size(); ++j) {
    const Vec3 d = s.points[j + 1] - s.points[j];
    if (!(d.norm() > 0.0))
      throw InvalidStreamline("extract_labels: coincident points at " + std::to_string(j) + " and " +
                              std::to_string(j + 1));
    labels[j] = classify_direction(d, ds);
  }
  labels.back() = ds.eof_class();
  return labels;
}

Streamline reversed(const Streamline& s) {
  Streamline r{s.points};
  std::reverse(r.points.begin(), r.points.end());
  return r;
}

Tractogram augment_reverse(const Tractogram& t) {
  Tractogram out;
  out.streamlines.reserve(2 * t.size());
  out.streamlines = t.streamlines;
  for (const auto& s : t.streamlines) out.streamlines.push_back(reversed(s));
  return out;
}

TrainingSequence make_sequence(const Streamline& s, const PreprocessedDwi& vol, const DirectionSet& ds) {
  TrainingSequence seq;
  seq.labels = extract_labels(s, ds);
  seq.inputs.resize(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(vol.channels()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(vol.channels()));
  for (std::size_t j = 0; j < s.size(); ++j) {
    vol.sample_at(s.points[j], row);
    seq.inputs.row(static_cast<Eigen::Index>(j)) = row.transpose();
  }
  return seq;
}

Dataset build_dataset(const Tractogram& t, const PreprocessedDwi& vol, const DirectionSet& ds, double split,
                      std::uint64_t seed) {
  if (!(split > 0.0 && split < 1.0)) throw InvalidArgument("build_dataset: split must be in (0, 1)");
  Dataset out;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t.streamlines[i];
    bool ok = s.size() >= 2 && std::all_of(s.points.begin(), s.points.end(), [&](const Vec3& p) { return vol.contains(p); });
    for (std::size_t j = 1; ok && j < s.size(); ++j) ok = (s.points[j] - s.points[j - 1]).norm() > 0.0;
    if (ok)
      kept.push_back(i);
    else
      ++out.dropped;
  }
  Rng rng(seed);
  shuffle(kept, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(split * static_cast<double>(kept.size())));
  out.train_streamlines = n_train;
  Tractogram train_part;
  for (std::size_t i = 0; i < n_train; ++i) train_part.streamlines.push_back(t.streamlines[kept[i]]);
  for (const auto& s : augment_reverse(train_part).streamlines) out.train.push_back(make_sequence(s, vol, ds));
  for (std::size_t i = n_train; i < kept.size(); ++i) out.valid.push_back(make_sequence(t.streamlines[kept[i]], vol, ds));
  return out;
}

std::vector<char> encode_tractogram(const Tractogram& t) {
  io::Writer w;
  w.bytes(kTractMagic);
  w.put(static_cast<std::uint32_t>(t.size()));
  for (const auto& s : t.streamlines) {
    w.put(static_cast<std::uint32_t>(s.size()));
    for (const auto& p : s.points) {
      w.put(static_cast<float>(p.x()));
      w.put(static_cast<float>(p.y()));
      w.put(static_cast<float>(p.z()));
    }
  }
  return w.data();
}

Tractogram decode_tractogram(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic(kTractMagic, "tractogram");
  const auto n = r.get<std::uint32_t>("tractogram header");
  Tractogram t;
  t.streamlines.reserve(std::min<std::uint64_t>(n, r.remaining() / 4));
  for (std::uint32_t i = 0; i < n; ++i) {
    if (r.remaining() < 4)
      throw FormatError("tractogram: header declares " + std::to_string(n) + " streamlines, data ends at streamline " +
                            std::to_string(i),
                        r.offset());
    const auto at = r.offset();
    const auto count = r.get<std::uint32_t>("tractogram streamline length");
    if (r.remaining() < static_cast<std::uint64_t>(count) * 12)
      throw FormatError("tractogram: streamline " + std::to_string(i) + " declares " + std::to_string(count) +
                            " points but only " + std::to_string(r.remaining() / 12) + " remain",
                        at);
    Streamline s;
    s.points.resize(count);
    for (auto& p : s.points) {
      const float x = r.get<float>("point"), y = r.get<float>("point"), z = r.get<float>("point");
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw FormatError("tractogram: non-finite coordinate in streamline " + std::to_string(i), r.offset() - 12);
      p = Vec3(x, y, z);
    }
    t.streamlines.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError("tractogram: trailing bytes after last streamline", r.offset());
  return t;
}

Tractogram load_tractogram(const std::filesystem::path& path) { return decode_tractogram(io::read_file(path)); }

void save_tractogram(const Tractogram& t, const std::filesystem::path& path) {
  io::write_file(path, encode_tractogram(t));
}

}  // namespace rnntrack

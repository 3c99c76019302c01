#include "rnntrack/dwi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rnntrack/binary_io.hpp"
#include "rnntrack/error.hpp"

namespace rnntrack {

namespace {
constexpr std::string_view kVolumeMagic = "DWIVOL01";
}

bool inside(const Dims& d, const Vec3& p) {
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= 0.0) || !(p[a] < static_cast<double>(d[static_cast<std::size_t>(a)]))) return false;
  }
  return true;
}

std::vector<std::size_t> GradientTable::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (bvals[i] <= kB0Threshold) out.push_back(i);
  return out;
}

std::vector<std::size_t> GradientTable::dwi_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (bvals[i] > kB0Threshold) out.push_back(i);
  return out;
}

void GradientTable::validate() const {
  if (bvecs.size() != bvals.size()) throw InvalidData("gradient table: bvec/bval count mismatch");
  if (b0_indices().empty()) throw InvalidData("gradient table: no b0 entry");
  for (std::size_t i : dwi_indices()) {
    if (std::abs(bvecs[i].norm() - 1.0) > 1e-6)
      throw InvalidData("gradient table: bvec " + std::to_string(i) + " is not unit norm");
  }
  for (double b : bvals)
    if (!(b >= 0.0)) throw InvalidData("gradient table: negative b-value");
}

GradientTable GradientTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  GradientTable gt;
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t offset = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double x, y, z, b;
    if (!(ls >> x >> y >> z >> b))
      throw FormatError("gradient table: line " + std::to_string(lineno) + " needs 'bx by bz bval'", start);
    gt.bvecs.emplace_back(x, y, z);
    gt.bvals.push_back(b);
  }
  gt.validate();
  return gt;
}

void GradientTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < size(); ++i)
    os << bvecs[i].x() << ' ' << bvecs[i].y() << ' ' << bvecs[i].z() << ' ' << bvals[i] << '\n';
}

std::size_t BrainMask::count() const {
  return static_cast<std::size_t>(std::count_if(occupied.begin(), occupied.end(), [](auto v) { return v != 0; }));
}

PreprocessedDwi::PreprocessedDwi(Dims dims, VoxelSize voxel_size, DirectionSet targets,
                                 std::vector<double> data, Eigen::VectorXd channel_means)
    : dims_(dims),
      voxel_size_(voxel_size),
      targets_(std::move(targets)),
      data_(std::move(data)),
      means_(std::move(channel_means)) {
  if (data_.size() != voxel_count(dims_) * targets_.size())
    throw InvalidArgument("preprocessed volume: data length does not match dims x channels");
}

Eigen::VectorXd PreprocessedDwi::sample_at(const Vec3& p) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(channels()));
  sample_at(p, out);
  return out;
}

void PreprocessedDwi::sample_at(const Vec3& p, Eigen::Ref<Eigen::VectorXd> out) const {
  if (!contains(p)) {
    std::ostringstream os;
    os << "sample_at: point (" << p.x() << ", " << p.y() << ", " << p.z() << ") outside volume";
    throw OutOfBounds(os.str());
  }
  std::array<std::size_t, 3> lo{}, hi{};
  std::array<double, 3> frac{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double maxc = static_cast<double>(dims_[a] - 1);
    const double u = std::clamp(p[static_cast<Eigen::Index>(a)] - 0.5, 0.0, maxc);
    const double f = std::floor(u);
    lo[a] = static_cast<std::size_t>(f);
    hi[a] = std::min(lo[a] + 1, dims_[a] - 1);
    frac[a] = u - f;
  }
  const std::size_t k = channels();
  out.setZero();
  for (int corner = 0; corner < 8; ++corner) {
    const bool bx = corner & 1, by = corner & 2, bz = corner & 4;
    const double w = (bx ? frac[0] : 1.0 - frac[0]) * (by ? frac[1] : 1.0 - frac[1]) *
                     (bz ? frac[2] : 1.0 - frac[2]);
    if (w == 0.0) continue;
    const double* v = data_.data() + voxel_index(dims_, bx ? hi[0] : lo[0], by ? hi[1] : lo[1], bz ? hi[2] : lo[2]) * k;
    for (std::size_t c = 0; c < k; ++c) out[static_cast<Eigen::Index>(c)] += w * v[c];
  }
}

PreprocessedDwi preprocess(const DwiVolume& raw, const GradientTable& gradients, const DirectionSet& targets,
                           const BrainMask* mask, const PreprocessOptions& options) {
  gradients.validate();
  if (!targets.hemisphere()) throw InvalidArgument("preprocess: target direction set must be a hemisphere set");
  if (raw.channels != gradients.size())
    throw InvalidData("preprocess: volume has " + std::to_string(raw.channels) + " channels, gradient table has " +
                      std::to_string(gradients.size()) + " entries");
  if (mask && mask->dims != raw.dims) throw InvalidData("preprocess: mask dims do not match volume");

  const auto b0 = gradients.b0_indices();
  const auto dw = gradients.dwi_indices();
  if (dw.empty()) throw InvalidData("preprocess: no diffusion-weighted channels");
  std::vector<Vec3> src;
  src.reserve(dw.size());
  for (std::size_t i : dw) src.push_back(gradients.bvecs[i].normalized());
  const ShResampler resampler(src, targets.directions(), options.sh_order, options.sh_regularization);
  const Eigen::MatrixXd& op = resampler.operator_matrix();

  const std::size_t nvox = voxel_count(raw.dims);
  const std::size_t k = targets.size();
  std::vector<double> out(nvox * k);
  Eigen::VectorXd signal(static_cast<Eigen::Index>(dw.size()));
  for (std::size_t v = 0; v < nvox; ++v) {
    const float* s = raw.data.data() + v * raw.channels;
    double b0_mean = 0.0;
    for (std::size_t i : b0) b0_mean += s[i];
    b0_mean /= static_cast<double>(b0.size());
    const double denom = std::max(b0_mean, options.b0_floor);
    for (std::size_t j = 0; j < dw.size(); ++j) signal[static_cast<Eigen::Index>(j)] = s[dw[j]] / denom;
    Eigen::Map<Eigen::VectorXd>(out.data() + v * k, static_cast<Eigen::Index>(k)).noalias() = op * signal;
  }

  Eigen::VectorXd means = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  if (options.center) {
    std::size_t counted = 0;
    for (std::size_t v = 0; v < nvox; ++v) {
      if (mask && mask->occupied[v] == 0) continue;
      means += Eigen::Map<const Eigen::VectorXd>(out.data() + v * k, static_cast<Eigen::Index>(k));
      ++counted;
    }
    if (counted == 0) throw InvalidData("preprocess: mask selects no voxels");
    means /= static_cast<double>(counted);
    for (std::size_t v = 0; v < nvox; ++v)
      Eigen::Map<Eigen::VectorXd>(out.data() + v * k, static_cast<Eigen::Index>(k)) -= means;
  }
  for (double x : out)
    if (!std::isfinite(x)) throw NumericOverflow("preprocess: non-finite resampled value");
  return PreprocessedDwi(raw.dims, raw.voxel_size, targets, std::move(out), std::move(means));
}

std::vector<char> encode_volume(const DwiVolume& volume) {
  if (volume.data.size() != voxel_count(volume.dims) * volume.channels)
    throw InvalidArgument("save_volume: data length does not match header");
  io::Writer w;
  w.bytes(kVolumeMagic);
  for (std::size_t d : volume.dims) w.put(static_cast<std::uint32_t>(d));
  w.put(static_cast<std::uint32_t>(volume.channels));
  for (float s : volume.voxel_size) w.put(s);
  for (float x : volume.data) w.put(x);
  return w.data();
}

DwiVolume decode_volume(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic(kVolumeMagic, "volume");
  DwiVolume vol;
  for (auto& d : vol.dims) {
    const auto at = r.offset();
    d = r.get<std::uint32_t>("volume header");
    if (d == 0) throw FormatError("volume: zero dimension in header", at);
  }
  {
    const auto at = r.offset();
    vol.channels = r.get<std::uint32_t>("volume header");
    if (vol.channels == 0) throw FormatError("volume: zero channel count in header", at);
  }
  for (auto& s : vol.voxel_size) {
    const auto at = r.offset();
    s = r.get<float>("volume header");
    if (!(s > 0.0f) || !std::isfinite(s)) throw FormatError("volume: invalid voxel size", at);
  }
  const std::uint64_t count = voxel_count(vol.dims) * vol.channels;
  const std::uint64_t expected = count * 4;
  if (r.remaining() < expected)
    throw FormatError("volume: payload truncated, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(r.remaining()),
                      r.offset());
  if (r.remaining() > expected)
    throw FormatError("volume: " + std::to_string(r.remaining() - expected) + " trailing bytes", r.offset() + expected);
  vol.data.resize(count);
  for (auto& x : vol.data) {
    const auto at = r.offset();
    x = r.get<float>("volume payload");
    if (!std::isfinite(x)) throw FormatError("volume: non-finite sample", at);
  }
  return vol;
}

DwiVolume load_volume(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_volume(bytes);
}

void save_volume(const DwiVolume& volume, const std::filesystem::path& path) {
  io::write_file(path, encode_volume(volume));
}

BrainMask load_mask(const std::filesystem::path& path) {
  const DwiVolume vol = load_volume(path);
  if (vol.channels != 1) throw InvalidData("mask: expected 1 channel, got " + std::to_string(vol.channels));
  BrainMask mask(vol.dims);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (vol.data[i] != 0.0f && vol.data[i] != 1.0f) throw InvalidData("mask: values must be 0 or 1");
    mask.occupied[i] = vol.data[i] != 0.0f ? 1 : 0;
  }
  return mask;
}

void save_mask(const BrainMask& mask, const std::filesystem::path& path, VoxelSize voxel_size) {
  DwiVolume vol(mask.dims, voxel_size, 1);
  for (std::size_t i = 0; i < mask.occupied.size(); ++i) vol.data[i] = mask.occupied[i] ? 1.0f : 0.0f;
  save_volume(vol, path);
}

}  // namespace rnntrack

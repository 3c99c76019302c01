#include <doctest.h>

#include <cmath>
#include <cstring>

#include "rnntrack/binary_io.hpp"
#include "rnntrack/dwi.hpp"
#include "rnntrack/error.hpp"
#include "test_util.hpp"

using namespace rnntrack;

namespace {

GradientTable table_on(const DirectionSet& dirs, std::size_t n_b0, double bval) {
  GradientTable gt;
  for (std::size_t i = 0; i < n_b0; ++i) {
    gt.bvecs.push_back(Vec3::Zero());
    gt.bvals.push_back(0.0);
  }
  for (const Vec3& d : dirs.directions()) {
    gt.bvecs.push_back(d);
    gt.bvals.push_back(bval);
  }
  return gt;
}

DwiVolume random_volume(Dims d, std::size_t c, std::uint64_t seed) {
  DwiVolume v(d, {1.5f, 2.0f, 2.5f}, c);
  Rng rng(seed);
  for (float& x : v.data) x = static_cast<float>(uniform(rng, -3.0, 3.0));
  return v;
}

PreprocessedDwi random_preprocessed(Dims d, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> data(voxel_count(d) * k);
  for (double& x : data) x = uniform(rng, -1.0, 1.0);
  return PreprocessedDwi(d, {2, 2, 2}, generate_directions(k, true), std::move(data), Eigen::VectorXd::Zero(k));
}

// Independent scalar trilinear formula: weights from distances to the
// clamped neighbouring centers.
double scalar_trilinear(const PreprocessedDwi& vol, const Vec3& p, std::size_t c) {
  const Dims& d = vol.dims();
  int i0[3], i1[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    double u = p[a] - 0.5;
    if (u < 0) u = 0;
    if (u > static_cast<double>(d[a] - 1)) u = static_cast<double>(d[a] - 1);
    i0[a] = static_cast<int>(u);
    if (i0[a] > static_cast<int>(d[a]) - 1) i0[a] = static_cast<int>(d[a]) - 1;
    i1[a] = i0[a] + 1 < static_cast<int>(d[a]) ? i0[a] + 1 : i0[a];
    t[a] = u - i0[a];
  }
  auto v = [&](int x, int y, int z) { return vol.value(x, y, z, c); };
  const double c00 = v(i0[0], i0[1], i0[2]) * (1 - t[0]) + v(i1[0], i0[1], i0[2]) * t[0];
  const double c10 = v(i0[0], i1[1], i0[2]) * (1 - t[0]) + v(i1[0], i1[1], i0[2]) * t[0];
  const double c01 = v(i0[0], i0[1], i1[2]) * (1 - t[0]) + v(i1[0], i0[1], i1[2]) * t[0];
  const double c11 = v(i0[0], i1[1], i1[2]) * (1 - t[0]) + v(i1[0], i1[1], i1[2]) * t[0];
  const double c0 = c00 * (1 - t[1]) + c10 * t[1];
  const double c1 = c01 * (1 - t[1]) + c11 * t[1];
  return c0 * (1 - t[2]) + c1 * t[2];
}

}  // namespace

TEST_CASE("GradientTable validation and IO") {
  const DirectionSet dirs = generate_directions(12, true);
  GradientTable gt = table_on(dirs, 2, 1000);
  CHECK_NOTHROW(gt.validate());
  CHECK(gt.b0_indices() == std::vector<std::size_t>{0, 1});
  CHECK(gt.dwi_indices().size() == 12);

  testutil::TempDir dir("grad");
  gt.save(dir / "g.txt");
  const GradientTable back = GradientTable::load(dir / "g.txt");
  REQUIRE(back.size() == gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK((back.bvecs[i] - gt.bvecs[i]).norm() < 1e-12);
    CHECK(back.bvals[i] == gt.bvals[i]);
  }

  GradientTable no_b0 = table_on(dirs, 0, 1000);
  CHECK_THROWS_AS(no_b0.validate(), InvalidData);
  GradientTable mismatch = gt;
  mismatch.bvals.pop_back();
  CHECK_THROWS_AS(mismatch.validate(), InvalidData);
  GradientTable nonunit = gt;
  nonunit.bvecs[5] *= 1.1;
  CHECK_THROWS_AS(nonunit.validate(), InvalidData);
}

TEST_CASE("volume round trip is bit exact") {
  const DwiVolume v = random_volume({4, 3, 5}, 7, 1);
  testutil::TempDir dir("vol");
  save_volume(v, dir / "v.vol");
  const DwiVolume back = load_volume(dir / "v.vol");
  CHECK(back == v);
  CHECK(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4) == 0);
  const auto bytes = testutil::read_bytes(dir / "v.vol");
  CHECK(bytes.size() == 8 + 16 + 12 + v.data.size() * 4);
  CHECK(std::string(bytes.data(), 8) == "DWIVOL01");
}

TEST_CASE("volume decoding errors") {
  const DwiVolume v = random_volume({2, 2, 2}, 3, 2);
  const std::vector<char> good = encode_volume(v);
  SUBCASE("bad magic") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_volume(b), FormatError);
  }
  SUBCASE("zero dims") {
    auto b = good;
    std::memset(b.data() + 8, 0, 4);
    try {
      decode_volume(b);
      FAIL("expected error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 8);
    }
  }
  SUBCASE("truncated payload names lengths") {
    std::vector<char> b(good.begin(), good.end() - 5);
    try {
      decode_volume(b);
      FAIL("expected error");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(std::to_string(2 * 2 * 2 * 3 * 4)) != std::string::npos);
      CHECK(msg.find(std::to_string(2 * 2 * 2 * 3 * 4 - 5)) != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    std::vector<char> b(good.begin(), good.begin() + 14);
    CHECK_THROWS_AS(decode_volume(b), FormatError);
  }
  SUBCASE("trailing bytes") {
    auto b = good;
    b.push_back(0);
    CHECK_THROWS_AS(decode_volume(b), FormatError);
  }
  SUBCASE("non-finite value") {
    auto b = good;
    const float nan = std::nanf("");
    std::memcpy(b.data() + 36, &nan, 4);
    CHECK_THROWS_AS(decode_volume(b), FormatError);
  }
}

TEST_CASE("mask IO") {
  BrainMask m({3, 4, 2});
  m.occupied[3] = 1;
  m.occupied[10] = 1;
  testutil::TempDir dir("mask");
  save_mask(m, dir / "m.vol");
  const BrainMask back = load_mask(dir / "m.vol");
  CHECK(back == m);
  CHECK(back.count() == 2);
  DwiVolume bad({2, 2, 2}, {1, 1, 1}, 1);
  bad.data[0] = 0.5f;
  save_volume(bad, dir / "bad.vol");
  CHECK_THROWS(load_mask(dir / "bad.vol"));
  save_volume(random_volume({2, 2, 2}, 2, 3), dir / "two.vol");
  CHECK_THROWS(load_mask(dir / "two.vol"));
}

TEST_CASE("sample_at") {
  const PreprocessedDwi vol = random_preprocessed({5, 4, 6}, 10, 4);
  SUBCASE("voxel centers are exact") {
    for (std::size_t z = 0; z < 6; ++z)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          const Eigen::VectorXd s = vol.sample_at(Vec3(x + 0.5, y + 0.5, z + 0.5));
          for (std::size_t c = 0; c < 10; ++c) CHECK(s[c] == vol.value(x, y, z, c));
        }
  }
  SUBCASE("midpoint between two voxels") {
    std::vector<double> data(voxel_count({2, 1, 1}) * 3, 0.0);
    data[0 * 3 + 1] = 2.0;
    data[1 * 3 + 1] = 5.0;
    const PreprocessedDwi two({2, 1, 1}, {1, 1, 1}, generate_directions(3, true), data, Eigen::VectorXd::Zero(3));
    const Eigen::VectorXd s = two.sample_at(Vec3(1.0, 0.5, 0.5));
    CHECK(s[1] == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(s[0] == 0.0);
  }
  SUBCASE("matches an independent trilinear formula") {
    Rng rng(8);
    for (int i = 0; i < 500; ++i) {
      const Vec3 p(uniform(rng, 0, 5), uniform(rng, 0, 4), uniform(rng, 0, 6));
      const Eigen::VectorXd s = vol.sample_at(p);
      for (std::size_t c = 0; c < 10; ++c) CHECK(std::abs(s[c] - scalar_trilinear(vol, p, c)) < 1e-12);
    }
  }
  SUBCASE("continuity") {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p(uniform(rng, 0.01, 4.99), uniform(rng, 0.01, 3.99), uniform(rng, 0.01, 5.99));
      const Vec3 dp = testutil::random_unit(rng) * 1e-6;
      const Eigen::VectorXd a = vol.sample_at(p), b = vol.sample_at(p + dp);
      for (std::size_t c = 0; c < 10; ++c) CHECK(std::abs(a[c] - b[c]) <= 1e-4 * std::max(1.0, std::abs(a[c])));
    }
  }
  SUBCASE("out of bounds") {
    CHECK_THROWS_AS(vol.sample_at(Vec3(-0.01, 1, 1)), OutOfBounds);
    CHECK_THROWS_AS(vol.sample_at(Vec3(5.0, 1, 1)), OutOfBounds);
    CHECK_THROWS_AS(vol.sample_at(Vec3(1, 1, 6.5)), OutOfBounds);
    CHECK_NOTHROW(vol.sample_at(Vec3(0.0, 0.0, 0.0)));
    CHECK_NOTHROW(vol.sample_at(Vec3(4.999, 3.999, 5.999)));
  }
}

TEST_CASE("preprocess") {
  const DirectionSet targets = generate_directions(100, true);
  SUBCASE("identity resampling with unit b0") {
    const GradientTable gt = table_on(targets, 1, 1000);
    DwiVolume raw({3, 2, 2}, {2, 2, 2}, gt.size());
    Rng rng(10);
    // Smooth order-4 signals so the order-8 fit reproduces them at the nodes.
    const ShBasis b4(4);
    const Eigen::MatrixXd basis = b4.matrix(targets.directions());
    for (std::size_t v = 0; v < voxel_count(raw.dims); ++v) {
      Eigen::VectorXd coef(15);
      for (Eigen::Index i = 0; i < 15; ++i) coef[i] = standard_normal(rng);
      const Eigen::VectorXd sig = basis * coef;
      raw.data[v * gt.size()] = 1.0f;
      for (std::size_t k = 0; k < 100; ++k) raw.data[v * gt.size() + 1 + k] = static_cast<float>(sig[k]);
    }
    PreprocessOptions opts;
    opts.sh_regularization = 0.0;
    const PreprocessedDwi pre = preprocess(raw, gt, targets, nullptr, opts);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(100);
    for (std::size_t v = 0; v < voxel_count(raw.dims); ++v)
      for (std::size_t k = 0; k < 100; ++k) mean[k] += raw.data[v * gt.size() + 1 + k];
    mean /= static_cast<double>(voxel_count(raw.dims));
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 3; ++x)
          for (std::size_t k = 0; k < 100; ++k) {
            const double expect = raw.at(x, y, z, 1 + k) - mean[k];
            CHECK(std::abs(pre.value(x, y, z, k) - expect) < 1e-6);
          }
    CHECK((pre.channel_means() - mean).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("isotropic signal gives equal channels before centering") {
    const GradientTable gt = table_on(generate_directions(32, true), 3, 1000);
    DwiVolume raw({2, 2, 1}, {2, 2, 2}, gt.size());
    for (std::size_t v = 0; v < 4; ++v) {
      const double b0 = 0.5 + v;
      for (std::size_t c = 0; c < gt.size(); ++c)
        raw.data[v * gt.size() + c] = static_cast<float>(gt.bvals[c] > 50 ? b0 * std::exp(-1000 * 0.7e-3) : b0);
    }
    PreprocessOptions opts;
    opts.center = false;
    const PreprocessedDwi pre = preprocess(raw, gt, targets, nullptr, opts);
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t y = 0; y < 2; ++y) {
        const auto v = pre.voxel(x, y, 0);
        const double first = v[0];
        for (double val : v) CHECK(std::abs(val - first) < 1e-6);
        CHECK(std::abs(first - std::exp(-0.7)) < 1e-6);
      }
  }
  SUBCASE("b0 scaling invariance") {
    const GradientTable gt = table_on(generate_directions(40, true), 2, 1000);
    DwiVolume raw = random_volume({2, 3, 2}, gt.size(), 12);
    for (float& x : raw.data) x = std::abs(x) + 0.1f;
    DwiVolume scaled = raw;
    for (float& x : scaled.data) x *= 4.0f;
    PreprocessOptions opts;
    opts.center = false;
    const PreprocessedDwi a = preprocess(raw, gt, targets, nullptr, opts);
    const PreprocessedDwi b = preprocess(scaled, gt, targets, nullptr, opts);
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 2; ++x)
          for (std::size_t k = 0; k < 100; ++k) CHECK(std::abs(a.value(x, y, z, k) - b.value(x, y, z, k)) < 1e-9);
  }
  SUBCASE("axis permutation equivariance") {
    const GradientTable gt = table_on(generate_directions(40, true), 1, 1000);
    DwiVolume raw = random_volume({2, 3, 4}, gt.size(), 13);
    for (float& x : raw.data) x = std::abs(x) + 0.1f;
    // Swap x and z axes of the grid.
    DwiVolume perm({4, 3, 2}, raw.voxel_size, gt.size());
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 2; ++x)
          for (std::size_t c = 0; c < gt.size(); ++c) perm.at(z, y, x, c) = raw.at(x, y, z, c);
    const PreprocessedDwi a = preprocess(raw, gt, targets);
    const PreprocessedDwi b = preprocess(perm, gt, targets);
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 2; ++x)
          for (std::size_t k = 0; k < 100; ++k) CHECK(std::abs(a.value(x, y, z, k) - b.value(z, y, x, k)) < 1e-9);
  }
  SUBCASE("mask restricts the centering mean") {
    const GradientTable gt = table_on(generate_directions(40, true), 1, 1000);
    DwiVolume raw = random_volume({2, 2, 1}, gt.size(), 14);
    for (float& x : raw.data) x = std::abs(x) + 0.1f;
    BrainMask mask({2, 2, 1});
    mask.occupied[2] = 1;
    const PreprocessedDwi pre = preprocess(raw, gt, targets, &mask);
    for (double v : pre.voxel(0, 1, 0)) CHECK(std::abs(v) < 1e-12);
    BrainMask empty({2, 2, 1});
    CHECK_THROWS_AS(preprocess(raw, gt, targets, &empty), InvalidData);
  }
  SUBCASE("zero b0 is floored") {
    const GradientTable gt = table_on(generate_directions(40, true), 1, 1000);
    DwiVolume raw({1, 1, 1}, {1, 1, 1}, gt.size());
    for (std::size_t c = 1; c < gt.size(); ++c) raw.data[c] = 1e-7f;
    PreprocessOptions opts;
    opts.center = false;
    const PreprocessedDwi pre = preprocess(raw, gt, targets, nullptr, opts);
    for (double v : pre.voxel(0, 0, 0)) CHECK(std::abs(v - 0.1) < 1e-6);
  }
  SUBCASE("errors") {
    const GradientTable gt = table_on(generate_directions(40, true), 1, 1000);
    const DwiVolume raw = random_volume({2, 2, 2}, gt.size(), 15);
    const GradientTable no_b0 = table_on(generate_directions(41, true), 0, 1000);
    CHECK_THROWS_AS(preprocess(raw, no_b0, targets), InvalidData);
    const DwiVolume wrong = random_volume({2, 2, 2}, gt.size() + 1, 15);
    CHECK_THROWS_AS(preprocess(wrong, gt, targets), InvalidData);
    CHECK_THROWS_AS(preprocess(raw, gt, generate_directions(100, false)), InvalidArgument);
  }
}

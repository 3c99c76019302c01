#include <doctest.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "rnntrack/error.hpp"
#include "rnntrack/eval.hpp"
#include "test_util.hpp"

using namespace rnntrack;

namespace {

Streamline line(const Vec3& a, const Vec3& b, double step = 0.5) {
  Streamline s;
  const int n = static_cast<int>(std::ceil((b - a).norm() / step));
  for (int k = 0; k <= n; ++k) s.points.push_back(a + (b - a) * (static_cast<double>(k) / n));
  return s;
}

Vec3 center(const Voxel& v) { return Vec3(v[0] + 0.5, v[1] + 0.5, v[2] + 0.5); }

// Two crossing bundles on a 10^3 grid: "x" along x at (y, z) = (2, 2), "y" along y at (x, z) = (5, 2).
GoldStandard toy_gold() {
  GoldStandard gs;
  gs.dims = {10, 10, 10};
  gs.voxel_size = {2, 2, 2};
  GoldBundle bx{"x", {}, {{0, 2, 2}, {1, 2, 2}}, {{8, 2, 2}, {9, 2, 2}}, {}};
  bx.streamlines.streamlines = {line(Vec3(0.5, 2.5, 2.5), Vec3(9.5, 2.5, 2.5)), line(Vec3(0.2, 2.2, 2.7), Vec3(9.7, 2.2, 2.7))};
  GoldBundle by{"y", {}, {{5, 0, 2}}, {{5, 9, 2}}, {}};
  by.streamlines.streamlines = {line(Vec3(5.5, 0.5, 2.5), Vec3(5.5, 9.5, 2.5))};
  gs.bundles = {bx, by};
  gs.finalize();
  return gs;
}

// Reference classifier written from the definitions with explicit ROI sets.
ConnectionTag reference_tag(const Streamline& s, const GoldStandard& gs) {
  const auto roi_ids = [&](const Vec3& p) {
    std::set<std::size_t> ids;
    const Voxel v{static_cast<std::size_t>(p.x()), static_cast<std::size_t>(p.y()), static_cast<std::size_t>(p.z())};
    for (std::size_t b = 0; b < gs.bundles.size(); ++b) {
      if (std::count(gs.bundles[b].roi_a.begin(), gs.bundles[b].roi_a.end(), v)) ids.insert(2 * b);
      if (std::count(gs.bundles[b].roi_b.begin(), gs.bundles[b].roi_b.end(), v)) ids.insert(2 * b + 1);
    }
    return ids;
  };
  const auto a = roi_ids(s.points.front()), b = roi_ids(s.points.back());
  ConnectionTag t;
  for (std::size_t bundle = 0; bundle < gs.bundles.size(); ++bundle) {
    const bool fwd = a.contains(2 * bundle) && b.contains(2 * bundle + 1);
    const bool rev = a.contains(2 * bundle + 1) && b.contains(2 * bundle);
    if (fwd || rev) {
      t.kind = ConnectionKind::Valid;
      t.bundle = bundle;
      return t;
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> bad;
  for (std::size_t x : a)
    for (std::size_t y : b)
      if (x / 2 != y / 2) bad.insert({std::min(x, y), std::max(x, y)});
  if (!bad.empty()) {
    t.kind = ConnectionKind::Invalid;
    t.roi_pair = *bad.begin();
  }
  return t;
}

}  // namespace

TEST_CASE("classification matches the reference over all endpoint combinations") {
  const GoldStandard gs = toy_gold();
  std::vector<Voxel> probes;
  for (const auto& b : gs.bundles) {
    probes.insert(probes.end(), b.roi_a.begin(), b.roi_a.end());
    probes.insert(probes.end(), b.roi_b.begin(), b.roi_b.end());
  }
  probes.push_back({4, 4, 4});
  probes.push_back({5, 5, 2});
  Tractogram t;
  for (const auto& a : probes)
    for (const auto& b : probes)
      if (a != b) t.streamlines.push_back(line(center(a), center(b)));
  const ConnectionSummary cs = classify_connections(t, gs);
  REQUIRE(cs.tags.size() == t.size());
  std::size_t v = 0, inv = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const ConnectionTag ref = reference_tag(t.streamlines[i], gs);
    CHECK(cs.tags[i].kind == ref.kind);
    if (ref.kind == ConnectionKind::Valid) {
      CHECK(cs.tags[i].bundle == ref.bundle);
      ++v;
    }
    if (ref.kind == ConnectionKind::Invalid) {
      CHECK(cs.tags[i].roi_pair == ref.roi_pair);
      ++inv;
    }
  }
  CHECK(cs.valid == v);
  CHECK(cs.invalid == inv);
  CHECK(cs.valid + cs.invalid + cs.non_connecting == t.size());
  CHECK(cs.vc + cs.ic + cs.nc == 100.0);
  // 6 ROI voxels pairwise: 2x2x2 ordered pairs in x, 2 in y, valid.
  CHECK(v == 10);
  // Invalid: ordered pairs across bundles (4x2x2 = 16) plus x-bundle same-end pairs are not invalid.
  CHECK(inv == 16);
}

TEST_CASE("overlapping ROIs of different bundles favour the valid bundle") {
  GoldStandard gs = toy_gold();
  gs.bundles[1].roi_a.push_back({1, 2, 2});  // shared with x.roi_a
  gs.finalize();
  const Tractogram t{{line(Vec3(1.5, 2.5, 2.5), Vec3(5.5, 9.5, 2.5)), line(Vec3(1.5, 2.5, 2.5), Vec3(9.5, 2.5, 2.5))}};
  const auto cs = classify_connections(t, gs);
  CHECK(cs.tags[0].kind == ConnectionKind::Valid);
  CHECK(cs.tags[0].bundle == 1);
  CHECK(cs.tags[1].kind == ConnectionKind::Valid);
  CHECK(cs.tags[1].bundle == 0);
}

TEST_CASE("bundle detection counts distinct invalid pairs") {
  const GoldStandard gs = toy_gold();
  // Many streamlines joining x.roi_a to y.roi_b, in both orientations: one invalid bundle.
  Tractogram t;
  for (int i = 0; i < 5; ++i) {
    t.streamlines.push_back(line(Vec3(0.5, 2.5, 2.5), Vec3(5.5, 9.9 - 0.15 * i, 2.5)));
    t.streamlines.push_back(reversed(t.streamlines.back()));
  }
  auto cs = classify_connections(t, gs);
  auto bd = bundle_detection(cs.tags, gs);
  CHECK(bd.vb == 0);
  CHECK(bd.ib == 1);
  CHECK(cs.tags[0].roi_pair == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(cs.ic == 100.0);
  t.streamlines.push_back(line(Vec3(9.5, 2.5, 2.5), Vec3(5.5, 0.5, 2.5)));  // x.roi_b - y.roi_a
  t.streamlines.push_back(gs.bundles[1].streamlines.streamlines[0]);
  cs = classify_connections(t, gs);
  bd = bundle_detection(cs.tags, gs);
  CHECK(bd.vb == 1);
  CHECK(bd.ib == 2);
}

TEST_CASE("gold standard scored against itself") {
  const GoldStandard gs = toy_gold();
  Tractogram all;
  for (const auto& b : gs.bundles)
    all.streamlines.insert(all.streamlines.end(), b.streamlines.streamlines.begin(), b.streamlines.streamlines.end());
  const ScoreReport r = score(all, gs);
  CHECK(r.vc == 100.0);
  CHECK(r.ic == 0.0);
  CHECK(r.nc == 0.0);
  CHECK(r.vb == 2);
  CHECK(r.ib == 0);
  CHECK(r.ol == 100.0);
  CHECK(r.orr == 0.0);
  CHECK(r.f1 == doctest::Approx(100.0));

  SUBCASE("canonical phantom") {
    const PhantomDataset ds = make_crossing_phantom();
    const GoldStandard pg = GoldStandard::from_phantom(ds);
    const ScoreReport pr = score(ds.ground_truth(), pg);
    CHECK(pr.vc == 100.0);
    CHECK(pr.vb == 2);
    CHECK(pr.ib == 0);
    CHECK(pr.ol == 100.0);
    CHECK(pr.orr == 0.0);
    CHECK(pr.f1 == doctest::Approx(100.0));
  }
}

TEST_CASE("coverage oracle") {
  const GoldStandard gs = toy_gold();
  const auto& gx = gs.bundles[0].occupancy;
  CHECK(gx.size() == 10);
  SUBCASE("half the bundle covered, nothing outside") {
    // Gold occupancy widened to two rows; the streamline covers exactly one.
    GoldStandard g2 = gs;
    g2.bundles[0].occupancy = {};
    for (std::size_t x = 0; x < 10; ++x)
      for (std::size_t y = 2; y <= 3; ++y) g2.bundles[0].occupancy.push_back(voxel_index(gs.dims, x, y, 2));
    std::sort(g2.bundles[0].occupancy.begin(), g2.bundles[0].occupancy.end());
    const Tractogram t{{line(Vec3(0.5, 2.5, 2.5), Vec3(9.5, 2.5, 2.5))}};
    const auto cs = classify_connections(t, g2);
    const auto cov = coverage_scores(t, cs.tags, g2);
    CHECK(cov.bundles[0].ol == doctest::Approx(50.0));
    CHECK(cov.bundles[0].orr == 0.0);
    CHECK(cov.bundles[0].f1 == doctest::Approx(200.0 / 3));
    CHECK(cov.bundles[1].ol == 0.0);
    CHECK(cov.bundles[1].valid_streamlines == 0);
    CHECK(cov.ol == doctest::Approx(25.0));
    CHECK(cov.f1 == doctest::Approx(100.0 / 3));
  }
  SUBCASE("overreach counts voxels outside the bundle, unclamped") {
    // Wanders off the bundle row through 12 extra voxels before reaching roi_b.
    Streamline s = line(Vec3(0.5, 2.5, 2.5), Vec3(0.5, 2.5, 8.5));
    auto tail = line(Vec3(0.5, 2.5, 8.5), Vec3(9.5, 2.5, 8.5));
    s.points.insert(s.points.end(), tail.points.begin() + 1, tail.points.end());
    tail = line(Vec3(9.5, 2.5, 8.5), Vec3(9.5, 2.5, 2.5));
    s.points.insert(s.points.end(), tail.points.begin() + 1, tail.points.end());
    const Tractogram t{{s}};
    const auto cs = classify_connections(t, gs);
    REQUIRE(cs.tags[0].kind == ConnectionKind::Valid);
    const auto cov = coverage_scores(t, cs.tags, gs);
    const auto cand = traversed_voxels(s, gs.dims);
    std::size_t inside_g = 0;
    for (std::size_t v : cand) inside_g += std::binary_search(gx.begin(), gx.end(), v);
    CHECK(inside_g == 2);
    const double expect_or = 100.0 * static_cast<double>(cand.size() - inside_g) / 10.0;
    CHECK(expect_or > 100.0);
    CHECK(cov.bundles[0].orr == doctest::Approx(expect_or));
    CHECK(cov.bundles[0].ol == doctest::Approx(20.0));
  }
}

TEST_CASE("score invariances") {
  const GoldStandard gs = toy_gold();
  Rng rng(3);
  Tractogram t;
  for (int i = 0; i < 40; ++i) {
    Vec3 a(uniform(rng, 0, 10), uniform(rng, 0, 10), uniform(rng, 0, 10));
    Vec3 b(uniform(rng, 0, 10), uniform(rng, 0, 10), uniform(rng, 0, 10));
    if (i % 4 == 0) a = Vec3(0.5, 2.5, 2.5);
    if (i % 4 == 1) b = Vec3(9.5, 2.5, 2.5);
    if (i % 8 == 2) b = Vec3(5.5, 9.5, 2.5), a = Vec3(5.5, 0.5, 2.5);
    t.streamlines.push_back(line(a, b));
  }
  const ScoreReport base = score(t, gs);
  Tractogram rev = t, shuffled = t, doubled = t;
  for (auto& s : rev.streamlines) s = reversed(s);
  shuffle(shuffled.streamlines, rng);
  doubled.streamlines.insert(doubled.streamlines.end(), t.streamlines.begin(), t.streamlines.end());
  for (const Tractogram* o : {&rev, &shuffled, &doubled}) {
    const ScoreReport r = score(*o, gs);
    CHECK(r.vc == base.vc);
    CHECK(r.ic == base.ic);
    CHECK(r.nc == base.nc);
    CHECK(r.vb == base.vb);
    CHECK(r.ib == base.ib);
    CHECK(r.ol == doctest::Approx(base.ol));
    CHECK(r.orr == doctest::Approx(base.orr));
    CHECK(r.f1 == doctest::Approx(base.f1));
  }
}

TEST_CASE("percentages partition exactly") {
  const GoldStandard gs = toy_gold();
  const Streamline v = gs.bundles[0].streamlines.streamlines[0];
  const Streamline inv = line(Vec3(0.5, 2.5, 2.5), Vec3(5.5, 9.5, 2.5));
  const Streamline nc = line(Vec3(4.5, 4.5, 4.5), Vec3(6.5, 6.5, 6.5));
  for (std::size_t n : {3u, 7u, 11u, 13u}) {
    Tractogram t;
    for (std::size_t i = 0; i < n; ++i) t.streamlines.push_back(i % 3 == 0 ? v : i % 3 == 1 ? inv : nc);
    const ScoreReport r = score(t, gs);
    CHECK(r.vc + r.ic + r.nc == 100.0);
    CHECK(r.vc == doctest::Approx(100.0 * r.valid / n).epsilon(1e-6));
  }
  const ScoreReport e = score(Tractogram{}, gs);
  CHECK(e.empty);
  CHECK(e.vc == 0.0);
  CHECK(e.vb == 0);
  CHECK(e.to_table().find("empty") != std::string::npos);
}

TEST_CASE("report formats") {
  const GoldStandard gs = toy_gold();
  const ScoreReport r = score(Tractogram{{gs.bundles[0].streamlines.streamlines[0]}}, gs);
  const auto j = nlohmann::json::parse(r.to_json());
  for (const char* k : {"VC", "IC", "NC", "VB", "IB", "OL", "OR", "F1", "bundles"}) CHECK(j.contains(k));
  CHECK(j["VB"] == 1);
  CHECK(j["bundles"].size() == 2);
  CHECK(j["bundles"][0]["name"] == "x");
  const std::string table = r.to_table();
  CHECK(table.rfind("      VC", 0) == 0);
  CHECK(table.find("100.00") != std::string::npos);
}

TEST_CASE("gold standard validation and loading") {
  SUBCASE("point off grid") {
    const GoldStandard gs = toy_gold();
    CHECK_THROWS_AS(score(Tractogram{{line(Vec3(0.5, 2.5, 2.5), Vec3(10.5, 2.5, 2.5))}}, gs), InvalidData);
  }
  SUBCASE("empty or overlapping ROIs") {
    GoldStandard gs = toy_gold();
    gs.bundles[0].roi_b = {};
    CHECK_THROWS_AS(gs.finalize(), InvalidData);
    gs = toy_gold();
    gs.bundles[0].roi_b.push_back({0, 2, 2});
    CHECK_THROWS_AS(gs.finalize(), InvalidData);
    gs = toy_gold();
    gs.bundles[0].roi_a.push_back({10, 0, 0});
    CHECK_THROWS_AS(gs.finalize(), InvalidData);
  }
  SUBCASE("load from a written phantom") {
    PhantomOptions o;
    o.streamlines_per_bundle = 30;
    const PhantomDataset ds = make_crossing_phantom(o);
    testutil::TempDir dir("gold");
    write_phantom(ds, dir.path());
    const GoldStandard a = GoldStandard::load(dir.path());
    const GoldStandard b = GoldStandard::from_phantom(ds);
    CHECK(a.dims == b.dims);
    CHECK(a.voxel_size == b.voxel_size);
    REQUIRE(a.bundles.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(a.bundles[i].name == b.bundles[i].name);
      CHECK(a.bundles[i].roi_a == b.bundles[i].roi_a);
      CHECK(a.bundles[i].roi_b == b.bundles[i].roi_b);
      CHECK(a.bundles[i].streamlines.size() == 30);
      CHECK(a.bundles[i].occupancy.size() == doctest::Approx(b.bundles[i].occupancy.size()).epsilon(0.02));
    }
    CHECK_THROWS_AS(GoldStandard::load(dir / "missing"), IoError);
  }
}

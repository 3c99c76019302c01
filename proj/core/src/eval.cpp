#include "rnntrack/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "rnntrack/error.hpp"

namespace rnntrack {

namespace {

// Percentages are kept on a 2^-20 grid so the partition sums to 100 exactly.
double percent(std::size_t k, std::size_t n) {
  if (n == 0) return 0.0;
  const double scale = 1048576.0;
  return std::round(100.0 * static_cast<double>(k) / static_cast<double>(n) * scale) / scale;
}

std::optional<std::size_t> endpoint_voxel(const Vec3& p, const Dims& dims) {
  if (!inside(dims, p)) return std::nullopt;
  return voxel_index(dims, static_cast<std::size_t>(std::floor(p.x())), static_cast<std::size_t>(std::floor(p.y())),
                     static_cast<std::size_t>(std::floor(p.z())));
}

std::vector<std::vector<std::size_t>> roi_lookup(const GoldStandard& gs) {
  std::vector<std::vector<std::size_t>> lut(voxel_count(gs.dims));
  for (std::size_t b = 0; b < gs.bundles.size(); ++b) {
    for (const Voxel& v : gs.bundles[b].roi_a) lut[voxel_index(gs.dims, v[0], v[1], v[2])].push_back(2 * b);
    for (const Voxel& v : gs.bundles[b].roi_b) lut[voxel_index(gs.dims, v[0], v[1], v[2])].push_back(2 * b + 1);
  }
  return lut;
}

std::vector<Voxel> voxels_from_json(const nlohmann::json& j, const std::string& what) {
  std::vector<Voxel> out;
  if (!j.is_array()) throw InvalidData("rois.json: '" + what + "' must be an array");
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 3) throw InvalidData("rois.json: '" + what + "' entries must be [x, y, z]");
    out.push_back({v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()});
  }
  return out;
}

}  // namespace

void GoldStandard::finalize() {
  if (voxel_count(dims) == 0) throw InvalidData("gold standard: empty grid");
  for (auto& b : bundles) {
    if (b.roi_a.empty() || b.roi_b.empty()) throw InvalidData("gold standard: bundle '" + b.name + "' has an empty ROI");
    std::set<std::size_t> a;
    for (const Voxel& v : b.roi_a) {
      if (v[0] >= dims[0] || v[1] >= dims[1] || v[2] >= dims[2])
        throw InvalidData("gold standard: ROI voxel of '" + b.name + "' off grid");
      a.insert(voxel_index(dims, v[0], v[1], v[2]));
    }
    for (const Voxel& v : b.roi_b) {
      if (v[0] >= dims[0] || v[1] >= dims[1] || v[2] >= dims[2])
        throw InvalidData("gold standard: ROI voxel of '" + b.name + "' off grid");
      if (a.contains(voxel_index(dims, v[0], v[1], v[2])))
        throw InvalidData("gold standard: ROIs of bundle '" + b.name + "' overlap");
    }
    std::vector<std::size_t> occ;
    for (const auto& s : b.streamlines.streamlines) {
      const auto v = traversed_voxels(s, dims);
      occ.insert(occ.end(), v.begin(), v.end());
    }
    std::sort(occ.begin(), occ.end());
    occ.erase(std::unique(occ.begin(), occ.end()), occ.end());
    b.occupancy = std::move(occ);
  }
}

GoldStandard GoldStandard::from_phantom(const PhantomDataset& ds) {
  GoldStandard gs;
  gs.dims = ds.volume.dims;
  gs.voxel_size = ds.volume.voxel_size;
  for (const auto& b : ds.bundles) gs.bundles.push_back({b.name, Tractogram{b.streamlines}, b.roi_a, b.roi_b, {}});
  gs.finalize();
  return gs;
}

GoldStandard GoldStandard::load(const std::filesystem::path& dir) {
  const auto path = dir / "rois.json";
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  GoldStandard gs;
  try {
    const auto j = nlohmann::json::parse(f);
    const auto dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw InvalidData("rois.json: 'dims' must have 3 entries");
    for (int a = 0; a < 3; ++a) gs.dims[a] = dims[a].get<std::size_t>();
    if (j.contains("voxel_size"))
      for (int a = 0; a < 3; ++a) gs.voxel_size[a] = j["voxel_size"].at(a).get<float>();
    for (const auto& b : j.at("bundles")) {
      GoldBundle gb;
      gb.name = b.at("name").get<std::string>();
      gb.roi_a = voxels_from_json(b.at("roi_a"), "roi_a");
      gb.roi_b = voxels_from_json(b.at("roi_b"), "roi_b");
      gb.streamlines = load_tractogram(dir / b.at("tractogram").get<std::string>());
      gs.bundles.push_back(std::move(gb));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidData("rois.json: " + std::string(e.what()));
  }
  gs.finalize();
  return gs;
}

ConnectionSummary classify_connections(const Tractogram& t, const GoldStandard& gs) {
  ConnectionSummary out;
  out.empty = t.streamlines.empty();
  const auto lut = roi_lookup(gs);
  static const std::vector<std::size_t> none;
  out.tags.reserve(t.size());
  for (const auto& s : t.streamlines) {
    ConnectionTag tag;
    if (!s.points.empty()) {
      const auto va = endpoint_voxel(s.points.front(), gs.dims);
      const auto vb = endpoint_voxel(s.points.back(), gs.dims);
      const auto& ea = va ? lut[*va] : none;
      const auto& eb = vb ? lut[*vb] : none;
      std::optional<std::size_t> valid_bundle;
      std::optional<std::pair<std::size_t, std::size_t>> bad_pair;
      for (std::size_t ra : ea) {
        for (std::size_t rb : eb) {
          if (ra / 2 == rb / 2) {
            if (ra != rb && (!valid_bundle || ra / 2 < *valid_bundle)) valid_bundle = ra / 2;
          } else {
            const std::pair<std::size_t, std::size_t> p{std::min(ra, rb), std::max(ra, rb)};
            if (!bad_pair || p < *bad_pair) bad_pair = p;
          }
        }
      }
      if (valid_bundle) {
        tag.kind = ConnectionKind::Valid;
        tag.bundle = *valid_bundle;
      } else if (bad_pair) {
        tag.kind = ConnectionKind::Invalid;
        tag.roi_pair = *bad_pair;
      }
    }
    switch (tag.kind) {
      case ConnectionKind::Valid: ++out.valid; break;
      case ConnectionKind::Invalid: ++out.invalid; break;
      case ConnectionKind::NonConnecting: ++out.non_connecting; break;
    }
    out.tags.push_back(tag);
  }
  if (!out.empty) {
    out.vc = percent(out.valid, t.size());
    out.ic = percent(out.invalid, t.size());
    out.nc = 100.0 - out.vc - out.ic;
  }
  return out;
}

BundleDetection bundle_detection(const std::vector<ConnectionTag>& tags, const GoldStandard& gs) {
  std::vector<bool> hit(gs.bundles.size(), false);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& tag : tags) {
    if (tag.kind == ConnectionKind::Valid && tag.bundle < hit.size()) hit[tag.bundle] = true;
    if (tag.kind == ConnectionKind::Invalid) pairs.insert(tag.roi_pair);
  }
  return {static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true)), pairs.size()};
}

CoverageScores coverage_scores(const Tractogram& t, const std::vector<ConnectionTag>& tags, const GoldStandard& gs) {
  if (tags.size() != t.size()) throw InvalidArgument("coverage_scores: one tag per streamline required");
  CoverageScores out;
  std::vector<std::vector<std::size_t>> candidate(gs.bundles.size());
  std::vector<std::size_t> valid_count(gs.bundles.size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (tags[i].kind != ConnectionKind::Valid) continue;
    const auto v = traversed_voxels(t.streamlines[i], gs.dims);
    auto& c = candidate[tags[i].bundle];
    c.insert(c.end(), v.begin(), v.end());
    ++valid_count[tags[i].bundle];
  }
  for (std::size_t b = 0; b < gs.bundles.size(); ++b) {
    auto& c = candidate[b];
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    const auto& g = gs.bundles[b].occupancy;
    BundleCoverage bc;
    bc.name = gs.bundles[b].name;
    bc.valid_streamlines = valid_count[b];
    if (!c.empty() && !g.empty()) {
      std::vector<std::size_t> inter;
      std::set_intersection(c.begin(), c.end(), g.begin(), g.end(), std::back_inserter(inter));
      const double ni = static_cast<double>(inter.size());
      const double ng = static_cast<double>(g.size());
      const double nc = static_cast<double>(c.size());
      const double recall = ni / ng;
      const double precision = ni / nc;
      bc.ol = 100.0 * recall;
      bc.orr = 100.0 * (nc - ni) / ng;
      bc.f1 = precision + recall > 0.0 ? 100.0 * 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    out.bundles.push_back(bc);
  }
  if (!out.bundles.empty()) {
    for (const auto& bc : out.bundles) {
      out.ol += bc.ol;
      out.orr += bc.orr;
      out.f1 += bc.f1;
    }
    const double n = static_cast<double>(out.bundles.size());
    out.ol /= n;
    out.orr /= n;
    out.f1 /= n;
  }
  return out;
}

ScoreReport score(const Tractogram& t, const GoldStandard& gs) {
  for (std::size_t i = 0; i < t.size(); ++i)
    for (const Vec3& p : t.streamlines[i].points)
      if (!inside(gs.dims, p))
        throw InvalidData("score: streamline " + std::to_string(i) + " leaves the gold-standard grid");
  const ConnectionSummary cs = classify_connections(t, gs);
  const BundleDetection bd = bundle_detection(cs.tags, gs);
  const CoverageScores cov = coverage_scores(t, cs.tags, gs);
  ScoreReport r;
  r.streamlines = t.size();
  r.empty = cs.empty;
  r.valid = cs.valid;
  r.invalid = cs.invalid;
  r.non_connecting = cs.non_connecting;
  r.vc = cs.vc;
  r.ic = cs.ic;
  r.nc = cs.nc;
  r.vb = bd.vb;
  r.ib = bd.ib;
  r.ol = cov.ol;
  r.orr = cov.orr;
  r.f1 = cov.f1;
  r.bundles = cov.bundles;
  return r;
}

std::string ScoreReport::to_json() const {
  nlohmann::ordered_json j;
  j["streamlines"] = streamlines;
  j["empty"] = empty;
  j["valid"] = valid;
  j["invalid"] = invalid;
  j["non_connecting"] = non_connecting;
  j["VC"] = vc;
  j["IC"] = ic;
  j["NC"] = nc;
  j["VB"] = vb;
  j["IB"] = ib;
  j["OL"] = ol;
  j["OR"] = orr;
  j["F1"] = f1;
  j["bundles"] = nlohmann::ordered_json::array();
  for (const auto& b : bundles)
    j["bundles"].push_back(
        {{"name", b.name}, {"valid_streamlines", b.valid_streamlines}, {"OL", b.ol}, {"OR", b.orr}, {"F1", b.f1}});
  return j.dump(2);
}

std::string ScoreReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%8s %8s %8s %4s %4s %8s %8s %8s\n", "VC", "IC", "NC", "VB", "IB", "OL", "OR", "F1");
  os << line;
  std::snprintf(line, sizeof line, "%8.2f %8.2f %8.2f %4zu %4zu %8.2f %8.2f %8.2f\n", vc, ic, nc, vb, ib, ol, orr, f1);
  os << line;
  if (empty) os << "(empty tractogram)\n";
  return os.str();
}

}  // namespace rnntrack

#include "commands.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "rnntrack/dwi.hpp"
#include "rnntrack/error.hpp"
#include "rnntrack/eval.hpp"
#include "rnntrack/model.hpp"
#include "rnntrack/phantom.hpp"
#include "rnntrack/sphere.hpp"
#include "rnntrack/streamline.hpp"
#include "rnntrack/tracker.hpp"
#include "run_config.hpp"

namespace rnntrack::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InputPaths {
  std::string data_dir, dwi, grad, mask, tracts;

  void add_options(CLI::App* app, bool with_tracts) {
    app->add_option("--data", data_dir, "Directory holding dwi.vol, grad.txt, mask.vol and gt.trk");
    app->add_option("--dwi", dwi, "Diffusion volume (DWIVOL01)");
    app->add_option("--grad", grad, "Gradient table text file");
    app->add_option("--mask", mask, "Mask volume used for centering and seeding");
    if (with_tracts) app->add_option("--tracts", tracts, "Training tractogram (TRACTS01)");
  }

  fs::path resolve(const std::string& explicit_path, const char* default_name, bool required) const {
    if (!explicit_path.empty()) return explicit_path;
    if (!data_dir.empty()) return fs::path(data_dir) / default_name;
    if (required) throw UsageError(std::string("missing input: pass --data or the file for ") + default_name);
    return {};
  }
};

struct LoadedVolume {
  BrainMask mask;
  bool has_mask = false;
  std::optional<PreprocessedDwi> pre;
};

LoadedVolume load_and_preprocess(const InputPaths& in, const DataConfig& dc, std::size_t input_directions) {
  const DwiVolume raw = load_volume(in.resolve(in.dwi, "dwi.vol", true));
  const GradientTable gt = GradientTable::load(in.resolve(in.grad, "grad.txt", true));
  LoadedVolume lv;
  const fs::path mask_path = in.resolve(in.mask, "mask.vol", false);
  if (!mask_path.empty() && (!in.mask.empty() || fs::exists(mask_path))) {
    lv.mask = load_mask(mask_path);
    lv.has_mask = true;
    if (lv.mask.dims != raw.dims) throw InvalidData("mask dimensions do not match the diffusion volume");
  }
  PreprocessOptions opts;
  opts.sh_order = dc.sh_order;
  opts.sh_regularization = dc.sh_regularization;
  const DirectionSet targets = generate_directions(input_directions, true);
  lv.pre.emplace(preprocess(raw, gt, targets, lv.has_mask ? &lv.mask : nullptr, opts));
  return lv;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  PhantomOptions opts;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  const PhantomDataset ds = make_crossing_phantom(a.opts);
  write_phantom(ds, a.out);
  out << "wrote phantom with " << ds.ground_truth().size() << " streamlines to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  InputPaths in;
  std::string out, metrics, config, resume;
  RunConfig rc;
};

Tractogram subsample(const Tractogram& t, std::size_t max_count, std::uint64_t seed) {
  if (max_count == 0 || max_count >= t.size()) return t;
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x73756273ULL));
  shuffle(idx, rng);
  idx.resize(max_count);
  std::sort(idx.begin(), idx.end());
  Tractogram out;
  for (std::size_t i : idx) out.streamlines.push_back(t.streamlines[i]);
  return out;
}

int cmd_train(TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig& rc = a.rc;
  GruConfig cfg = rc.model;
  GruParams params;
  AdamState opt;
  if (!a.resume.empty()) {
    ModelFile mf = load_model(a.resume);
    if (!mf.optimizer) throw InvalidData("cannot resume from '" + a.resume + "': no optimizer state stored");
    cfg = mf.config;
    params = std::move(mf.params);
    opt = std::move(*mf.optimizer);
  } else {
    cfg.input_size = rc.data.input_directions;
    cfg.num_classes = rc.data.num_directions + 1;
    cfg.validate();
    params = init_params(cfg);
    opt = AdamState::zeros(cfg);
  }
  rc.train.validate();
  if (!(rc.dataset.split > 0.0 && rc.dataset.split < 1.0)) throw InvalidArgument("--split must be in (0, 1)");

  const LoadedVolume lv = load_and_preprocess(a.in, rc.data, cfg.input_size);
  const DirectionSet ds = generate_directions(cfg.num_classes - 1, false);
  const Tractogram all = load_tractogram(a.in.resolve(a.in.tracts, "gt.trk", true));
  const Tractogram tracts = subsample(all, rc.dataset.max_streamlines, rc.dataset.seed);
  const Dataset data = build_dataset(tracts, *lv.pre, ds, rc.dataset.split, rc.dataset.seed);
  if (data.train.empty()) throw InvalidData("no usable training streamlines");
  err << "dataset: " << data.train_streamlines << " train (" << data.train.size() << " with reversals), "
      << data.valid.size() << " valid, " << data.dropped << " dropped\n";

  const LabelSmoother smoother(ds, rc.train.tau);
  std::ofstream metrics;
  if (!a.metrics.empty()) {
    metrics.open(a.metrics, std::ios::binary);
    if (!metrics) throw IoError("cannot write '" + a.metrics + "'");
  }
  for (std::size_t e = 0; e < rc.train.epochs; ++e) {
    const EpochMetrics m = train_epoch(params, opt, data.train, rc.train, cfg, smoother);
    const EvalMetrics v = evaluate(params, cfg, data.valid, smoother, rc.train.threads);
    nlohmann::ordered_json line;
    line["epoch"] = opt.epochs_completed;
    line["train_loss"] = m.train_loss;
    line["train_acc"] = m.train_accuracy;
    line["valid_loss"] = v.loss;
    if (metrics.is_open()) metrics << line.dump() << '\n';
    err << "epoch " << opt.epochs_completed << " loss " << m.train_loss << " acc " << m.train_accuracy
        << " valid " << v.loss << "\n";
  }
  if (metrics.is_open() && !metrics) throw IoError("write failed for '" + a.metrics + "'");
  save_model(a.out, cfg, params, &opt);
  out << "saved model to " << a.out << " after " << opt.epochs_completed << " epochs\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrackArgs {
  InputPaths in;
  std::string model, out, stats, config, seed_rois, visitation, mode, entropy;
  RunConfig rc;
};

std::vector<Voxel> roi_voxels(const fs::path& rois) {
  const GoldStandard gs = GoldStandard::load(rois.parent_path().empty() ? fs::path(".") : rois.parent_path());
  std::vector<Voxel> v;
  for (const auto& b : gs.bundles) {
    v.insert(v.end(), b.roi_a.begin(), b.roi_a.end());
    v.insert(v.end(), b.roi_b.begin(), b.roi_b.end());
  }
  return v;
}

int cmd_track(TrackArgs& a, std::ostream& out, std::ostream& err) {
  TrackRunConfig& tr = a.rc.tracking;
  TrackConfig& tc = tr.track;
  tc.validate();
  if (tc.mode == TrackMode::Deterministic && (tr.repetitions > 0 || !a.visitation.empty()))
    throw UsageError("--repetitions and --visitation require --mode prob");
  if (tr.repetitions > 0 && a.visitation.empty()) throw UsageError("--repetitions requires --visitation FILE");
  if (!a.visitation.empty() && tr.repetitions == 0) throw UsageError("--visitation requires --repetitions T > 0");

  ModelFile mf = load_model(a.model);
  const GruModel model(mf.config, std::move(mf.params));
  const LoadedVolume lv = load_and_preprocess(a.in, a.rc.data, model.input_size());
  const DirectionSet ds = generate_directions(model.num_classes() - 1, false);

  std::vector<Vec3> seeds;
  if (tr.seeds > 0) {
    if (!a.seed_rois.empty()) {
      seeds = seed_in_voxels(roi_voxels(a.seed_rois), tr.seeds, derive_seed(tc.seed, 0x73656564ULL));
    } else {
      if (!lv.has_mask) throw InvalidData("random seeding needs a mask (--mask or --data)");
      seeds = seed_random(lv.mask, tr.seeds, derive_seed(tc.seed, 0x73656564ULL));
    }
  }
  const TrackOutput res = track_all(model, *lv.pre, ds, tc, seeds);
  save_tractogram(res.tractogram, a.out);
  if (!a.stats.empty()) write_text(a.stats, res.stats.to_json() + "\n");
  err << "tracked " << seeds.size() << " seeds: " << res.stats.to_json() << "\n";
  if (tr.repetitions > 0) {
    const VisitationMap map = visitation_map(model, *lv.pre, ds, tc, seeds, tr.repetitions);
    save_volume(map.to_volume(lv.pre->voxel_size()), a.visitation);
  }
  out << "wrote " << res.tractogram.size() << " streamlines to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string tracts, gold, json;
};

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  const GoldStandard gs = GoldStandard::load(a.gold);
  const Tractogram t = load_tractogram(a.tracts);
  const ScoreReport r = score(t, gs);
  if (!a.json.empty()) write_text(a.json, r.to_json() + "\n");
  out << r.to_table();
  return kExitOk;
}

std::vector<double> parse_triple(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--entropy expects three comma-separated numbers a,b,c");
    }
  }
  if (v.size() != 3) throw UsageError("--entropy expects three comma-separated numbers a,b,c");
  return v;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rnntrack: recurrent-network tractography on diffusion MRI"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // phantom gen
  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Synthetic phantom tools");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "Generate the crossing phantom");
  gen->add_option("--out", pa.out, "Output directory")->required();
  gen->add_option("--seed", pa.opts.seed, "Random seed")->capture_default_str();
  gen->add_option("--noise", pa.opts.noise_sigma, "Gaussian noise sigma")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--streamlines", pa.opts.streamlines_per_bundle, "Streamlines per bundle")->capture_default_str();
  gen->add_option("--axial-ramp", pa.opts.axial_ramp, "Relative axial diffusivity change along each bundle")
      ->capture_default_str();

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the recurrent classifier on a tractogram");
  ta.in.add_options(train, true);
  train->add_option("--out", ta.out, "Output model file")->required();
  train->add_option("--metrics", ta.metrics, "Per-epoch JSON-lines metrics file");
  train->add_option("--config", ta.config, "RunConfig JSON file");
  train->add_option("--resume", ta.resume, "Continue training from a saved model");
  double split = 0, dropout = 0, lr = 0, clip = 0, tau = 0;
  std::size_t epochs = 0, layers = 0, hidden = 0, batch = 0, max_streamlines = 0;
  std::uint64_t seed = 0, model_seed = 0, dataset_seed = 0;
  unsigned threads = 1;
  auto* o_epochs = train->add_option("--epochs", epochs, "Epochs to run");
  auto* o_split = train->add_option("--split", split, "Training fraction (default 0.9)");
  auto* o_layers = train->add_option("--layers", layers, "GRU layers (default 2)");
  auto* o_hidden = train->add_option("--hidden", hidden, "Units per layer (default 64)");
  auto* o_dropout = train->add_option("--dropout", dropout, "Dropout probability (default 0.3)");
  auto* o_lr = train->add_option("--lr", lr, "Adam learning rate (default 1e-3)");
  auto* o_batch = train->add_option("--batch", batch, "Batch size (default 32)");
  auto* o_clip = train->add_option("--clip", clip, "Gradient clipping norm (default 5)");
  auto* o_tau = train->add_option("--tau", tau, "Label smoothing width in radians (default 0.1)");
  auto* o_seed = train->add_option("--seed", seed, "Training seed");
  auto* o_mseed = train->add_option("--model-seed", model_seed, "Initialization seed");
  auto* o_dseed = train->add_option("--dataset-seed", dataset_seed, "Dataset shuffle seed (default 42)");
  auto* o_maxs = train->add_option("--max-streamlines", max_streamlines, "Random subset of the tractogram (0 = all)");
  auto* o_threads = train->add_option("--threads", threads, "Worker threads");

  // track
  TrackArgs ka;
  auto* track = app.add_subcommand("track", "Track streamlines with a trained model");
  ka.in.add_options(track, false);
  track->add_option("--model", ka.model, "Model file")->required();
  track->add_option("--out", ka.out, "Output tractogram")->required();
  track->add_option("--stats", ka.stats, "Tracking statistics JSON file");
  track->add_option("--config", ka.config, "RunConfig JSON file");
  track->add_option("--seed-rois", ka.seed_rois, "Seed inside the ROIs listed in this rois.json instead of the mask");
  auto* k_mode = track->add_option("--mode", ka.mode, "det or prob")->check(CLI::IsMember({"det", "prob"}));
  std::size_t k_seeds_v = 0, k_steps_v = 0, k_reps_v = 0;
  double k_alpha_v = 0, k_angle_v = 0, k_min_v = 0, k_max_v = 0;
  std::uint64_t k_seed_v = 0;
  unsigned k_threads_v = 1;
  auto* k_seeds = track->add_option("--seeds", k_seeds_v, "Number of seed points (default 200000)");
  auto* k_alpha = track->add_option("--alpha", k_alpha_v, "Step size in voxels (default 0.5)");
  auto* k_entropy = track->add_option("--entropy", ka.entropy, "Entropy threshold a,b,c (default 3,10,4.5)");
  auto* k_angle = track->add_option("--max-angle", k_angle_v, "Maximum turning angle in degrees (default 60)");
  auto* k_min = track->add_option("--min-mm", k_min_v, "Minimum length in mm (default 20)");
  auto* k_max = track->add_option("--max-mm", k_max_v, "Maximum length in mm (default 200)");
  auto* k_steps = track->add_option("--max-steps", k_steps_v, "Step limit per streamline (default 1000)");
  auto* k_reps = track->add_option("--repetitions", k_reps_v, "Probabilistic repetitions for the visitation map");
  track->add_option("--visitation", ka.visitation, "Visitation map output (prob mode)");
  auto* k_seed = track->add_option("--seed", k_seed_v, "Tracking seed");
  auto* k_threads = track->add_option("--threads", k_threads_v, "Worker threads");

  // score
  ScoreArgs sa;
  auto* sc = app.add_subcommand("score", "Score a tractogram against a gold standard");
  sc->add_option("--tracts", sa.tracts, "Candidate tractogram")->required();
  sc->add_option("--gold", sa.gold, "Gold-standard directory (rois.json + bundle tractograms)")->required();
  sc->add_option("--json", sa.json, "Write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_phantom(pa, out);
    if (train->parsed()) {
      RunConfig& rc = ta.rc;
      if (!ta.config.empty()) rc.merge_file(ta.config);
      if (o_epochs->count()) rc.train.epochs = epochs;
      if (o_split->count()) rc.dataset.split = split;
      if (o_layers->count()) rc.model.num_layers = layers;
      if (o_hidden->count()) rc.model.hidden_size = hidden;
      if (o_dropout->count()) rc.model.dropout = dropout;
      if (o_lr->count()) rc.train.learning_rate = lr;
      if (o_batch->count()) rc.train.batch_size = batch;
      if (o_clip->count()) rc.train.clip_norm = clip;
      if (o_tau->count()) rc.train.tau = tau;
      if (o_seed->count()) rc.train.seed = seed;
      if (o_mseed->count()) rc.model.seed = model_seed;
      if (o_dseed->count()) rc.dataset.seed = dataset_seed;
      if (o_maxs->count()) rc.dataset.max_streamlines = max_streamlines;
      if (o_threads->count()) rc.train.threads = threads;
      return cmd_train(ta, out, err);
    }
    if (track->parsed()) {
      RunConfig& rc = ka.rc;
      if (!ka.config.empty()) rc.merge_file(ka.config);
      TrackConfig& tc = rc.tracking.track;
      if (k_mode->count()) tc.mode = parse_track_mode(ka.mode);
      if (k_seeds->count()) rc.tracking.seeds = k_seeds_v;
      if (k_alpha->count()) tc.alpha = k_alpha_v;
      if (k_entropy->count()) {
        const auto v = parse_triple(ka.entropy);
        tc.entropy_a = v[0];
        tc.entropy_b = v[1];
        tc.entropy_c = v[2];
      }
      if (k_angle->count()) tc.max_angle_deg = k_angle_v;
      if (k_min->count()) tc.min_length_mm = k_min_v;
      if (k_max->count()) tc.max_length_mm = k_max_v;
      if (k_steps->count()) tc.max_steps = k_steps_v;
      if (k_reps->count()) rc.tracking.repetitions = k_reps_v;
      if (k_seed->count()) tc.seed = k_seed_v;
      if (k_threads->count()) tc.threads = k_threads_v;
      return cmd_track(ka, out, err);
    }
    if (sc->parsed()) return cmd_score(sa, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "no command given\n";
  return kExitUsage;
}

}  // namespace rnntrack::cli

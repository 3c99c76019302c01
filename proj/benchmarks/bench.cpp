#include <benchmark/benchmark.h>

#include <vector>

#include "rnntrack/dwi.hpp"
#include "rnntrack/model.hpp"
#include "rnntrack/rng.hpp"
#include "rnntrack/sphere.hpp"

using namespace rnntrack;

namespace {

const GruConfig kCfg{2, 64, 100, 725, 0.3, 1};

Eigen::MatrixXd random_inputs(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

void BM_GruStep(benchmark::State& state) {
  const GruParams p = init_params(kCfg);
  const Eigen::VectorXd x = random_inputs(1, kCfg.input_size, 2).row(0).transpose();
  HiddenState h = zero_state(kCfg);
  for (auto _ : state) {
    Cfodf c = step(p, kCfg, x, h);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GruStep);

void BM_BackwardSequence(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GruParams p = init_params(kCfg);
  const DirectionSet ds = generate_directions(724, false);
  const LabelSmoother sm(ds, 0.1);
  const Eigen::MatrixXd in = random_inputs(n, kCfg.input_size, 3);
  Rng rng(4);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = static_cast<std::size_t>(uniform_index(rng, 725));
  const DropoutMasks masks = sample_dropout_masks(kCfg, rng);
  for (auto _ : state) {
    BackwardResult r = backward_sequence(p, kCfg, in, labels, sm, &masks);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_BackwardSequence)->Arg(20)->Arg(80);

void BM_SampleAt(benchmark::State& state) {
  const Dims d{32, 32, 32};
  Rng rng(5);
  std::vector<double> data(voxel_count(d) * kDefaultInputDirections);
  for (auto& v : data) v = standard_normal(rng);
  const PreprocessedDwi vol(d, {2, 2, 2}, generate_directions(kDefaultInputDirections, true), std::move(data),
                            Eigen::VectorXd::Zero(kDefaultInputDirections));
  std::vector<Vec3> pts;
  for (int i = 0; i < 1024; ++i) pts.emplace_back(uniform(rng, 0, 32), uniform(rng, 0, 32), uniform(rng, 0, 32));
  Eigen::VectorXd out(kDefaultInputDirections);
  std::size_t i = 0;
  for (auto _ : state) {
    vol.sample_at(pts[i++ & 1023], out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_SampleAt);

void BM_ClassifyDirection(benchmark::State& state) {
  const DirectionSet ds = generate_directions(724, false);
  Rng rng(6);
  std::vector<Vec3> v;
  for (int i = 0; i < 1024; ++i) v.emplace_back(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(classify_direction(v[i++ & 1023], ds));
}
BENCHMARK(BM_ClassifyDirection);

}  // namespace

BENCHMARK_MAIN();

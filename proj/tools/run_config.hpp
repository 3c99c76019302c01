#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rnntrack/dwi.hpp"
#include "rnntrack/model.hpp"
#include "rnntrack/tracker.hpp"

namespace rnntrack::cli {

struct DataConfig {
  std::size_t num_directions = 724;  // model direction classes, full sphere
  std::size_t input_directions = kDefaultInputDirections;
  int sh_order = kDefaultShOrder;
  double sh_regularization = kDefaultShRegularization;
};

struct DatasetConfig {
  double split = 0.9;
  std::uint64_t seed = kDefaultDatasetSeed;
  std::size_t max_streamlines = 0;  // 0 keeps all
};

struct TrackRunConfig {
  TrackConfig track;
  std::size_t seeds = 200000;
  std::size_t repetitions = 0;
};

struct RunConfig {
  DataConfig data;
  GruConfig model;
  TrainConfig train;
  DatasetConfig dataset;
  TrackRunConfig tracking;

  // Overlays the keys present in a JSON document. Unknown keys and
  // ill-typed values throw InvalidArgument naming the key.
  void merge_json(const std::string& text);
  void merge_file(const std::filesystem::path& path);
  std::string to_json() const;
};

}  // namespace rnntrack::cli

#include "run_config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rnntrack/error.hpp"

namespace rnntrack::cli {

namespace {

using json = nlohmann::json;
using Setter = std::function<void(const json&)>;

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

void apply_section(const json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw InvalidArgument("config: '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw InvalidArgument("config: unknown key '" + section + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception&) {
      throw InvalidArgument("config: bad value for '" + section + "." + key + "'");
    }
  }
}

}  // namespace

void RunConfig::merge_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config: top level must be an object");
  std::string mode;
  std::vector<double> entropy;
  bool mode_set = false, entropy_set = false;
  const std::map<std::string, std::function<void(const json&)>> sections{
      {"data",
       [&](const json& s) {
         apply_section(s, "data",
                       {{"num_directions", set(data.num_directions)},
                        {"input_directions", set(data.input_directions)},
                        {"sh_order", set(data.sh_order)},
                        {"sh_regularization", set(data.sh_regularization)}});
       }},
      {"model",
       [&](const json& s) {
         apply_section(s, "model",
                       {{"num_layers", set(model.num_layers)},
                        {"hidden_size", set(model.hidden_size)},
                        {"dropout", set(model.dropout)},
                        {"seed", set(model.seed)}});
       }},
      {"train",
       [&](const json& s) {
         apply_section(s, "train",
                       {{"learning_rate", set(train.learning_rate)},
                        {"beta1", set(train.beta1)},
                        {"beta2", set(train.beta2)},
                        {"epsilon", set(train.epsilon)},
                        {"batch_size", set(train.batch_size)},
                        {"clip_norm", set(train.clip_norm)},
                        {"epochs", set(train.epochs)},
                        {"tau", set(train.tau)},
                        {"seed", set(train.seed)},
                        {"threads", set(train.threads)}});
       }},
      {"dataset",
       [&](const json& s) {
         apply_section(s, "dataset",
                       {{"split", set(dataset.split)},
                        {"seed", set(dataset.seed)},
                        {"max_streamlines", set(dataset.max_streamlines)}});
       }},
      {"track",
       [&](const json& s) {
         apply_section(s, "track",
                       {{"alpha", set(tracking.track.alpha)},
                        {"mode",
                         [&](const json& v) {
                           mode = v.get<std::string>();
                           mode_set = true;
                         }},
                        {"entropy",
                         [&](const json& v) {
                           entropy = v.get<std::vector<double>>();
                           entropy_set = true;
                         }},
                        {"max_angle", set(tracking.track.max_angle_deg)},
                        {"min_mm", set(tracking.track.min_length_mm)},
                        {"max_mm", set(tracking.track.max_length_mm)},
                        {"max_steps", set(tracking.track.max_steps)},
                        {"seed", set(tracking.track.seed)},
                        {"threads", set(tracking.track.threads)},
                        {"seeds", set(tracking.seeds)},
                        {"repetitions", set(tracking.repetitions)}});
       }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = sections.find(key);
    if (it == sections.end()) throw InvalidArgument("config: unknown key '" + key + "'");
    it->second(value);
  }
  if (mode_set) tracking.track.mode = parse_track_mode(mode);
  if (entropy_set) {
    if (entropy.size() != 3) throw InvalidArgument("config: 'track.entropy' must be [a, b, c]");
    tracking.track.entropy_a = entropy[0];
    tracking.track.entropy_b = entropy[1];
    tracking.track.entropy_c = entropy[2];
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  merge_json(ss.str());
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["data"] = {{"num_directions", data.num_directions},
               {"input_directions", data.input_directions},
               {"sh_order", data.sh_order},
               {"sh_regularization", data.sh_regularization}};
  j["model"] = {{"num_layers", model.num_layers},
                {"hidden_size", model.hidden_size},
                {"dropout", model.dropout},
                {"seed", model.seed}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"epsilon", train.epsilon},
                {"batch_size", train.batch_size},
                {"clip_norm", train.clip_norm},
                {"epochs", train.epochs},
                {"tau", train.tau},
                {"seed", train.seed},
                {"threads", train.threads}};
  j["dataset"] = {{"split", dataset.split}, {"seed", dataset.seed}, {"max_streamlines", dataset.max_streamlines}};
  const auto& t = tracking.track;
  j["track"] = {{"alpha", t.alpha},
                {"mode", std::string(to_string(t.mode))},
                {"entropy", {t.entropy_a, t.entropy_b, t.entropy_c}},
                {"max_angle", t.max_angle_deg},
                {"min_mm", t.min_length_mm},
                {"max_mm", t.max_length_mm},
                {"max_steps", t.max_steps},
                {"seed", t.seed},
                {"threads", t.threads},
                {"seeds", tracking.seeds},
                {"repetitions", tracking.repetitions}};
  return j.dump(2);
}

}  // namespace rnntrack::cli

#include "latte/checkpoint.hpp"

#include "latte/error.hpp"
#include "latte/io.hpp"
#include "latte/training.hpp"

namespace latte {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir / "params");
  const Model& m = ckpt.model;
  json params = json::array();
  for (const auto& [name, t] : m.parameters()) {
    const std::string file = "params/" + name + ".latg";
    io::write_latg(dir / file, *t);
    params.push_back({{"name", name}, {"shape", t->shape()}, {"file", file}});
  }
  json cells = json::array();
  for (const Cell& c : ckpt.train_cells) cells.push_back({c.row, c.col});
  const Normalizer& n = m.normalizer;
  const json manifest = {
      {"format", "latte-checkpoint"},
      {"version", 1},
      {"model", model_config_to_json(m.config)},
      {"normalizer",
       {{"feature_mean", n.feature_mean},
        {"feature_scale", n.feature_scale},
        {"label_mean", n.label_mean},
        {"label_scale", n.label_scale}}},
      {"feature_names", ckpt.feature_names},
      {"train_cells", cells},
      {"parameters", params}};
  io::write_json(dir / "checkpoint.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const json j = io::read_json(dir / "checkpoint.json");
  Checkpoint ckpt;
  try {
    if (j.at("format") != "latte-checkpoint" || j.at("version") != 1) {
      throw ParseError(dir.string() + ": not a version-1 checkpoint");
    }
    const json& mc = j.at("model");
    const ModelConfig cfg = model_config_from_json(mc, mc.at("n_features").get<std::size_t>());
    ckpt.model = Model::initialize(cfg, 0);
    const json& n = j.at("normalizer");
    Normalizer& norm = ckpt.model.normalizer;
    norm.feature_mean = n.at("feature_mean").get<std::vector<double>>();
    norm.feature_scale = n.at("feature_scale").get<std::vector<double>>();
    norm.label_mean = n.at("label_mean").get<double>();
    norm.label_scale = n.at("label_scale").get<double>();
    if (norm.feature_mean.size() != cfg.n_features ||
        norm.feature_scale.size() != cfg.n_features) {
      throw ParseError(dir.string() + ": normalizer size does not match the model");
    }
    ckpt.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (const json& c : j.at("train_cells")) {
      ckpt.train_cells.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()});
    }
    const json& params = j.at("parameters");
    auto slots = ckpt.model.parameters();
    if (params.size() != slots.size()) {
      throw ParseError(dir.string() + ": expected " + std::to_string(slots.size()) +
                       " parameters, found " + std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const json& p = params[k];
      if (p.at("name") != slots[k].first) {
        throw ParseError(dir.string() + ": parameter " + std::to_string(k) + " is " +
                         p.at("name").get<std::string>() + ", expected " + slots[k].first);
      }
      Tensor t = io::read_latg(dir / p.at("file").get<std::string>());
      if (t.shape() != slots[k].second->shape()) {
        throw ParseError(dir.string() + ": parameter " + slots[k].first + " has shape " +
                         shape_string(t.shape()) + ", expected " +
                         shape_string(slots[k].second->shape()));
      }
      *slots[k].second = std::move(t);
    }
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + "/checkpoint.json: " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(dir.string() + "/checkpoint.json: " + e.what());
  }
  return ckpt;
}

}  // namespace latte

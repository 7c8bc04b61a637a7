#include "latte/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "latte/baselines.hpp"
#include "latte/checkpoint.hpp"
#include "latte/error.hpp"
#include "latte/io.hpp"
#include "latte/synthetic.hpp"
#include "latte/training.hpp"
#include "latte/variogram.hpp"

namespace latte::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// ---- run manifest ---------------------------------------------------------

std::vector<fs::path> files_under(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json") {
        out.push_back(e.path());
      }
    }
  } else if (fs::exists(p)) {
    out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  Clock::time_point start = Clock::now();

  void write(const fs::path& path) const {
    json digests = json::object();
    for (const fs::path& in : inputs) {
      for (const fs::path& f : files_under(in)) digests[f.string()] = io::file_digest(f);
    }
    json outs = json::array();
    for (const fs::path& o : outputs) outs.push_back(o.string());
    const double wall =
        std::chrono::duration<double>(Clock::now() - start).count();
    io::write_json(path, {{"command", command},
                          {"config", config},
                          {"config_hash", io::sha256_hex(config.dump())},
                          {"seed", seed},
                          {"inputs", digests},
                          {"outputs", outs},
                          {"wall_time_s", wall}});
  }
};

// ---- helpers --------------------------------------------------------------

std::size_t count_if_selected(const Model& model) {
  const auto sel = selected_features(model.sparse);
  return static_cast<std::size_t>(std::count(sel.begin(), sel.end(), true));
}

std::pair<std::size_t, std::size_t> parse_time_range(const std::string& text,
                                                     std::size_t steps) {
  if (text.empty()) return {0, steps};
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("--time-range must look like BEGIN:END, got '" + text + "'");
  }
  auto parse = [&](const std::string& s, std::size_t fallback) -> std::size_t {
    if (s.empty()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size() || v < 0) throw std::invalid_argument(s);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("--time-range bound '" + s + "' is not a nonnegative integer");
    }
  };
  const std::size_t b = parse(text.substr(0, colon), 0);
  const std::size_t e = parse(text.substr(colon + 1), steps);
  if (b >= e || e > steps) {
    throw ConfigError("--time-range " + text + " is empty or exceeds " +
                      std::to_string(steps) + " time steps");
  }
  return {b, e};
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  return io::read_json(path);
}

struct RunConfig {
  json raw;
  json model;
  TrainConfig train;
};

RunConfig run_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig rc;
  rc.raw = read_config(path);
  rc.model = rc.raw.value("model", json::object());
  rc.train = train_config_from_json(rc.raw.value("train", json::object()));
  if (seed) rc.train.seed = *seed;
  return rc;
}

std::vector<Cell> union_cells(const std::vector<Cell>& a, const std::vector<Cell>& b) {
  std::set<Cell> s(a.begin(), a.end());
  s.insert(b.begin(), b.end());
  return {s.begin(), s.end()};
}

LocationSplit split_for(const io::Dataset& d, const std::string& split_path,
                        std::uint64_t seed) {
  if (!split_path.empty()) return io::split_from_json(io::read_json(split_path));
  return split_locations(d.labels.labeled_cells(), d.features.spec, seed);
}

void write_prediction_csv(const fs::path& path, const Tensor& pred, const GridSpec& spec,
                          std::size_t t_begin) {
  std::ostringstream os;
  os.precision(17);
  os << "time_index,row,col,easting_m,northing_m,prediction\n";
  const std::size_t h = spec.height, w = spec.width;
  for (std::size_t t = 0; t < pred.dim(0); ++t) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto [e, n] = spec.cell_center({r, c});
        os << (t + t_begin) << ',' << r << ',' << c << ',' << e << ',' << n << ','
           << pred[(t * h + r) * w + c] << '\n';
      }
    }
  }
  io::write_text(path, os.str());
}

Tensor slice_time(const Tensor& x, std::size_t b, std::size_t e) {
  const std::size_t frame = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = e - b;
  std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(b * frame),
                        x.data().begin() + static_cast<std::ptrdiff_t>(e * frame));
  return Tensor(std::move(s), std::move(v));
}

void check_feature_names(const Checkpoint& ckpt, const io::Dataset& d) {
  if (ckpt.feature_names != d.features.feature_names) {
    throw ConfigError("checkpoint features do not match the data set features");
  }
}

// Metrics per split plus, with a truth field, over every cell.
json evaluate_all(const Tensor& pred, const io::Dataset& d, const LocationSplit* split,
                  std::size_t t_begin, std::size_t t_end) {
  const Tensor labels = slice_time(d.labels.values, t_begin, t_end);
  const Tensor mask = slice_time(d.labels.mask, t_begin, t_end);
  json out = json::object();
  auto add = [&](const std::string& name, const Tensor& m) {
    double n = 0.0;
    for (double v : m.data()) n += v;
    if (n == 0.0) return;
    out[name] = metrics_to_json(evaluate(pred, labels, m));
  };
  add("all", mask);
  if (split) {
    add("train", cell_mask(split->train, mask));
    add("val", cell_mask(split->val, mask));
    add("test", cell_mask(split->test, mask));
  }
  if (d.truth) {
    const Tensor truth = slice_time(*d.truth, t_begin, t_end);
    out["full_field"] = metrics_to_json(evaluate(pred, truth, Tensor(truth.shape(), 1.0)));
  }
  return out;
}

// ---- commands -------------------------------------------------------------

struct Options {
  std::string config, out, data, checkpoint, method = "model", drop, time_range,
      export_csv, split, pred, points, values;
  std::optional<std::uint64_t> seed;
  std::size_t time = 0;
  double lag_size = 0.1;
};

int cmd_generate(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "generate";
  json cfg_json = read_config(o.config);
  SceneConfig cfg = scene_config_from_json(cfg_json);
  if (o.seed) cfg.seed = *o.seed;
  m.config = scene_config_to_json(cfg);
  m.seed = cfg.seed;
  if (!o.config.empty()) m.inputs.push_back(o.config);
  const SyntheticScene scene = generate_scene(cfg);
  const fs::path dir = o.out;
  json extra = {{"scene", scene_config_to_json(cfg)},
                {"relevant_feature_ids", scene.relevant_feature_ids}};
  io::write_dataset(dir, {scene.features, scene.labels, scene.truth}, extra);
  io::write_sensors_csv(dir / "sensors.csv", scene_readings(scene));
  m.outputs = {dir / "manifest.json", dir / "sensors.csv"};
  m.write(dir / "run_manifest.json");
  out << "scene written to " << dir.string() << '\n';
  return kOk;
}

int cmd_ingest(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "ingest";
  const json cfg = read_config(o.config);
  m.config = cfg;
  m.inputs.push_back(o.config);
  const fs::path base = fs::path(o.config).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  try {
    const GridSpec spec = io::grid_from_json(cfg.at("grid"));
    spec.validate();
    const std::size_t steps = cfg.at("time_steps").get<std::size_t>();
    if (steps == 0) throw ConfigError("time_steps must be positive");
    const std::size_t h = spec.height, w = spec.width;

    FeatureGrid fg;
    fg.spec = spec;
    fg.time_steps = steps;
    const json dyn = cfg.value("dynamic_layers", json::array());
    const json stat = cfg.value("static_layers", json::array());
    fg.dynamic = Tensor({steps, h, w, dyn.size()});
    fg.statics = Tensor({h, w, stat.size()});
    for (std::size_t k = 0; k < dyn.size(); ++k) {
      const json& layer = dyn[k];
      fg.feature_names.push_back(layer.at("name").get<std::string>());
      const fs::path vp = resolve(layer.at("values").get<std::string>());
      m.inputs.push_back(vp);
      const Tensor coarse = io::read_latg(vp);
      const GridSpec cspec = io::grid_from_json(layer.at("grid"));
      if (coarse.shape() != Shape{steps, cspec.height, cspec.width}) {
        throw ShapeError(vp.string() + ": expected [" + std::to_string(steps) + ", " +
                         std::to_string(cspec.height) + ", " + std::to_string(cspec.width) +
                         "], got " + shape_string(coarse.shape()));
      }
      for (std::size_t t = 0; t < steps; ++t) {
        const Tensor up = upscale_cubic({cspec, slice_time(coarse, t, t + 1).reshaped(
                                                    {cspec.height, cspec.width})},
                                        spec);
        for (std::size_t i = 0; i < h * w; ++i) fg.dynamic[(t * h * w + i) * dyn.size() + k] = up[i];
      }
    }
    for (std::size_t k = 0; k < stat.size(); ++k) {
      const json& layer = stat[k];
      fg.feature_names.push_back(layer.at("name").get<std::string>());
      const fs::path pp = resolve(layer.at("primitives").get<std::string>());
      m.inputs.push_back(pp);
      const Tensor f = rasterize_features(io::read_primitives_json(pp), spec,
                                          io::parse_aggregator(layer.at("aggregator")));
      for (std::size_t i = 0; i < h * w; ++i) fg.statics[i * stat.size() + k] = f[i];
    }
    const fs::path sp = resolve(cfg.at("sensors").get<std::string>());
    m.inputs.push_back(sp);
    const SensorMapping mapped = map_sensors_to_labels(io::read_sensors_csv(sp), spec, steps);
    fg.validate();

    const fs::path dir = o.out;
    io::write_dataset(dir, {fg, mapped.labels, std::nullopt},
                      {{"rejected_readings", mapped.rejected.size()}});
    io::write_sensors_csv(dir / "rejected_sensors.csv", mapped.rejected);
    m.outputs = {dir / "manifest.json", dir / "rejected_sensors.csv"};
    m.write(dir / "run_manifest.json");
    out << "ingested " << fg.feature_count() << " features; " << mapped.rejected.size()
        << " readings rejected\n";
  } catch (const json::exception& e) {
    throw ParseError(o.config + ": " + e.what());
  }
  return kOk;
}

void write_training_outputs(const fs::path& dir, const TrainResult& r, const Checkpoint& ckpt,
                            const LocationSplit& split, Manifest& m) {
  save_checkpoint(dir / "checkpoint", ckpt);
  io::write_text(dir / "history.csv", r.history.to_csv());
  io::write_json(dir / "split.json", io::split_to_json(split));
  fs::create_directories(dir / "variogram");
  m.outputs = {dir / "checkpoint", dir / "history.csv", dir / "split.json"};
  for (const json& rep : r.history.variogram_reports) {
    std::ostringstream name;
    name << "epoch_" << rep.at("epoch").get<std::size_t>() << ".json";
    io::write_json(dir / "variogram" / name.str(), rep);
    m.outputs.push_back(dir / "variogram" / name.str());
  }
}

int cmd_train(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "train";
  const RunConfig rc = run_config(o.config, o.seed);
  m.config = rc.raw;
  m.seed = rc.train.seed;
  m.inputs = {o.data};
  if (!o.config.empty()) m.inputs.push_back(o.config);
  if (!o.split.empty()) m.inputs.push_back(o.split);
  const io::Dataset d = io::read_dataset(o.data);
  const LocationSplit split = split_for(d, o.split, rc.train.seed);
  const ModelConfig mc = model_config_from_json(rc.model, d.features.feature_count());
  const TrainingSet ts = make_training_set(d.features, d.labels);
  const TrainResult r = train(Model::initialize(mc, rc.train.seed), ts, split, rc.train);
  const Checkpoint ckpt{r.model, d.features.feature_names, split.train};
  write_training_outputs(o.out, r, ckpt, split, m);
  m.write(fs::path(o.out) / "run_manifest.json");
  out << "best epoch " << r.history.best_epoch << ", val RMSE "
      << r.history.epochs[r.history.best_epoch].val_rmse << '\n';
  return kOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "finetune";
  const RunConfig rc = run_config(o.config, o.seed);
  m.config = rc.raw;
  m.seed = rc.train.seed;
  m.inputs = {o.checkpoint, o.data};
  if (!o.config.empty()) m.inputs.push_back(o.config);
  if (!o.split.empty()) m.inputs.push_back(o.split);
  const Checkpoint prior = load_checkpoint(o.checkpoint);
  const io::Dataset d = io::read_dataset(o.data);
  check_feature_names(prior, d);
  const LocationSplit split = split_for(d, o.split, rc.train.seed);
  const TrainingSet ts = make_training_set(d.features, d.labels);
  const TrainResult r = fine_tune(prior.model, ts, split, prior.train_cells, rc.train);
  const Checkpoint ckpt{r.model, d.features.feature_names,
                        union_cells(prior.train_cells, split.train)};
  write_training_outputs(o.out, r, ckpt, split, m);
  m.write(fs::path(o.out) / "run_manifest.json");
  out << "best epoch " << r.history.best_epoch << ", val RMSE "
      << r.history.epochs[r.history.best_epoch].val_rmse << '\n';
  return kOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "predict";
  m.seed = o.seed.value_or(0);
  m.inputs = {o.data};
  const io::Dataset d = io::read_dataset(o.data);
  const auto [t0, t1] = parse_time_range(o.time_range, d.features.time_steps);
  Tensor pred;
  if (o.method == "model") {
    if (o.checkpoint.empty()) throw ConfigError("--method model needs --checkpoint");
    m.inputs.push_back(o.checkpoint);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    check_feature_names(ckpt, d);
    pred = predict_field(ckpt.model, make_training_set(d.features, d.labels).features, t0, t1);
  } else if (o.method == "idw" || o.method == "ok") {
    std::vector<Cell> cells = d.labels.labeled_cells();
    if (!o.split.empty()) {
      m.inputs.push_back(o.split);
      const LocationSplit s = io::split_from_json(io::read_json(o.split));
      cells = union_cells(s.train, s.val);
    }
    pred = interpolate_field(d.labels, d.features.spec, cells,
                             o.method == "idw" ? BaselineMethod::kIdw : BaselineMethod::kOk,
                             t0, t1);
  } else {
    throw ConfigError("--method must be model, idw or ok");
  }
  m.config = {{"method", o.method}, {"time_begin", t0}, {"time_end", t1}};
  const fs::path path = o.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_latg(path, pred);
  m.outputs = {path};
  if (!o.export_csv.empty()) {
    write_prediction_csv(o.export_csv, pred, d.features.spec, t0);
    m.outputs.push_back(o.export_csv);
  }
  m.write(path.string() + ".manifest.json");
  out << "predicted " << (t1 - t0) << " time steps with " << o.method << '\n';
  return kOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "evaluate";
  m.inputs = {o.pred, o.data};
  const io::Dataset d = io::read_dataset(o.data);
  const Tensor pred = io::read_latg(o.pred);
  std::size_t t0 = 0;
  std::size_t t1 = pred.rank() > 0 ? pred.dim(0) : 0;
  if (!o.time_range.empty()) {
    std::tie(t0, t1) = parse_time_range(o.time_range, d.features.time_steps);
  } else if (fs::exists(o.pred + ".manifest.json")) {
    const json pm = io::read_json(o.pred + ".manifest.json");
    t0 = pm.at("config").value("time_begin", std::size_t{0});
    t1 = pm.at("config").value("time_end", t1);
  }
  const GridSpec& spec = d.features.spec;
  if (pred.shape() != Shape{t1 - t0, spec.height, spec.width} || t1 > d.features.time_steps) {
    throw ShapeError("prediction " + shape_string(pred.shape()) +
                     " does not cover time steps [" + std::to_string(t0) + ", " +
                     std::to_string(t1) + ") of the grid");
  }
  std::optional<LocationSplit> split;
  if (!o.split.empty()) {
    m.inputs.push_back(o.split);
    split = io::split_from_json(io::read_json(o.split));
  }
  json metrics = evaluate_all(pred, d, split ? &*split : nullptr, t0, t1);
  metrics["time_begin"] = t0;
  metrics["time_end"] = t1;
  m.config = {{"time_begin", t0}, {"time_end", t1}};
  io::write_json(o.out, metrics);
  m.outputs = {o.out};
  m.write(o.out + ".manifest.json");
  out << metrics.dump(2) << '\n';
  return kOk;
}

int cmd_variogram(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "variogram";
  Tensor points;
  std::vector<double> values;
  if (!o.points.empty()) {
    m.inputs = {o.points, o.values};
    points = io::read_latg(o.points);
    const Tensor v = io::read_latg(o.values);
    values.assign(v.data().begin(), v.data().end());
  } else {
    if (o.data.empty()) throw ConfigError("variogram needs --points/--values or --data");
    m.inputs = {o.data};
    const io::Dataset d = io::read_dataset(o.data);
    if (o.time >= d.features.time_steps) throw ConfigError("--time outside the data set");
    std::vector<Cell> cells;
    for (const Cell& c : d.labels.labeled_cells()) {
      if (d.labels.observed(o.time, c)) cells.push_back(c);
    }
    if (cells.size() < 2) throw InsufficientSamples("fewer than two labeled cells at --time");
    std::size_t dims = 2;
    Tensor emb;
    if (!o.checkpoint.empty()) {
      m.inputs.push_back(o.checkpoint);
      const Checkpoint ckpt = load_checkpoint(o.checkpoint);
      check_feature_names(ckpt, d);
      emb = embeddings_at(ckpt.model, make_training_set(d.features, d.labels).features, o.time);
      dims = emb.shape().back();
    }
    points = Tensor({cells.size(), dims});
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const Cell c = cells[k];
      values.push_back(d.labels.value(o.time, c));
      if (emb.size() > 0) {
        for (std::size_t q = 0; q < dims; ++q) {
          points[k * dims + q] = emb[(c.row * d.features.spec.width + c.col) * dims + q];
        }
      } else {
        const auto [e, n] = d.features.spec.cell_center(c);
        points[k * 2] = e;
        points[k * 2 + 1] = n;
      }
    }
  }
  if (points.rank() != 2 || points.dim(0) != values.size()) {
    throw ShapeError("points must be [n, d] with one value per point");
  }
  const Tensor lags = pairwise_lags(points);
  const VariogramBins bins = empirical_semivariogram(lags, values, o.lag_size);
  FitOptions fo;
  fo.seed = o.seed.value_or(0);
  const FitResult fit = fit_gaussian_model(bins, fo);
  json report = variogram_report(bins, fit, 5);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  io::write_json(dir / "variogram.json", report);
  std::ostringstream csv;
  csv.precision(17);
  csv << "lag_center,count,gamma,fitted\n";
  for (std::size_t b = 0; b < bins.size(); ++b) {
    csv << bins.center(b) << ',' << bins.counts[b] << ',';
    if (bins.populated(b)) csv << bins.gamma[b];
    csv << ',' << fit.model(bins.center(b)) << '\n';
  }
  io::write_text(dir / "variogram.csv", csv.str());
  m.config = {{"lag_size", o.lag_size}, {"time", o.time}};
  m.seed = fo.seed;
  m.outputs = {dir / "variogram.json", dir / "variogram.csv"};
  m.write(dir / "run_manifest.json");
  out << "nugget " << fit.model.nugget << " sill " << fit.model.sill << " range "
      << fit.model.range << '\n';
  return kOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  Manifest m;
  m.command = "ablate";
  const RunConfig rc = run_config(o.config, o.seed);
  m.config = rc.raw;
  m.config["drop"] = o.drop;
  m.seed = rc.train.seed;
  m.inputs = {o.data};
  if (!o.config.empty()) m.inputs.push_back(o.config);
  TrainConfig ablated = rc.train;
  if (o.drop == "feature_selection") {
    ablated.weights.alpha = 0.0;
  } else if (o.drop == "autocorrelation") {
    ablated.weights.eta = 0.0;
  } else {
    throw ConfigError("--drop must be feature_selection or autocorrelation");
  }
  const io::Dataset d = io::read_dataset(o.data);
  const LocationSplit split = split_for(d, o.split, rc.train.seed);
  const ModelConfig mc = model_config_from_json(rc.model, d.features.feature_count());
  const TrainingSet ts = make_training_set(d.features, d.labels);
  const std::size_t t0 = mc.window - 1, t1 = d.features.time_steps;
  auto run_one = [&](const TrainConfig& cfg) {
    const TrainResult r = train(Model::initialize(mc, cfg.seed), ts, split, cfg);
    const Tensor pred = predict_field(r.model, ts.features, t0, t1);
    json j = evaluate_all(pred, d, &split, t0, t1);
    j["selected_features"] = count_if_selected(r.model);
    j["best_epoch"] = r.history.best_epoch;
    return j;
  };
  json full = run_one(rc.train);
  json abl = run_one(ablated);
  const char* key = d.truth ? "full_field" : "test";
  json cmp = {{"drop", o.drop},
              {"time_begin", t0},
              {"time_end", t1},
              {"full", full},
              {"ablated", abl},
              {"metric", std::string(key) + ".rmse"}};
  if (full.contains(key) && abl.contains(key)) {
    const double a = full[key]["rmse"], b = abl[key]["rmse"];
    cmp["full_rmse"] = a;
    cmp["ablated_rmse"] = b;
    cmp["rmse_increase_pct"] = 100.0 * (b - a) / a;
    cmp["full_not_worse"] = a <= b;
  }
  const fs::path dir = o.out;
  fs::create_directories(dir);
  io::write_json(dir / "comparison.json", cmp);
  m.outputs = {dir / "comparison.json"};
  m.write(dir / "run_manifest.json");
  out << cmp.dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fine-scale spatiotemporal prediction from sparse labels"};
  app.require_subcommand(1);
  Options o;
  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s; }, "Seed for every random choice");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic scene");
  gen->add_option("--config", o.config, "Scene config JSON");
  gen->add_option("--out", o.out, "Output data directory")->required();
  seed_opt(gen);

  auto* ing = app.add_subcommand("ingest", "Build a data set from sensors, primitives and coarse fields");
  ing->add_option("--config", o.config, "Ingest config JSON")->required()->check(CLI::ExistingFile);
  ing->add_option("--out", o.out, "Output data directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", o.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--config", o.config, "Run config JSON {model, train}")->check(CLI::ExistingFile);
  tr->add_option("--split", o.split, "Split JSON (default: seeded split of labeled cells)");
  tr->add_option("--out", o.out, "Output run directory")->required();
  seed_opt(tr);

  auto* ft = app.add_subcommand("finetune", "Continue training on a new period");
  ft->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--data", o.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--config", o.config, "Run config JSON {model, train}")->check(CLI::ExistingFile);
  ft->add_option("--split", o.split, "Split JSON (default: seeded split of labeled cells)");
  ft->add_option("--out", o.out, "Output run directory")->required();
  seed_opt(ft);

  auto* pr = app.add_subcommand("predict", "Predict every cell");
  pr->add_option("--data", o.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint directory (method model)");
  pr->add_option("--method", o.method, "model | idw | ok");
  pr->add_option("--split", o.split, "Split JSON; baselines use its train and val cells");
  pr->add_option("--time-range", o.time_range, "BEGIN:END, half-open");
  pr->add_option("--out", o.out, "Output LATG file")->required();
  pr->add_option("--export-csv", o.export_csv, "Also write a CSV export");
  seed_opt(pr);

  auto* ev = app.add_subcommand("evaluate", "RMSE and R2 per split");
  ev->add_option("--pred", o.pred, "Prediction LATG file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", o.data, "Data directory with labels")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", o.split, "Split JSON")->check(CLI::ExistingFile);
  ev->add_option("--time-range", o.time_range, "BEGIN:END covered by the prediction");
  ev->add_option("--out", o.out, "Output metrics JSON")->required();

  auto* vg = app.add_subcommand("variogram", "Empirical semivariogram and Gaussian fit");
  vg->add_option("--points", o.points, "Points LATG [n, d]");
  vg->add_option("--values", o.values, "Values LATG [n]");
  vg->add_option("--data", o.data, "Data directory (labels at --time)");
  vg->add_option("--checkpoint", o.checkpoint, "Use model embeddings as points");
  vg->add_option("--time", o.time, "Time index");
  vg->add_option("--lag-size", o.lag_size, "Lag bin width on the rescaled axis");
  vg->add_option("--out", o.out, "Output directory")->required();
  seed_opt(vg);

  auto* ab = app.add_subcommand("ablate", "Full model versus one dropped component");
  ab->add_option("--data", o.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--config", o.config, "Run config JSON {model, train}")->check(CLI::ExistingFile);
  ab->add_option("--split", o.split, "Split JSON");
  ab->add_option("--drop", o.drop, "feature_selection | autocorrelation")->required();
  ab->add_option("--out", o.out, "Output directory")->required();
  seed_opt(ab);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  }

  try {
    if (*gen) return cmd_generate(o, out);
    if (*ing) return cmd_ingest(o, out);
    if (*tr) return cmd_train(o, out);
    if (*ft) return cmd_finetune(o, out);
    if (*pr) return cmd_predict(o, out);
    if (*ev) return cmd_evaluate(o, out);
    if (*vg) return cmd_variogram(o, out);
    if (*ab) return cmd_ablate(o, out);
  } catch (const DivergenceError& e) {
    err << "diverged (" << e.term() << "): " << e.what() << '\n';
    return kDivergence;
  } catch (const FitDiverged& e) {
    err << "variogram fit diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const DomainError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  }
  return kValidationError;
}

}  // namespace latte::cli

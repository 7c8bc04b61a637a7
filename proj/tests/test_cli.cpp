#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "latte/baselines.hpp"
#include "latte/checkpoint.hpp"
#include "latte/cli.hpp"
#include "latte/io.hpp"
#include "latte/training.hpp"

using namespace latte;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latte_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A 16 x 16 x 24 scene and a small, fast model.
void write_configs(const fs::path& dir) {
  io::write_json(dir / "scene.json", {{"height", 16},
                                      {"width", 16},
                                      {"time_steps", 24},
                                      {"dynamic_features", 2},
                                      {"static_features", 4},
                                      {"n_relevant", 3},
                                      {"n_sensors", 30},
                                      {"noise_std", 0.2}});
  io::write_json(dir / "run.json",
                 {{"model", {{"latent_dim", 4}, {"ae_hidden", 8}, {"hidden", 3},
                             {"head_hidden", 8}, {"kernels", {1, 3}}, {"window", 3}}},
                  {"train", {{"max_epochs", 3}, {"patience", 3}, {"lr", 0.01}}}});
}

// generate -> train -> predict into `dir`; returns the prediction path.
fs::path pipeline(const fs::path& dir) {
  write_configs(dir);
  const std::string s = "7";
  REQUIRE(run({"generate", "--config", (dir / "scene.json").string(), "--out",
               (dir / "data").string(), "--seed", s}).code == 0);
  REQUIRE(run({"train", "--data", (dir / "data").string(), "--config",
               (dir / "run.json").string(), "--out", (dir / "run").string(), "--seed", s})
              .code == 0);
  const fs::path pred = dir / "pred.latg";
  REQUIRE(run({"predict", "--data", (dir / "data").string(), "--checkpoint",
               (dir / "run" / "checkpoint").string(), "--time-range", "2:24", "--out",
               pred.string(), "--seed", s}).code == 0);
  return pred;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("generate, train, predict, evaluate round trip") {
    const fs::path dir = scratch("roundtrip");
    const fs::path pred = pipeline(dir);
    for (const char* f : {"data/manifest.json", "data/sensors.csv", "data/run_manifest.json",
                          "run/history.csv", "run/split.json", "run/run_manifest.json",
                          "run/checkpoint", "pred.latg.manifest.json"}) {
      CAPTURE(f);
      CHECK(fs::exists(dir / f));
    }
    CHECK(io::read_latg(pred).shape() == Shape{22, 16, 16});

    const fs::path metrics = dir / "metrics.json";
    const Outcome ev = run({"evaluate", "--pred", pred.string(), "--data",
                            (dir / "data").string(), "--split",
                            (dir / "run" / "split.json").string(), "--out", metrics.string()});
    REQUIRE(ev.code == 0);
    const nlohmann::json m = io::read_json(metrics);
    for (const char* k : {"all", "train", "val", "test", "full_field"}) {
      CAPTURE(k);
      REQUIRE(m.contains(k));
      CHECK(m[k]["rmse"].get<double>() >= 0.0);
    }
    CHECK(m["time_begin"] == 2);
    CHECK(m["time_end"] == 24);

    const nlohmann::json manifest = io::read_json(dir / "run" / "run_manifest.json");
    CHECK(manifest["command"] == "train");
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["config_hash"].get<std::string>().size() == 64);
    CHECK(!manifest["inputs"].empty());

    const Outcome vg = run({"variogram", "--data", (dir / "data").string(), "--checkpoint",
                            (dir / "run" / "checkpoint").string(), "--time", "10", "--out",
                            (dir / "vg").string()});
    CHECK(vg.code == 0);
    CHECK(fs::exists(dir / "vg" / "variogram.json"));
    CHECK(bytes(dir / "vg" / "variogram.csv").rfind("lag_center,count,gamma,fitted", 0) == 0);
  }

  TEST_CASE("identical seeds give byte-identical artifacts") {
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    const fs::path pa = pipeline(a);
    const fs::path pb = pipeline(b);
    CHECK(bytes(pa) == bytes(pb));
    CHECK(bytes(a / "run" / "history.csv") == bytes(b / "run" / "history.csv"));
    CHECK(bytes(a / "data" / "labels.latg") == bytes(b / "data" / "labels.latg"));
  }

  TEST_CASE("evaluate on the labels themselves is perfect") {
    const fs::path dir = scratch("identity");
    write_configs(dir);
    REQUIRE(run({"generate", "--config", (dir / "scene.json").string(), "--out",
                 (dir / "data").string()}).code == 0);
    io::write_latg(dir / "labels_as_pred.latg", io::read_latg(dir / "data" / "labels.latg"));
    REQUIRE(run({"evaluate", "--pred", (dir / "labels_as_pred.latg").string(), "--data",
                 (dir / "data").string(), "--out", (dir / "m.json").string()}).code == 0);
    const nlohmann::json m = io::read_json(dir / "m.json");
    CHECK(m["all"]["rmse"] == 0.0);
    CHECK(m["all"]["r2"] == 1.0);
  }

  TEST_CASE("IDW and OK predictions match the baselines module bit for bit") {
    const fs::path dir = scratch("idw");
    write_configs(dir);
    REQUIRE(run({"generate", "--config", (dir / "scene.json").string(), "--out",
                 (dir / "data").string()}).code == 0);
    const io::Dataset d = io::read_dataset(dir / "data");
    const LocationSplit split = split_locations(d.labels.labeled_cells(), d.features.spec, 1);
    io::write_json(dir / "split.json", io::split_to_json(split));
    std::vector<Cell> cells = split.train;
    cells.insert(cells.end(), split.val.begin(), split.val.end());
    std::sort(cells.begin(), cells.end());

    REQUIRE(run({"predict", "--data", (dir / "data").string(), "--method", "idw", "--split",
                 (dir / "split.json").string(), "--time-range", "3:6", "--out",
                 (dir / "idw.latg").string(), "--export-csv", (dir / "idw.csv").string()})
                .code == 0);
    const Tensor direct = interpolate_field(d.labels, d.features.spec, cells,
                                            BaselineMethod::kIdw, 3, 6);
    CHECK(io::read_latg(dir / "idw.latg") == direct);
    CHECK(bytes(dir / "idw.csv").rfind("time_index,row,col,", 0) == 0);

    REQUIRE(run({"predict", "--data", (dir / "data").string(), "--method", "ok", "--split",
                 (dir / "split.json").string(), "--time-range", "0:2", "--out",
                 (dir / "ok.latg").string()}).code == 0);
    CHECK(io::read_latg(dir / "ok.latg") ==
          interpolate_field(d.labels, d.features.spec, cells, BaselineMethod::kOk, 0, 2));
  }

  TEST_CASE("ingest builds a data set from raw files") {
    const fs::path dir = scratch("ingest");
    io::write_text(dir / "sensors.csv",
                   "sensor_id,easting_m,northing_m,time_index,value\n"
                   "a,5,5,0,1.0\na,5,5,1,2.0\nb,35,25,0,3.0\nb,35,25,1,4.0\nc,99,99,0,9.0\n");
    io::write_json(dir / "roads.json", nlohmann::json::array(
        {{{"kind", "polyline"}, {"coords", {{0, 5}, {40, 5}}}}}));
    io::write_latg(dir / "coarse.latg", Tensor({2, 4, 4}, 1.5));
    io::write_json(dir / "ingest.json",
                   {{"grid", {{"cell_size", 10.0}, {"height", 3}, {"width", 4}}},
                    {"time_steps", 2},
                    {"sensors", "sensors.csv"},
                    {"static_layers", {{{"name", "roads"}, {"primitives", "roads.json"},
                                        {"aggregator", "sum_length"}}}},
                    {"dynamic_layers", {{{"name", "temp"}, {"values", "coarse.latg"},
                                         {"grid", {{"cell_size", 10.0}, {"height", 4},
                                                   {"width", 4}}}}}}});
    const Outcome o = run({"ingest", "--config", (dir / "ingest.json").string(), "--out",
                           (dir / "data").string()});
    REQUIRE(o.code == 0);
    const io::Dataset d = io::read_dataset(dir / "data");
    CHECK(d.features.feature_names == std::vector<std::string>{"temp", "roads"});
    CHECK(d.labels.value(1, {0, 0}) == 2.0);
    CHECK(d.labels.value(0, {2, 3}) == 3.0);
    CHECK(d.features.statics.at({0, 1, 0}) == doctest::Approx(10.0));
    CHECK(d.features.dynamic.at({1, 2, 2, 0}) == doctest::Approx(1.5));
    CHECK(io::read_sensors_csv(dir / "data" / "rejected_sensors.csv").size() == 1);
  }

  TEST_CASE("exit codes") {
    const fs::path dir = scratch("codes");
    write_configs(dir);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({}).code == 2);
    CHECK(run({"train", "--out", (dir / "x").string()}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);

    io::write_json(dir / "bad_scene.json", {{"temporal_ar", 1.5}});
    const Outcome bad = run({"generate", "--config", (dir / "bad_scene.json").string(),
                             "--out", (dir / "d").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("temporal_ar") != std::string::npos);

    REQUIRE(run({"generate", "--config", (dir / "scene.json").string(), "--out",
                 (dir / "data").string()}).code == 0);
    CHECK(run({"predict", "--data", (dir / "data").string(), "--method", "idw",
               "--time-range", "5:2", "--out", (dir / "p.latg").string()}).code == 2);
    CHECK(run({"predict", "--data", (dir / "data").string(), "--method", "kriging",
               "--out", (dir / "p.latg").string()}).code == 2);
    CHECK(run({"ablate", "--data", (dir / "data").string(), "--drop", "everything",
               "--out", (dir / "ab").string()}).code == 2);

    io::write_text(dir / "broken.csv", "sensor_id,easting_m,northing_m,time_index,value\nq,1,2,zero,4\n");
    io::write_json(dir / "ingest.json", {{"grid", {{"cell_size", 10.0}, {"height", 2}, {"width", 2}}},
                                         {"time_steps", 1},
                                         {"sensors", "broken.csv"}});
    const Outcome parse = run({"ingest", "--config", (dir / "ingest.json").string(), "--out",
                               (dir / "ing").string()});
    CHECK(parse.code == 2);
    CHECK(parse.err.find(":2") != std::string::npos);
    CHECK(parse.err.find("time_index") != std::string::npos);

    // An absurd learning rate overflows the parameters on the first step.
    io::write_json(dir / "wild.json",
                   {{"model", {{"latent_dim", 2}, {"ae_hidden", 2}, {"hidden", 1},
                               {"head_hidden", 2}, {"kernels", {1}}, {"window", 2}}},
                    {"train", {{"max_epochs", 2}, {"lr", 1e300}, {"clip_norm", 0.0}}}});
    const Outcome wild = run({"train", "--data", (dir / "data").string(), "--config",
                              (dir / "wild.json").string(), "--out", (dir / "wild").string()});
    CHECK(wild.code == 3);
    CHECK(wild.err.find("diverged") != std::string::npos);
  }

  TEST_CASE("the installed binary reports the same exit codes") {
    const std::string exe = LATTE_CLI_PATH;
    CHECK(std::system((exe + " --help > /dev/null").c_str()) == 0);
    const int code = std::system((exe + " predict --out /dev/null 2> /dev/null").c_str());
    REQUIRE(WIFEXITED(code));
    CHECK(WEXITSTATUS(code) == 2);
  }
}

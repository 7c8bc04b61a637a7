#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "latte/checkpoint.hpp"
#include "latte/error.hpp"
#include "latte/io.hpp"
#include "latte/rng.hpp"

using namespace latte;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latte_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("LATG layout is magic, version, rank, dims, float64 payload") {
    const Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6.5});
    const std::string bytes = io::encode_latg(t);
    std::string expected = "LATG";
    put_u32(expected, 1);
    put_u32(expected, 2);
    put_u32(expected, 2);
    put_u32(expected, 3);
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int k = 0; k < 8; ++k) expected.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
    }
    CHECK(bytes == expected);
    CHECK(io::decode_latg(bytes) == t);
  }

  TEST_CASE("LATG file round trip and malformed input") {
    const fs::path dir = scratch("latg");
    Rng rng(1);
    Tensor t({3, 2, 4});
    for (double& v : t.data()) v = rng.normal();
    io::write_latg(dir / "t.latg", t);
    CHECK(io::read_latg(dir / "t.latg") == t);
    CHECK(io::decode_latg(io::encode_latg(Tensor::scalar(3.0))).item() == 3.0);

    const std::string good = io::encode_latg(t);
    CHECK_THROWS_AS(io::decode_latg("LAT"), ParseError);
    CHECK_THROWS_AS(io::decode_latg("XXXX" + good.substr(4)), ParseError);
    CHECK_THROWS_AS(io::decode_latg(good.substr(0, good.size() - 3)), ParseError);
    std::string bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(io::decode_latg(bad_version), ParseError);
    CHECK_THROWS_AS(io::read_latg(dir / "missing.latg"), IoError);
  }

  TEST_CASE("sensor CSV round trip and diagnostics") {
    const fs::path dir = scratch("csv");
    const std::vector<SensorReading> rs{{"a", 1.5, 2.25, 0, 10.0},
                                        {"b", -3.0, 4.0, 7, 0.125}};
    io::write_sensors_csv(dir / "s.csv", rs);
    const auto back = io::read_sensors_csv(dir / "s.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].sensor_id == "b");
    CHECK(back[1].easting == -3.0);
    CHECK(back[1].time_index == 7);
    CHECK(back[1].value == 0.125);

    io::write_text(dir / "bad.csv",
                   "sensor_id,easting_m,northing_m,time_index,value\na,1,2,0,5\nb,1,x,0,5\n");
    try {
      io::read_sensors_csv(dir / "bad.csv");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(":3") != std::string::npos);
      CHECK(msg.find("northing") != std::string::npos);
    }
    io::write_text(dir / "hdr.csv", "id,x,y,t,v\n");
    CHECK_THROWS_AS(io::read_sensors_csv(dir / "hdr.csv"), ParseError);
    io::write_text(dir / "short.csv",
                   "sensor_id,easting_m,northing_m,time_index,value\na,1,2\n");
    CHECK_THROWS_AS(io::read_sensors_csv(dir / "short.csv"), ParseError);
  }

  TEST_CASE("primitives JSON") {
    const auto prims = io::parse_primitives(nlohmann::json::parse(R"([
      {"kind": "point", "coords": [[1, 2]], "attribute": 3},
      {"kind": "polyline", "coords": [[0, 0], [1, 1]]},
      {"kind": "polygon", "coords": [[0, 0], [1, 0], [1, 1]]}
    ])"));
    REQUIRE(prims.size() == 3);
    CHECK(prims[0].kind == PrimitiveKind::kPoint);
    CHECK(prims[0].attribute == 3.0);
    CHECK(prims[2].coords.size() == 3);
    CHECK_THROWS_AS(io::parse_primitives(nlohmann::json::parse(R"({"kind": "point"})")),
                    ParseError);
    CHECK_THROWS_AS(io::parse_primitives(nlohmann::json::parse(
                        R"([{"kind": "circle", "coords": [[0, 0]]}])")),
                    ParseError);
    CHECK(io::parse_aggregator("sum_length") == Aggregator::kSumLength);
    CHECK(io::parse_aggregator("mean_attribute") == Aggregator::kMeanAttribute);
    CHECK_THROWS_AS(io::parse_aggregator("median"), ParseError);
  }

  TEST_CASE("dataset directory round trip") {
    const fs::path dir = scratch("dataset");
    io::Dataset d;
    d.features.spec = GridSpec{10.0, 20.0, 5.0, 2, 3};
    d.features.time_steps = 2;
    d.features.dynamic = Tensor({2, 2, 3, 1}, 0.5);
    d.features.statics = Tensor({2, 3, 1}, -1.0);
    d.features.feature_names = {"dyn", "stat"};
    d.labels = LabelGrid::empty(2, d.features.spec);
    d.labels.values.at({1, 1, 2}) = 4.0;
    d.labels.mask.at({1, 1, 2}) = 1.0;
    d.truth = Tensor({2, 2, 3}, 1.0);
    io::write_dataset(dir, d, {{"note", "x"}});
    const io::Dataset back = io::read_dataset(dir);
    CHECK(back.features.spec == d.features.spec);
    CHECK(back.features.feature_names == d.features.feature_names);
    CHECK(back.features.dynamic == d.features.dynamic);
    CHECK(back.labels.values == d.labels.values);
    CHECK(back.labels.mask == d.labels.mask);
    REQUIRE(back.truth.has_value());
    CHECK(*back.truth == *d.truth);
    CHECK(io::read_json(dir / "manifest.json")["note"] == "x");
  }

  TEST_CASE("split JSON round trip") {
    LocationSplit s{{{0, 1}, {2, 3}}, {{4, 5}}, {{6, 7}}};
    const LocationSplit back = io::split_from_json(io::split_to_json(s));
    CHECK(back.train == s.train);
    CHECK(back.val == s.val);
    CHECK(back.test == s.test);
    CHECK_THROWS_AS(io::split_from_json(nlohmann::json::parse(R"({"train": 3})")), ParseError);
  }

  TEST_CASE("SHA-256 digests") {
    CHECK(io::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(io::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("checkpoint round trip") {
    const fs::path dir = scratch("ckpt");
    ModelConfig cfg;
    cfg.n_features = 3;
    cfg.latent_dim = 4;
    cfg.ae_hidden = 5;
    cfg.hidden = 2;
    cfg.head_hidden = 3;
    cfg.window = 3;
    Checkpoint c{Model::initialize(cfg, 7), {"a", "b", "c"}, {{0, 1}, {1, 1}}};
    c.model.normalizer.label_mean = 2.5;
    c.model.normalizer.feature_scale = {1.0, 2.0, 3.0};
    save_checkpoint(dir, c);
    const Checkpoint back = load_checkpoint(dir);
    CHECK(back.feature_names == c.feature_names);
    CHECK(back.train_cells == c.train_cells);
    CHECK(back.model.normalizer.label_mean == 2.5);
    CHECK(back.model.normalizer.feature_scale == c.model.normalizer.feature_scale);
    CHECK(back.model.config.kernels == cfg.kernels);
    const auto pa = c.model.parameters();
    const auto pb = back.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].first == pb[i].first);
      CHECK(*pa[i].second == *pb[i].second);
    }
    io::write_latg(dir / "params" / (pa[0].first + ".latg"), Tensor({1}, 0.0));
    CHECK_THROWS_AS(load_checkpoint(dir), ParseError);
  }
}

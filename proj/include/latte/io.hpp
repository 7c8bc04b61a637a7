#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latte/grid.hpp"
#include "latte/tensor.hpp"

namespace latte::io {

namespace fs = std::filesystem;
using nlohmann::json;

// LATG tensor file: ASCII "LATG", u32 version (1), u32 dims count, u32 dims,
// then float64 values in row-major order. All integers and floats are
// little-endian.
inline constexpr std::uint32_t kLatgVersion = 1;

void write_latg(const fs::path& path, const Tensor& tensor);
Tensor read_latg(const fs::path& path);
std::string encode_latg(const Tensor& tensor);
Tensor decode_latg(const std::string& bytes, const std::string& origin = "");

json grid_to_json(const GridSpec& spec);
GridSpec grid_from_json(const json& j);

// Header `sensor_id,easting_m,northing_m,time_index,value`.
std::vector<SensorReading> read_sensors_csv(const fs::path& path);
void write_sensors_csv(const fs::path& path,
                       const std::vector<SensorReading>& readings);

// Array of {"kind": "point"|"polyline"|"polygon", "coords": [[x,y],...],
// "attribute": number}.
std::vector<GeoPrimitive> parse_primitives(const json& j);
std::vector<GeoPrimitive> read_primitives_json(const fs::path& path);

Aggregator parse_aggregator(const std::string& name);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);
std::string read_bytes(const fs::path& path);

// A data directory holds manifest.json plus one LATG file per named tensor:
// dynamic.latg, static.latg, labels.latg, mask.latg and optionally
// truth.latg (synthetic scenes only).
struct Dataset {
  FeatureGrid features;
  LabelGrid labels;
  std::optional<Tensor> truth;  // [time, H, W]
};

void write_dataset(const fs::path& dir, const Dataset& data,
                   const json& extra = json::object());
Dataset read_dataset(const fs::path& dir);

json split_to_json(const LocationSplit& split);
LocationSplit split_from_json(const json& j);

// Hex SHA-256 digest of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string file_digest(const fs::path& path);

}  // namespace latte::io

#include "latte/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "latte/error.hpp"

namespace latte::io {

static_assert(std::endian::native == std::endian::little,
              "LATG I/O assumes a little-endian host");

std::string encode_latg(const Tensor& tensor) {
  std::string out = "LATG";
  auto put_u32 = [&out](std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  };
  put_u32(kLatgVersion);
  put_u32(static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_u32(static_cast<std::uint32_t>(d));
  const auto values = tensor.data();
  out.append(reinterpret_cast<const char*>(values.data()),
             values.size() * sizeof(double));
  return out;
}

Tensor decode_latg(const std::string& bytes, const std::string& origin) {
  const std::string where = origin.empty() ? "LATG data" : origin;
  std::size_t pos = 0;
  auto get_u32 = [&](const char* field) {
    if (pos + 4 > bytes.size()) {
      throw ParseError(where + ": truncated header at " + field);
    }
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  if (bytes.size() < 4 || bytes.compare(0, 4, "LATG") != 0) {
    throw ParseError(where + ": missing LATG magic");
  }
  pos = 4;
  const std::uint32_t version = get_u32("version");
  if (version != kLatgVersion) {
    throw ParseError(where + ": unsupported LATG version " +
                     std::to_string(version));
  }
  const std::uint32_t rank = get_u32("dims count");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32("dims"));
  const std::size_t n = shape_size(shape);
  if (bytes.size() - pos != n * sizeof(double)) {
    throw ParseError(where + ": payload has " +
                     std::to_string(bytes.size() - pos) + " bytes, expected " +
                     std::to_string(n * sizeof(double)));
  }
  std::vector<double> values(n);
  std::memcpy(values.data(), bytes.data() + pos, n * sizeof(double));
  return Tensor(std::move(shape), std::move(values));
}

void write_latg(const fs::path& path, const Tensor& tensor) {
  write_text(path, encode_latg(tensor));
}

Tensor read_latg(const fs::path& path) {
  return decode_latg(read_bytes(path), path.string());
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_bytes(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json grid_to_json(const GridSpec& spec) {
  return json{{"origin_easting", spec.origin_easting},
              {"origin_northing", spec.origin_northing},
              {"cell_size", spec.cell_size},
              {"height", spec.height},
              {"width", spec.width}};
}

GridSpec grid_from_json(const json& j) {
  try {
    GridSpec spec;
    spec.origin_easting = j.value("origin_easting", 0.0);
    spec.origin_northing = j.value("origin_northing", 0.0);
    spec.cell_size = j.at("cell_size").get<double>();
    spec.height = j.at("height").get<std::size_t>();
    spec.width = j.at("width").get<std::size_t>();
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ParseError(std::string("grid spec: ") + e.what());
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + s + "' is not a number");
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<SensorReading> read_sensors_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != "sensor_id,easting_m,northing_m,time_index,value") {
    throw ParseError(path.string() + ":1: unexpected header '" + line + "'");
  }
  std::vector<SensorReading> out;
  std::size_t lineno = 1;
  static const char* kFields[] = {"sensor_id", "easting_m", "northing_m",
                                  "time_index", "value"};
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " +
                       std::to_string(f.size()));
    }
    SensorReading r;
    r.sensor_id = f[0];
    r.easting = parse_double(f[1], where + " field " + kFields[1]);
    r.northing = parse_double(f[2], where + " field " + kFields[2]);
    const double t = parse_double(f[3], where + " field " + kFields[3]);
    if (t != std::floor(t)) {
      throw ParseError(where + " field time_index: not an integer");
    }
    r.time_index = static_cast<std::int64_t>(t);
    r.value = parse_double(f[4], where + " field " + kFields[4]);
    if (!std::isfinite(r.value)) {
      throw ParseError(where + " field value: not finite");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_sensors_csv(const fs::path& path,
                       const std::vector<SensorReading>& readings) {
  std::ostringstream os;
  os << "sensor_id,easting_m,northing_m,time_index,value\n";
  for (const auto& r : readings) {
    os << r.sensor_id << ',' << fmt_double(r.easting) << ','
       << fmt_double(r.northing) << ',' << r.time_index << ','
       << fmt_double(r.value) << '\n';
  }
  write_text(path, os.str());
}

std::vector<GeoPrimitive> parse_primitives(const json& j) {
  if (!j.is_array()) throw ParseError("primitives: expected a JSON array");
  std::vector<GeoPrimitive> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = "primitives[" + std::to_string(i) + "]";
    try {
      const json& item = j[i];
      GeoPrimitive p;
      const std::string kind = item.at("kind").get<std::string>();
      if (kind == "point") {
        p.kind = PrimitiveKind::kPoint;
      } else if (kind == "polyline") {
        p.kind = PrimitiveKind::kPolyline;
      } else if (kind == "polygon") {
        p.kind = PrimitiveKind::kPolygon;
      } else {
        throw ParseError(where + ".kind: unknown kind '" + kind + "'");
      }
      for (const json& xy : item.at("coords")) {
        if (!xy.is_array() || xy.size() != 2) {
          throw ParseError(where + ".coords: each vertex must be [x, y]");
        }
        p.coords.emplace_back(xy[0].get<double>(), xy[1].get<double>());
      }
      p.attribute = item.value("attribute", 0.0);
      p.validate();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const GridError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<GeoPrimitive> read_primitives_json(const fs::path& path) {
  return parse_primitives(read_json(path));
}

Aggregator parse_aggregator(const std::string& name) {
  if (name == "sum_length") return Aggregator::kSumLength;
  if (name == "sum_area") return Aggregator::kSumArea;
  if (name == "count") return Aggregator::kCount;
  if (name == "mean_attribute") return Aggregator::kMeanAttribute;
  throw ParseError("unknown aggregator '" + name + "'");
}

void write_dataset(const fs::path& dir, const Dataset& data, const json& extra) {
  data.features.validate();
  data.labels.validate();
  fs::create_directories(dir);
  const std::size_t pd = data.features.dynamic_count();
  json manifest = extra;
  manifest["grid"] = grid_to_json(data.features.spec);
  manifest["time_steps"] = data.features.time_steps;
  manifest["feature_names"] = data.features.feature_names;
  manifest["dynamic_features"] = std::vector<std::string>(
      data.features.feature_names.begin(),
      data.features.feature_names.begin() + static_cast<std::ptrdiff_t>(pd));
  manifest["static_features"] = std::vector<std::string>(
      data.features.feature_names.begin() + static_cast<std::ptrdiff_t>(pd),
      data.features.feature_names.end());
  json files = {{"dynamic", "dynamic.latg"},
                {"static", "static.latg"},
                {"labels", "labels.latg"},
                {"mask", "mask.latg"}};
  write_latg(dir / "dynamic.latg", data.features.dynamic);
  write_latg(dir / "static.latg", data.features.statics);
  write_latg(dir / "labels.latg", data.labels.values);
  write_latg(dir / "mask.latg", data.labels.mask);
  if (data.truth) {
    write_latg(dir / "truth.latg", *data.truth);
    files["truth"] = "truth.latg";
  }
  manifest["files"] = files;
  write_json(dir / "manifest.json", manifest);
}

Dataset read_dataset(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  Dataset data;
  try {
    data.features.spec = grid_from_json(manifest.at("grid"));
    data.features.time_steps = manifest.at("time_steps").get<std::size_t>();
    data.features.feature_names =
        manifest.at("feature_names").get<std::vector<std::string>>();
    const json& files = manifest.at("files");
    data.features.dynamic = read_latg(dir / files.at("dynamic").get<std::string>());
    data.features.statics = read_latg(dir / files.at("static").get<std::string>());
    data.labels.values = read_latg(dir / files.at("labels").get<std::string>());
    data.labels.mask = read_latg(dir / files.at("mask").get<std::string>());
    if (files.contains("truth")) {
      data.truth = read_latg(dir / files.at("truth").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  data.features.validate();
  data.labels.validate();
  const Shape expect{data.features.time_steps, data.features.spec.height,
                     data.features.spec.width};
  if (data.labels.values.shape() != expect ||
      (data.truth && data.truth->shape() != expect)) {
    throw ShapeError(dir.string() + ": label/truth grids must be " +
                     shape_string(expect));
  }
  return data;
}

json split_to_json(const LocationSplit& split) {
  auto cells = [](const std::vector<Cell>& cs) {
    json arr = json::array();
    for (const Cell& c : cs) arr.push_back({c.row, c.col});
    return arr;
  };
  return json{{"train", cells(split.train)},
              {"val", cells(split.val)},
              {"test", cells(split.test)}};
}

LocationSplit split_from_json(const json& j) {
  auto cells = [&](const char* key) {
    std::vector<Cell> out;
    try {
      for (const json& rc : j.at(key)) {
        out.push_back({rc.at(0).get<std::size_t>(), rc.at(1).get<std::size_t>()});
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("split.") + key + ": " + e.what());
    }
    return out;
  };
  return LocationSplit{cells("train"), cells("val"), cells("test")};
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0')
       << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string file_digest(const fs::path& path) {
  return sha256_hex(read_bytes(path));
}

}  // namespace latte::io

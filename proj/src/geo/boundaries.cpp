#include "nbhd/geo/boundaries.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include <json.hpp>

#include "nbhd/core/error.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::geo {

namespace {

using json = nlohmann::json;

const char* const kGeoidKeys[] = {"GEOID", "GEOID20", "GEOID10", "geoid"};

struct RawFeature {
  std::string geoid;
  std::string state_fips;
  std::string county_fips;
  Polygon polygon;
  bool has_geometry = false;
};

BoundarySet finalize(std::vector<RawFeature> features, int epsg, const std::string& source) {
  if (features.empty()) throw EmptyInputError(source + ": no boundary features");
  BoundarySet out;
  out.epsg = epsg;
  std::map<std::string, int> counts;
  for (const auto& f : features) ++counts[f.geoid];
  std::set<std::string> duplicates_reported;
  for (auto& f : features) {
    if (f.geoid.empty()) {
      out.rejections.push_back({"", "empty GEOID"});
      continue;
    }
    if (counts[f.geoid] > 1) {
      if (duplicates_reported.insert(f.geoid).second) {
        out.rejections.push_back({f.geoid, "duplicate_geoid"});
      }
      continue;
    }
    if (!f.has_geometry) {
      out.rejections.push_back({f.geoid, "null_geometry"});
      continue;
    }
    const std::string notes = normalize_polygon(f.polygon);
    if (!notes.empty()) out.repairs.push_back(f.geoid + ": " + notes);
    if (f.polygon.rings.empty()) {
      out.rejections.push_back({f.geoid, "degenerate_geometry"});
      continue;
    }
    if (self_intersects(f.polygon)) {
      out.rejections.push_back({f.geoid, "self_intersection"});
      continue;
    }
    if (f.state_fips.empty() && f.geoid.size() >= 2) f.state_fips = f.geoid.substr(0, 2);
    if (f.county_fips.empty() && f.geoid.size() >= 5) f.county_fips = f.geoid.substr(2, 3);
    out.records.push_back({f.geoid, std::move(f.polygon), f.state_fips, f.county_fips});
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const auto& a, const auto& b) { return a.geoid < b.geoid; });
  std::sort(out.rejections.begin(), out.rejections.end(),
            [](const auto& a, const auto& b) { return a.geoid < b.geoid; });
  return out;
}

std::string json_scalar_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return format_double(v.get<double>());
  return {};
}

Ring parse_ring(const json& coords, const std::string& where) {
  if (!coords.is_array()) throw ParseError(where + ": ring is not an array");
  Ring ring;
  ring.reserve(coords.size());
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
      throw ParseError(where + ": malformed coordinate");
    }
    ring.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  return ring;
}

int epsg_from_geojson_crs(const json& doc) {
  if (!doc.contains("crs")) return 4326;
  const auto& crs = doc["crs"];
  std::string name;
  if (crs.contains("properties") && crs["properties"].contains("name")) {
    name = crs["properties"]["name"].get<std::string>();
  }
  std::smatch m;
  static const std::regex re(R"(EPSG:+(\d+))");
  if (std::regex_search(name, m, re)) return std::stoi(m[1].str());
  if (name.find("CRS84") != std::string::npos) return 4326;
  throw ParseError("unrecognised GeoJSON crs name '" + name + "'");
}

// --- shapefile -----------------------------------------------------------

std::int32_t be32(const unsigned char* p) {
  return static_cast<std::int32_t>((std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                                   (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]});
}
std::int32_t le32(const unsigned char* p) {
  return static_cast<std::int32_t>(std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                                   (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24));
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
double led(const unsigned char* p) {
  double d;
  std::memcpy(&d, p, sizeof(d));
  return d;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \0", 0, 2);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \0", std::string::npos, 2);
  return s.substr(b, e - b + 1);
}

struct DbfTable {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> records;
};

DbfTable read_dbf(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 32) throw ParseError(path.string() + ": truncated DBF header");
  const std::uint32_t nrec = static_cast<std::uint32_t>(le32(p + 4));
  const std::uint16_t header_len = le16(p + 8);
  const std::uint16_t record_len = le16(p + 10);
  DbfTable t;
  std::vector<int> lengths;
  for (std::size_t off = 32; off + 32 <= header_len && p[off] != 0x0D; off += 32) {
    char name[12] = {};
    std::memcpy(name, p + off, 11);
    t.names.emplace_back(name);
    lengths.push_back(p[off + 16]);
  }
  if (bytes.size() < header_len + static_cast<std::size_t>(nrec) * record_len) {
    throw ParseError(path.string() + ": truncated DBF records");
  }
  for (std::uint32_t r = 0; r < nrec; ++r) {
    const std::size_t base = header_len + static_cast<std::size_t>(r) * record_len;
    std::size_t off = base + 1;  // deletion flag
    std::vector<std::string> rec;
    for (int len : lengths) {
      rec.push_back(trim(bytes.substr(off, static_cast<std::size_t>(len))));
      off += static_cast<std::size_t>(len);
    }
    t.records.push_back(std::move(rec));
  }
  return t;
}

std::vector<std::pair<bool, Polygon>> read_shp(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 100 || be32(p) != 9994) {
    throw ParseError(path.string() + ": not a shapefile (bad file code)");
  }
  const int shape_type = le32(p + 32);
  if (shape_type != 5 && shape_type != 15 && shape_type != 25 && shape_type != 0) {
    throw SchemaError(path.string() + ": shape type " + std::to_string(shape_type) +
                      " is not a polygon type");
  }
  std::vector<std::pair<bool, Polygon>> shapes;
  std::size_t off = 100;
  while (off + 8 <= bytes.size()) {
    const std::size_t content_len = static_cast<std::size_t>(be32(p + off + 4)) * 2;
    const std::size_t c = off + 8;
    if (c + content_len > bytes.size()) throw ParseError(path.string() + ": truncated record");
    const int type = le32(p + c);
    if (type == 0) {
      shapes.push_back({false, {}});
    } else {
      if (content_len < 44) throw ParseError(path.string() + ": truncated polygon record");
      const int nparts = le32(p + c + 36);
      const int npoints = le32(p + c + 40);
      const std::size_t parts_off = c + 44;
      const std::size_t points_off = parts_off + 4 * static_cast<std::size_t>(nparts);
      if (nparts < 0 || npoints < 0 ||
          points_off + 16 * static_cast<std::size_t>(npoints) > c + content_len) {
        throw ParseError(path.string() + ": inconsistent polygon part counts");
      }
      Polygon poly;
      for (int part = 0; part < nparts; ++part) {
        const int begin = le32(p + parts_off + 4 * part);
        const int end = part + 1 < nparts ? le32(p + parts_off + 4 * (part + 1)) : npoints;
        if (begin < 0 || end > npoints || begin > end) {
          throw ParseError(path.string() + ": bad part index");
        }
        Ring ring;
        for (int i = begin; i < end; ++i) {
          const unsigned char* q = p + points_off + 16 * static_cast<std::size_t>(i);
          ring.push_back({led(q), led(q + 8)});
        }
        poly.rings.push_back(std::move(ring));
      }
      shapes.push_back({true, std::move(poly)});
    }
    off = c + content_len;
  }
  return shapes;
}

BoundarySet load_shapefile(const std::filesystem::path& path) {
  auto shapes = read_shp(path);
  auto dbf_path = path;
  dbf_path.replace_extension(".dbf");
  if (!std::filesystem::exists(dbf_path)) {
    throw SchemaError(path.string() + ": attribute table " + dbf_path.string() + " not found");
  }
  const DbfTable dbf = read_dbf(dbf_path);
  int geoid_col = -1, state_col = -1, county_col = -1;
  for (const char* key : kGeoidKeys) {
    auto it = std::find(dbf.names.begin(), dbf.names.end(), key);
    if (it != dbf.names.end()) {
      geoid_col = static_cast<int>(it - dbf.names.begin());
      break;
    }
  }
  if (geoid_col < 0) throw SchemaError(path.string() + ": missing GEOID attribute");
  for (std::size_t i = 0; i < dbf.names.size(); ++i) {
    if (dbf.names[i] == "STATEFP" || dbf.names[i] == "STATEFP20") state_col = static_cast<int>(i);
    if (dbf.names[i] == "COUNTYFP" || dbf.names[i] == "COUNTYFP20") county_col = static_cast<int>(i);
  }
  if (dbf.records.size() != shapes.size()) {
    throw ParseError(path.string() + ": " + std::to_string(shapes.size()) + " shapes but " +
                     std::to_string(dbf.records.size()) + " attribute rows");
  }
  std::vector<RawFeature> features;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    RawFeature f;
    f.geoid = dbf.records[i][static_cast<std::size_t>(geoid_col)];
    if (state_col >= 0) f.state_fips = dbf.records[i][static_cast<std::size_t>(state_col)];
    if (county_col >= 0) f.county_fips = dbf.records[i][static_cast<std::size_t>(county_col)];
    f.has_geometry = shapes[i].first;
    f.polygon = std::move(shapes[i].second);
    features.push_back(std::move(f));
  }
  int epsg = 4269;  // TIGER distributes NAD83 geographic coordinates
  auto prj = path;
  prj.replace_extension(".prj");
  if (std::filesystem::exists(prj)) {
    epsg = epsg_from_wkt(read_file(prj));
    if (epsg == 0) throw CrsMismatchError(prj.string() + ": unrecognised coordinate system");
  }
  return finalize(std::move(features), epsg, path.string());
}

}  // namespace

int epsg_from_wkt(const std::string& wkt) {
  std::smatch m;
  static const std::regex authority(R"~(AUTHORITY\["EPSG","?(\d+)"?\]\]\s*$)~");
  if (std::regex_search(wkt, m, authority)) return std::stoi(m[1].str());
  const bool nad83 = wkt.find("NAD83") != std::string::npos ||
                     wkt.find("North_American_1983") != std::string::npos;
  if (wkt.find("PROJCS") != std::string::npos) {
    static const std::regex utm(R"(UTM[_ ][Zz]one[_ ](\d+)([NS]?))");
    if (std::regex_search(wkt, m, utm)) {
      const int zone = std::stoi(m[1].str());
      const bool south = m[2].str() == "S";
      if (nad83) return 26900 + zone;
      return (south ? 32700 : 32600) + zone;
    }
    return 0;
  }
  if (wkt.find("GEOGCS") != std::string::npos) return nad83 ? 4269 : 4326;
  return 0;
}

BoundarySet parse_geojson_boundaries(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
      !doc.contains("features") || !doc["features"].is_array()) {
    throw ParseError(source + ": expected a GeoJSON FeatureCollection");
  }
  const int epsg = epsg_from_geojson_crs(doc);
  std::vector<RawFeature> features;
  bool any_geoid_key = false;
  for (std::size_t i = 0; i < doc["features"].size(); ++i) {
    const auto& feat = doc["features"][i];
    const std::string where = source + ": feature " + std::to_string(i);
    RawFeature f;
    const json props = feat.contains("properties") && feat["properties"].is_object()
                           ? feat["properties"]
                           : json::object();
    for (const char* key : kGeoidKeys) {
      if (props.contains(key)) {
        f.geoid = json_scalar_string(props[key]);
        any_geoid_key = true;
        break;
      }
    }
    if (props.contains("STATEFP")) f.state_fips = json_scalar_string(props["STATEFP"]);
    if (props.contains("COUNTYFP")) f.county_fips = json_scalar_string(props["COUNTYFP"]);
    if (feat.contains("geometry") && feat["geometry"].is_object()) {
      const auto& geom = feat["geometry"];
      const std::string type = geom.value("type", "");
      const auto& coords = geom["coordinates"];
      if (type == "Polygon") {
        for (const auto& r : coords) f.polygon.rings.push_back(parse_ring(r, where));
      } else if (type == "MultiPolygon") {
        for (const auto& poly : coords) {
          for (const auto& r : poly) f.polygon.rings.push_back(parse_ring(r, where));
        }
      } else {
        throw SchemaError(where + ": unsupported geometry type '" + type + "'");
      }
      f.has_geometry = true;
    }
    features.push_back(std::move(f));
  }
  if (!features.empty() && !any_geoid_key) {
    throw SchemaError(source + ": missing GEOID attribute");
  }
  return finalize(std::move(features), epsg, source);
}

BoundarySet load_boundaries(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("boundary file " + path.string() + " not found");
  if (std::filesystem::file_size(path) == 0) {
    throw EmptyInputError("boundary file " + path.string() + " is empty");
  }
  const auto ext = path.extension().string();
  if (ext == ".shp") return load_shapefile(path);
  if (ext == ".geojson" || ext == ".json") {
    return parse_geojson_boundaries(read_file(path), path.string());
  }
  throw InputError(path.string() + ": unsupported boundary format (use .shp or .geojson)");
}

void write_geojson_boundaries(const std::filesystem::path& path,
                              const std::vector<BoundaryRecord>& records, int epsg) {
  json doc;
  doc["type"] = "FeatureCollection";
  doc["crs"] = {{"type", "name"},
                {"properties", {{"name", "urn:ogc:def:crs:EPSG::" + std::to_string(epsg)}}}};
  json features = json::array();
  for (const auto& r : records) {
    json rings = json::array();
    for (const auto& ring : r.polygon.rings) {
      json coords = json::array();
      for (const auto& p : ring) coords.push_back({p.x, p.y});
      if (!ring.empty()) coords.push_back({ring.front().x, ring.front().y});
      rings.push_back(std::move(coords));
    }
    features.push_back({{"type", "Feature"},
                        {"properties",
                         {{"GEOID", r.geoid}, {"STATEFP", r.state_fips}, {"COUNTYFP", r.county_fips}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
  }
  doc["features"] = std::move(features);
  write_file_atomic(path, doc.dump(1));
}

}  // namespace nbhd::geo

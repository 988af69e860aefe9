#pragma once

// File formats: DDM records as JSON lines, water masks as binary PGM (P5)
// with a JSON sidecar holding the georeference.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "iwd/ddm.hpp"
#include "iwd/errors.hpp"
#include "iwd/geo.hpp"
#include "json.hpp"

namespace iwd {

namespace fs = std::filesystem;

inline nlohmann::ordered_json record_to_json(const DdmRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["lat"] = r.lat;
  j["lon"] = r.lon;
  j["time"] = format_rfc3339(r.time);
  j["sp_inc_angle_deg"] = r.sp_inc_angle_deg;
  j["ant_gain_db"] = r.ant_gain_db;
  j["quality_flags"] = r.quality_flags;
  j["noise_avg"] = r.noise_avg;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t d = 0; d < kDelayBins; ++d) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < kDopplerBins; ++f) row.push_back(r.ddm(d, f));
    rows.push_back(std::move(row));
  }
  j["ddm"] = std::move(rows);
  if (r.label) j["label"] = *r.label;
  return j;
}

template <class Json>
DdmRecord record_from_json(const Json& j) {
  DdmRecord r;
  try {
    r.id = j.at("id").template get<std::string>();
    r.lat = j.at("lat").template get<double>();
    r.lon = j.at("lon").template get<double>();
    r.time = parse_rfc3339(j.at("time").template get<std::string>());
    r.sp_inc_angle_deg = j.at("sp_inc_angle_deg").template get<double>();
    r.ant_gain_db = j.at("ant_gain_db").template get<double>();
    r.quality_flags = j.at("quality_flags").template get<std::uint32_t>();
    r.noise_avg = j.at("noise_avg").template get<double>();
    r.ddm = DelayDopplerMap::from_rows(j.at("ddm").template get<std::vector<std::vector<double>>>());
    if (j.contains("label") && !j.at("label").is_null()) r.label = j.at("label").template get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed DDM record: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed DDM record: ") + e.what());
  }
  try {
    r.validate();
  } catch (const DomainError& e) {
    throw DataError(e.what());
  }
  return r;
}

inline std::string record_to_line(const DdmRecord& r) { return record_to_json(r).dump(); }

inline std::vector<DdmRecord> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<DdmRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<DdmRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_line(r) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PGM

inline fs::path sidecar_path(const fs::path& pgm) {
  fs::path p = pgm;
  p.replace_extension(".json");
  return p;
}

/// 8-bit grayscale PGM, top row = northernmost grid row.
inline void write_pgm(const fs::path& path, const GridGeometry& geo, const std::vector<std::uint8_t>& gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << geo.cols << ' ' << geo.rows << "\n255\n";
  for (std::size_t r = geo.rows; r-- > 0;)
    out.write(reinterpret_cast<const char*>(gray.data() + r * geo.cols), static_cast<std::streamsize>(geo.cols));
  if (!out) throw DataError("write failed for " + path.string());
}

inline void write_mask(const fs::path& pgm, const WaterMask& mask) {
  validate_mask(mask);
  std::vector<std::uint8_t> gray(mask.values.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.values[i] ? 255 : 0;
  write_pgm(pgm, mask.geo, gray);
  nlohmann::ordered_json side;
  side["origin_lat"] = mask.geo.origin_lat;
  side["origin_lon"] = mask.geo.origin_lon;
  side["cell_size_deg"] = mask.geo.cell_size_deg;
  std::ofstream s(sidecar_path(pgm), std::ios::binary);
  if (!s) throw DataError("cannot write " + sidecar_path(pgm).string());
  s << side.dump(2) << '\n';
}

inline WaterMask read_mask(const fs::path& pgm) {
  std::ifstream in(pgm, std::ios::binary);
  if (!in) throw DataError("cannot open " + pgm.string());
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += c;
    }
    return tok;
  };
  if (next_token() != "P5") throw DataError(pgm.string() + ": not a binary PGM (P5)");
  std::size_t cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoul(next_token());
    rows = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw DataError(pgm.string() + ": malformed PGM header");
  }
  if (maxval == 0 || maxval > 255 || rows == 0 || cols == 0) throw DataError(pgm.string() + ": unsupported PGM header");
  std::vector<std::uint8_t> raw(rows * cols);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(pgm.string() + ": truncated PGM");

  std::ifstream s(sidecar_path(pgm));
  if (!s) throw DataError("missing mask sidecar " + sidecar_path(pgm).string());
  GridGeometry geo;
  try {
    const auto side = nlohmann::json::parse(s);
    geo.origin_lat = side.at("origin_lat").get<double>();
    geo.origin_lon = side.at("origin_lon").get<double>();
    geo.cell_size_deg = side.at("cell_size_deg").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(pgm).string() + ": " + e.what());
  }
  geo.rows = rows;
  geo.cols = cols;
  WaterMask mask(geo, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mask.at(rows - 1 - r, c) = raw[r * cols + c] * 2 > maxval ? 1 : 0;
  return mask;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace iwd

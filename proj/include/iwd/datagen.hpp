#pragma once

// Procedural scenes: a river-network water mask, straight specular-point
// tracks across it, and coherent/incoherent DDMs labelled by mask lookup.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "iwd/ddm.hpp"
#include "iwd/errors.hpp"
#include "iwd/geo.hpp"
#include "iwd/io.hpp"
#include "iwd/parallel.hpp"
#include "iwd/timeutil.hpp"
#include "json.hpp"

namespace iwd::datagen {

inline constexpr double kMetersPerDegree = 111320.0;

struct Region {
  double lat_min = 0, lat_max = 1, lon_min = 0, lon_max = 1;

  bool contains_strictly(double lat, double lon) const {
    return lat > lat_min && lat < lat_max && lon > lon_min && lon < lon_max;
  }
};

struct RiverSpec {
  std::vector<std::array<double, 2>> points;  // (lat, lon) control points
  double width_m = 500.0;
};

struct TributarySpec {
  std::size_t depth = 0;           // branching levels below each trunk
  std::size_t branches = 3;        // tributaries spawned per parent river
  double width_decay = 0.5;        // child width / parent width
  double length_deg = 0.4;         // first-level tributary length
  double length_decay = 0.6;
  double min_width_m = 60.0;
  double wiggle_deg = 0.03;        // lateral jitter of interior control points
  std::size_t segments = 6;        // control-point count minus one
};

struct TrackSpec {
  std::size_t count = 100;
  double spacing_deg = 0.03;
  double max_heading_deg = 30.0;  // deviation from north/south
  std::string start_time = "2020-01-01T00:00:00Z";
  double track_interval_s = 21600.0;
  double sample_interval_s = 0.5;
};

struct DdmSynthParams {
  double coherent_amp_min = 1.5;  // peak height in units of the noise floor
  double coherent_amp_max = 12.0;
  double coherent_spread_delay = 0.7;  // Gaussian sigma, bins
  double coherent_spread_doppler = 0.8;
  double peak_jitter = 0.8;  // uniform offset of the peak center, bins
  double incoherent_amp_min = 1.5;
  double incoherent_amp_max = 6.0;
  double incoherent_spread = 2.0;  // multiplier on the coherent sigmas
  double incoherent_skew = 2.0;    // extra sigma factor on the late-delay side
  double noise_floor_min = 0.8;    // N_avg range
  double noise_floor_max = 1.2;
  double noise_jitter = 0.2;  // per-bin uniform +-fraction of the floor
  double violation_fraction = 0.1;
  double inc_angle_max_deg = 60.0;  // valid records draw from [5, max]
  double gain_min_db = 0.5;
  double gain_max_db = 14.0;

  void validate() const {
    if (!(coherent_spread_delay > 0 && coherent_spread_doppler > 0 && incoherent_spread > 1.0 && incoherent_skew >= 1.0))
      throw ConfigError("ddm spreads must be positive with the incoherent spread wider than the coherent one");
    if (!(coherent_amp_min > 0 && coherent_amp_min <= coherent_amp_max))
      throw ConfigError("coherent amplitude range must be positive and ordered");
    if (!(incoherent_amp_min > 0 && incoherent_amp_min <= incoherent_amp_max))
      throw ConfigError("incoherent amplitude range must be positive and ordered");
    if (!(noise_floor_min > 0 && noise_floor_min <= noise_floor_max)) throw ConfigError("noise floor range invalid");
    if (!(noise_jitter >= 0 && noise_jitter < 0.5)) throw ConfigError("noise_jitter must be in [0,0.5)");
    if (!(violation_fraction >= 0 && violation_fraction <= 1)) throw ConfigError("violation_fraction must be in [0,1]");
    if (!(inc_angle_max_deg > 5 && inc_angle_max_deg <= 65)) throw ConfigError("inc_angle_max_deg must be in (5,65]");
    if (!(gain_min_db >= 0 && gain_min_db <= gain_max_db)) throw ConfigError("gain range must be non-negative and ordered");
    if (!(peak_jitter >= 0)) throw ConfigError("peak_jitter must be >= 0");
  }
};

struct SceneSpec {
  std::string name = "scene";
  Region region;
  double cell_size_deg = 0.01;
  std::uint64_t seed = 1;
  std::vector<RiverSpec> rivers;
  TributarySpec tributaries;
  TrackSpec tracks;
  DdmSynthParams ddm;

  GridGeometry grid() const {
    GridGeometry g;
    g.origin_lat = region.lat_min;
    g.origin_lon = region.lon_min;
    g.cell_size_deg = cell_size_deg;
    g.rows = static_cast<std::size_t>(std::ceil((region.lat_max - region.lat_min) / cell_size_deg - 1e-9));
    g.cols = static_cast<std::size_t>(std::ceil((region.lon_max - region.lon_min) / cell_size_deg - 1e-9));
    return g;
  }

  void validate() const {
    if (!(region.lat_min < region.lat_max && region.lon_min < region.lon_max))
      throw ConfigError("scene region bounds are not well ordered");
    if (region.lat_min < -90 || region.lat_max > 90 || region.lon_min < -180 || region.lon_max > 180)
      throw ConfigError("scene region outside the globe");
    if (!(cell_size_deg > 0)) throw ConfigError("cell_size_deg must be positive");
    for (const auto& r : rivers) {
      if (!(r.width_m > 0)) throw ConfigError("river widths must be > 0");
      if (r.points.size() < 2) throw ConfigError("a river needs at least two control points");
    }
    if (!(tributaries.width_decay > 0 && tributaries.width_decay <= 1)) throw ConfigError("width_decay must be in (0,1]");
    if (!(tributaries.length_deg > 0 && tributaries.length_decay > 0)) throw ConfigError("tributary lengths must be > 0");
    if (!(tributaries.min_width_m > 0)) throw ConfigError("min_width_m must be > 0");
    if (tributaries.segments == 0) throw ConfigError("tributary segments must be > 0");
    if (!(tracks.spacing_deg > 0)) throw ConfigError("track spacing must be positive");
    if (!(tracks.max_heading_deg >= 0 && tracks.max_heading_deg < 90)) throw ConfigError("max_heading_deg must be in [0,90)");
    if (!(tracks.sample_interval_s > 0 && tracks.track_interval_s >= 0)) throw ConfigError("track timing must be positive");
    parse_rfc3339(tracks.start_time);
    ddm.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class Json>
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class Json, class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).template get<T>();
}

}  // namespace detail

inline DdmSynthParams ddm_params_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  detail::check_keys(j,
                     {"coherent_amp_min", "coherent_amp_max", "coherent_spread_delay", "coherent_spread_doppler",
                      "peak_jitter", "incoherent_amp_min", "incoherent_amp_max", "incoherent_spread",
                      "incoherent_skew", "noise_floor_min", "noise_floor_max", "noise_jitter", "violation_fraction",
                      "inc_angle_max_deg", "gain_min_db", "gain_max_db"},
                     "ddm");
  DdmSynthParams p;
  read_opt(j, "coherent_amp_min", p.coherent_amp_min);
  read_opt(j, "coherent_amp_max", p.coherent_amp_max);
  read_opt(j, "coherent_spread_delay", p.coherent_spread_delay);
  read_opt(j, "coherent_spread_doppler", p.coherent_spread_doppler);
  read_opt(j, "peak_jitter", p.peak_jitter);
  read_opt(j, "incoherent_amp_min", p.incoherent_amp_min);
  read_opt(j, "incoherent_amp_max", p.incoherent_amp_max);
  read_opt(j, "incoherent_spread", p.incoherent_spread);
  read_opt(j, "incoherent_skew", p.incoherent_skew);
  read_opt(j, "noise_floor_min", p.noise_floor_min);
  read_opt(j, "noise_floor_max", p.noise_floor_max);
  read_opt(j, "noise_jitter", p.noise_jitter);
  read_opt(j, "violation_fraction", p.violation_fraction);
  read_opt(j, "inc_angle_max_deg", p.inc_angle_max_deg);
  read_opt(j, "gain_min_db", p.gain_min_db);
  read_opt(j, "gain_max_db", p.gain_max_db);
  return p;
}

inline nlohmann::ordered_json ddm_params_to_json(const DdmSynthParams& p) {
  return {{"coherent_amp_min", p.coherent_amp_min},
          {"coherent_amp_max", p.coherent_amp_max},
          {"coherent_spread_delay", p.coherent_spread_delay},
          {"coherent_spread_doppler", p.coherent_spread_doppler},
          {"peak_jitter", p.peak_jitter},
          {"incoherent_amp_min", p.incoherent_amp_min},
          {"incoherent_amp_max", p.incoherent_amp_max},
          {"incoherent_spread", p.incoherent_spread},
          {"incoherent_skew", p.incoherent_skew},
          {"noise_floor_min", p.noise_floor_min},
          {"noise_floor_max", p.noise_floor_max},
          {"noise_jitter", p.noise_jitter},
          {"violation_fraction", p.violation_fraction},
          {"inc_angle_max_deg", p.inc_angle_max_deg},
          {"gain_min_db", p.gain_min_db},
          {"gain_max_db", p.gain_max_db}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  SceneSpec s;
  try {
    detail::check_keys(j, {"name", "region", "cell_size_deg", "seed", "rivers", "tributaries", "tracks", "ddm"}, "scene");
    read_opt(j, "name", s.name);
    const auto& r = j.at("region");
    detail::check_keys(r, {"lat_min", "lat_max", "lon_min", "lon_max"}, "region");
    s.region = {r.at("lat_min").get<double>(), r.at("lat_max").get<double>(), r.at("lon_min").get<double>(),
                r.at("lon_max").get<double>()};
    read_opt(j, "cell_size_deg", s.cell_size_deg);
    read_opt(j, "seed", s.seed);
    if (j.contains("rivers")) {
      for (const auto& rv : j.at("rivers")) {
        detail::check_keys(rv, {"points", "width_m"}, "river");
        RiverSpec river;
        river.points = rv.at("points").get<std::vector<std::array<double, 2>>>();
        river.width_m = rv.at("width_m").get<double>();
        s.rivers.push_back(std::move(river));
      }
    }
    if (j.contains("tributaries")) {
      const auto& t = j.at("tributaries");
      detail::check_keys(t, {"depth", "branches", "width_decay", "length_deg", "length_decay", "min_width_m",
                             "wiggle_deg", "segments"},
                         "tributaries");
      read_opt(t, "depth", s.tributaries.depth);
      read_opt(t, "branches", s.tributaries.branches);
      read_opt(t, "width_decay", s.tributaries.width_decay);
      read_opt(t, "length_deg", s.tributaries.length_deg);
      read_opt(t, "length_decay", s.tributaries.length_decay);
      read_opt(t, "min_width_m", s.tributaries.min_width_m);
      read_opt(t, "wiggle_deg", s.tributaries.wiggle_deg);
      read_opt(t, "segments", s.tributaries.segments);
    }
    if (j.contains("tracks")) {
      const auto& t = j.at("tracks");
      detail::check_keys(t, {"count", "spacing_deg", "max_heading_deg", "start_time", "track_interval_s",
                             "sample_interval_s"},
                         "tracks");
      read_opt(t, "count", s.tracks.count);
      read_opt(t, "spacing_deg", s.tracks.spacing_deg);
      read_opt(t, "max_heading_deg", s.tracks.max_heading_deg);
      read_opt(t, "start_time", s.tracks.start_time);
      read_opt(t, "track_interval_s", s.tracks.track_interval_s);
      read_opt(t, "sample_interval_s", s.tracks.sample_interval_s);
    }
    if (j.contains("ddm")) s.ddm = ddm_params_from_json(j.at("ddm"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::ordered_json scene_to_json(const SceneSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["region"] = {{"lat_min", s.region.lat_min},
                 {"lat_max", s.region.lat_max},
                 {"lon_min", s.region.lon_min},
                 {"lon_max", s.region.lon_max}};
  j["cell_size_deg"] = s.cell_size_deg;
  j["seed"] = s.seed;
  auto rivers = nlohmann::ordered_json::array();
  for (const auto& r : s.rivers) rivers.push_back({{"points", r.points}, {"width_m", r.width_m}});
  j["rivers"] = std::move(rivers);
  const auto& t = s.tributaries;
  j["tributaries"] = {{"depth", t.depth},
                      {"branches", t.branches},
                      {"width_decay", t.width_decay},
                      {"length_deg", t.length_deg},
                      {"length_decay", t.length_decay},
                      {"min_width_m", t.min_width_m},
                      {"wiggle_deg", t.wiggle_deg},
                      {"segments", t.segments}};
  const auto& k = s.tracks;
  j["tracks"] = {{"count", k.count},
                 {"spacing_deg", k.spacing_deg},
                 {"max_heading_deg", k.max_heading_deg},
                 {"start_time", k.start_time},
                 {"track_interval_s", k.track_interval_s},
                 {"sample_interval_s", k.sample_interval_s}};
  j["ddm"] = ddm_params_to_json(s.ddm);
  return j;
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

// ---------------------------------------------------------------------------
// Rivers and mask

/// Trunks plus recursively generated tributaries.
inline std::vector<RiverSpec> river_network(const SceneSpec& scene) {
  std::vector<RiverSpec> all = scene.rivers;
  const auto& t = scene.tributaries;
  std::mt19937_64 rng(mix_seed(scene.seed, 0x7269766572ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t level_begin = 0, level_end = all.size();
  double length = t.length_deg;
  for (std::size_t depth = 0; depth < t.depth; ++depth) {
    for (std::size_t i = level_begin; i < level_end; ++i) {
      const RiverSpec parent = all[i];
      const double width = parent.width_m * t.width_decay;
      if (width < t.min_width_m) continue;
      for (std::size_t b = 0; b < t.branches; ++b) {
        // Pick a point along the parent polyline.
        const std::size_t seg = static_cast<std::size_t>(unit(rng) * static_cast<double>(parent.points.size() - 1));
        const double f = unit(rng);
        const auto& a = parent.points[seg];
        const auto& c = parent.points[seg + 1];
        const double lat0 = a[0] + f * (c[0] - a[0]);
        const double lon0 = a[1] + f * (c[1] - a[1]);
        const double dir = std::atan2(c[0] - a[0], c[1] - a[1]);
        const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
        const double angle = dir + side * (std::numbers::pi / 6 + unit(rng) * std::numbers::pi / 4);
        RiverSpec child;
        child.width_m = width;
        child.points.push_back({lat0, lon0});
        for (std::size_t k = 1; k <= t.segments; ++k) {
          const double s = length * static_cast<double>(k) / static_cast<double>(t.segments);
          const double wig = t.wiggle_deg * (2 * unit(rng) - 1);
          child.points.push_back({lat0 + s * std::sin(angle) + wig * std::cos(angle),
                                  lon0 + s * std::cos(angle) - wig * std::sin(angle)});
        }
        all.push_back(std::move(child));
      }
    }
    level_begin = level_end;
    level_end = all.size();
    length *= t.length_decay;
  }
  return all;
}

/// Burns each river into the width raster: every cell the centerline
/// passes through, plus every cell whose center lies within half the river
/// width. Overlaps keep the wider river.
inline WidthRaster render_widths(const SceneSpec& scene) {
  scene.validate();
  const GridGeometry geo = scene.grid();
  WidthRaster widths(geo, 0.0);
  const double cell = geo.cell_size_deg;
  for (const auto& river : river_network(scene)) {
    for (std::size_t s = 0; s + 1 < river.points.size(); ++s) {
      const auto& a = river.points[s];
      const auto& b = river.points[s + 1];
      const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
      const std::size_t steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / (cell / 4))));
      for (std::size_t k = 0; k <= steps; ++k) {
        const double f = static_cast<double>(k) / static_cast<double>(steps);
        const double lat = a[0] + f * (b[0] - a[0]);
        const double lon = a[1] + f * (b[1] - a[1]);
        const double half_lat = river.width_m / 2 / kMetersPerDegree;
        const double half_lon = half_lat / std::max(0.1, std::cos(lat * std::numbers::pi / 180));
        const long long r0 = cell_index(lat - half_lat, geo.origin_lat, cell);
        const long long r1 = cell_index(lat + half_lat, geo.origin_lat, cell);
        const long long c0 = cell_index(lon - half_lon, geo.origin_lon, cell);
        const long long c1 = cell_index(lon + half_lon, geo.origin_lon, cell);
        const auto home = geo.cell_of(lat, lon);
        for (long long r = std::max(0LL, r0); r <= std::min<long long>(r1, geo.rows - 1); ++r)
          for (long long c = std::max(0LL, c0); c <= std::min<long long>(c1, geo.cols - 1); ++c) {
            const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
            const double dy = (geo.cell_center_lat(ur) - lat) / half_lat;
            const double dx = (geo.cell_center_lon(uc) - lon) / half_lon;
            const bool inside = dx * dx + dy * dy <= 1.0;
            const bool on_line = home && home->first == ur && home->second == uc;
            if (inside || on_line) widths.at(ur, uc) = std::max(widths.at(ur, uc), river.width_m);
          }
      }
    }
  }
  return widths;
}

struct RenderedMask {
  WidthRaster widths;
  WaterMask mask;
};

inline RenderedMask render_mask(const SceneSpec& scene) {
  RenderedMask out;
  out.widths = render_widths(scene);
  out.mask = width_to_mask(out.widths);
  return out;
}

// ---------------------------------------------------------------------------
// Tracks

struct TrackPoint {
  std::size_t track = 0;
  std::size_t index = 0;
  double lat = 0.0;
  double lon = 0.0;
  Timestamp time{};
};

/// Straight tracks heading roughly north or south, sampled every
/// `spacing_deg`; only points strictly inside the region are kept.
inline std::vector<std::vector<TrackPoint>> sample_tracks(const SceneSpec& scene, std::size_t n_tracks,
                                                          std::uint64_t seed) {
  if (n_tracks == 0) throw ConfigError("sample_tracks: n_tracks must be > 0");
  const auto& reg = scene.region;
  const auto& ts = scene.tracks;
  const Timestamp start = parse_rfc3339(ts.start_time);
  std::vector<std::vector<TrackPoint>> tracks(n_tracks);
  for (std::size_t t = 0; t < n_tracks; ++t) {
    std::mt19937_64 rng(mix_seed(seed, 0x747261636bULL, t));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double heading = (2 * unit(rng) - 1) * ts.max_heading_deg * std::numbers::pi / 180;
    const bool northward = unit(rng) < 0.5;
    const double dlat = (northward ? 1.0 : -1.0) * ts.spacing_deg * std::cos(heading);
    const double dlon = ts.spacing_deg * std::sin(heading);
    const double offset = unit(rng) * ts.spacing_deg;
    double lat = northward ? reg.lat_min + offset : reg.lat_max - offset;
    double lon = reg.lon_min + unit(rng) * (reg.lon_max - reg.lon_min);
    const double t0 = static_cast<double>(t) * ts.track_interval_s;
    std::size_t step = 0;
    while (lat > reg.lat_min - 1e-12 && lat < reg.lat_max + 1e-12) {
      if (reg.contains_strictly(lat, lon)) {
        TrackPoint p;
        p.track = t;
        p.index = tracks[t].size();
        p.lat = lat;
        p.lon = lon;
        const double secs = t0 + static_cast<double>(step) * ts.sample_interval_s;
        p.time = start + std::chrono::seconds(static_cast<long long>(std::floor(secs)));
        tracks[t].push_back(p);
      }
      lat += dlat;
      lon += dlon;
      ++step;
    }
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// DDM synthesis

enum class Violation { None, Flags, Incidence, Gain, LowSnr };

inline const char* to_string(Violation v) {
  switch (v) {
    case Violation::None: return "none";
    case Violation::Flags: return "quality_flags";
    case Violation::Incidence: return "incidence_angle";
    case Violation::Gain: return "antenna_gain";
    case Violation::LowSnr: return "low_snr";
  }
  return "?";
}

struct SynthResult {
  DdmRecord record;
  Violation violation = Violation::None;
};

/// Unit-height shape evaluated at (delay, Doppler) bin centers.
inline DelayDopplerMap ddm_shape(double center_delay, double center_doppler, double sigma_delay,
                                 double sigma_doppler, double late_delay_factor) {
  DelayDopplerMap m;
  for (std::size_t d = 0; d < kDelayBins; ++d)
    for (std::size_t f = 0; f < kDopplerBins; ++f) {
      const double dd = static_cast<double>(d) - center_delay;
      const double sd = dd > 0 ? sigma_delay * late_delay_factor : sigma_delay;
      const double df = static_cast<double>(f) - center_doppler;
      m.set(d, f, std::exp(-0.5 * (dd * dd / (sd * sd) + df * df / (sigma_doppler * sigma_doppler))));
    }
  return m;
}

/// Draws one labelled record. Label 1 gets a compact peak in the central
/// block, label 0 a wider ridge with a long late-delay tail. Metadata and
/// filter violations are drawn without looking at the label. `amplitude`
/// overrides the drawn peak height (0 gives a noise-only map).
template <class Rng>
SynthResult synth_ddm(int label, const DdmSynthParams& p, Rng& rng, std::optional<double> amplitude = std::nullopt) {
  if (label != 0 && label != 1) throw DomainError("synth_ddm: label must be 0 or 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SynthResult out;
  DdmRecord& r = out.record;
  r.label = label;
  r.sp_inc_angle_deg = uniform(5.0, p.inc_angle_max_deg);
  r.ant_gain_db = uniform(p.gain_min_db, p.gain_max_db);
  r.quality_flags = 0;
  if (unit(rng) < p.violation_fraction) {
    out.violation = static_cast<Violation>(1 + std::min<int>(3, static_cast<int>(unit(rng) * 4)));
    switch (out.violation) {
      case Violation::Flags: r.quality_flags = 1u << static_cast<unsigned>(unit(rng) * 16); break;
      case Violation::Incidence: r.sp_inc_angle_deg = uniform(66.0, 80.0); break;
      case Violation::Gain: r.ant_gain_db = uniform(-10.0, -0.5); break;
      default: break;
    }
  }

  const double floor = uniform(p.noise_floor_min, p.noise_floor_max);
  r.noise_avg = floor;
  const double center_d = static_cast<double>(kCentralRow0 + kCentralRows / 2) + uniform(-p.peak_jitter, p.peak_jitter);
  const double center_f = static_cast<double>(kCentralCol0 + kCentralCols / 2) + uniform(-p.peak_jitter, p.peak_jitter);
  double amp = 0.0;
  DelayDopplerMap shape;
  if (label == 1) {
    amp = uniform(p.coherent_amp_min, p.coherent_amp_max);
    shape = ddm_shape(center_d, center_f, p.coherent_spread_delay, p.coherent_spread_doppler, 1.0);
  } else {
    amp = uniform(p.incoherent_amp_min, p.incoherent_amp_max);
    shape = ddm_shape(center_d, center_f, p.coherent_spread_delay * p.incoherent_spread,
                      p.coherent_spread_doppler * p.incoherent_spread, p.incoherent_skew);
  }
  // Keeps max(ddm) / noise_avg under 10^0.2 even with full positive jitter.
  if (out.violation == Violation::LowSnr) amp = uniform(0.0, 0.9 * (std::pow(10.0, 0.2) - 1.0 - p.noise_jitter));
  if (amplitude) amp = *amplitude;
  for (std::size_t d = 0; d < kDelayBins; ++d)
    for (std::size_t f = 0; f < kDopplerBins; ++f) {
      const double noise = floor * (1.0 + uniform(-p.noise_jitter, p.noise_jitter));
      r.ddm.set(d, f, noise + amp * floor * shape(d, f));
    }
  return out;
}

/// Noise-subtracted share of DDM power inside the central 3x5 block.
inline double central_energy_fraction(const DdmRecord& r) {
  double total = 0.0, central = 0.0;
  for (std::size_t d = 0; d < kDelayBins; ++d)
    for (std::size_t f = 0; f < kDopplerBins; ++f) {
      const double v = std::max(0.0, r.ddm(d, f) - r.noise_avg);
      total += v;
      if (d >= kCentralRow0 && d < kCentralRow0 + kCentralRows && f >= kCentralCol0 && f < kCentralCol0 + kCentralCols)
        central += v;
    }
  return total > 0 ? central / total : 0.0;
}

// ---------------------------------------------------------------------------
// Dataset emission

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t water = 0;
  std::size_t violations = 0;
  std::map<std::string, std::size_t> violation_counts;
  std::size_t mask_water_cells = 0;
  std::size_t mask_cells = 0;
};

struct Dataset {
  RenderedMask mask;
  std::vector<DdmRecord> records;
  std::vector<Violation> violations;
  DatasetSummary summary;
};

inline std::string record_id(std::size_t track, std::size_t point) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%04zu_%03zu", track, point);
  return buf;
}

/// Renders the mask, samples tracks and synthesizes one record per track
/// point. Tracks are generated in parallel from per-record seeds and
/// concatenated in track order.
inline Dataset generate_dataset(const SceneSpec& scene, std::size_t threads = 0) {
  scene.validate();
  Dataset ds;
  ds.mask = render_mask(scene);
  const auto tracks = sample_tracks(scene, scene.tracks.count, scene.seed);
  std::vector<std::vector<SynthResult>> per_track(tracks.size());
  parallel_for(tracks.size(), threads, [&](std::size_t t) {
    for (const auto& pt : tracks[t]) {
      std::mt19937_64 rng(mix_seed(scene.seed, 0x646d6dULL, pt.track, pt.index));
      const int label = ds.mask.mask.lookup(pt.lat, pt.lon).value_or(0);
      SynthResult s = synth_ddm(label, scene.ddm, rng);
      s.record.id = record_id(pt.track, pt.index);
      s.record.lat = pt.lat;
      s.record.lon = pt.lon;
      s.record.time = pt.time;
      per_track[t].push_back(std::move(s));
    }
  });
  for (auto& tr : per_track)
    for (auto& s : tr) {
      ds.summary.records++;
      if (*s.record.label == 1) ds.summary.water++;
      if (s.violation != Violation::None) {
        ds.summary.violations++;
        ds.summary.violation_counts[to_string(s.violation)]++;
      }
      ds.violations.push_back(s.violation);
      ds.records.push_back(std::move(s.record));
    }
  ds.summary.mask_cells = ds.mask.mask.values.size();
  for (auto v : ds.mask.mask.values) ds.summary.mask_water_cells += v;
  return ds;
}

inline nlohmann::ordered_json manifest_json(const SceneSpec& scene, const Dataset& ds) {
  const auto& s = ds.summary;
  nlohmann::ordered_json m;
  m["format_version"] = 1;
  m["scene"] = scene_to_json(scene);
  m["files"] = {{"records", "ddm.jsonl"}, {"mask", "mask.pgm"}, {"mask_georef", "mask.json"}};
  m["counts"] = {{"records", s.records},
                 {"water", s.water},
                 {"land", s.records - s.water},
                 {"tracks", scene.tracks.count},
                 {"filter_violations", s.violations},
                 {"mask_cells", s.mask_cells},
                 {"mask_water_cells", s.mask_water_cells}};
  nlohmann::ordered_json breakdown = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.violation_counts) breakdown[k] = v;
  m["violations"] = std::move(breakdown);
  m["water_fraction"] = s.records ? static_cast<double>(s.water) / static_cast<double>(s.records) : 0.0;
  m["violation_fraction"] = s.records ? static_cast<double>(s.violations) / static_cast<double>(s.records) : 0.0;
  return m;
}

/// Writes ddm.jsonl, mask.pgm (+ mask.json georeference) and manifest.json.
inline Dataset emit_dataset(const SceneSpec& scene, const std::filesystem::path& out_dir, std::size_t threads = 0) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  Dataset ds = generate_dataset(scene, threads);
  write_jsonl(out_dir / "ddm.jsonl", ds.records);
  write_mask(out_dir / "mask.pgm", ds.mask.mask);
  write_text(out_dir / "manifest.json", manifest_json(scene, ds).dump(2) + "\n");
  return ds;
}

}  // namespace iwd::datagen

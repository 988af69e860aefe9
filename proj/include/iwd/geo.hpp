#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iwd/errors.hpp"

namespace iwd {

/// Half-open floor binning. The small bias keeps coordinates that sit on a
/// cell edge (up to decimal round-off) in the higher-index cell.
inline long long cell_index(double coord, double origin, double cell_size) {
  return static_cast<long long>(std::floor((coord - origin) / cell_size + 1e-9));
}

/// Regular lat/lon lattice. Row 0 is the southernmost row; (origin_lat,
/// origin_lon) is the south-west corner of cell (0,0).
struct GridGeometry {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_size_deg = 0.01;
  std::size_t rows = 0;
  std::size_t cols = 0;

  void validate() const {
    if (!(cell_size_deg > 0.0) || !std::isfinite(cell_size_deg)) {
      throw DomainError("grid cell size must be positive, got " + std::to_string(cell_size_deg));
    }
    if (rows == 0 || cols == 0) throw DomainError("grid must have at least one row and column");
  }

  std::optional<std::pair<std::size_t, std::size_t>> cell_of(double lat, double lon) const {
    const long long r = cell_index(lat, origin_lat, cell_size_deg);
    const long long c = cell_index(lon, origin_lon, cell_size_deg);
    if (r < 0 || c < 0 || r >= static_cast<long long>(rows) || c >= static_cast<long long>(cols)) return std::nullopt;
    return std::pair{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
  }

  double cell_center_lat(std::size_t r) const { return origin_lat + (static_cast<double>(r) + 0.5) * cell_size_deg; }
  double cell_center_lon(std::size_t c) const { return origin_lon + (static_cast<double>(c) + 0.5) * cell_size_deg; }
  double lat_max() const { return origin_lat + static_cast<double>(rows) * cell_size_deg; }
  double lon_max() const { return origin_lon + static_cast<double>(cols) * cell_size_deg; }
};

template <class T>
struct Raster {
  GridGeometry geo;
  std::vector<T> values;

  Raster() = default;
  explicit Raster(GridGeometry g, T fill = T{}) : geo(g), values(g.rows * g.cols, fill) { geo.validate(); }

  T& at(std::size_t r, std::size_t c) { return values[r * geo.cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * geo.cols + c]; }

  std::optional<T> lookup(double lat, double lon) const {
    const auto cell = geo.cell_of(lat, lon);
    if (!cell) return std::nullopt;
    return at(cell->first, cell->second);
  }
};

/// River widths in meters (0 = no river).
using WidthRaster = Raster<double>;

/// Binary water mask, 1 = water.
using WaterMask = Raster<std::uint8_t>;

inline void validate_mask(const WaterMask& m) {
  m.geo.validate();
  if (m.values.size() != m.geo.rows * m.geo.cols) throw DomainError("water mask size does not match its geometry");
  for (auto v : m.values)
    if (v > 1) throw DomainError("water mask labels must be 0 or 1");
}

}  // namespace iwd

#pragma once

// Confusion-matrix metrics, grid aggregation and detection rates.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iwd/errors.hpp"
#include "iwd/geo.hpp"
#include "iwd/timeutil.hpp"

namespace iwd {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }

  void add(int predicted, int actual) {
    if (predicted == 1 && actual == 1) ++tp;
    else if (predicted == 1) ++fp;
    else if (actual == 1) ++fn;
    else ++tn;
  }

  static ConfusionCounts from(std::span<const int> predicted, std::span<const int> actual) {
    if (predicted.size() != actual.size()) throw ShapeError("confusion: prediction/label length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i], actual[i]);
    return c;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Empty optionals mark undefined metrics (zero denominators), which are
/// distinct from a value of 0.
struct Metrics {
  std::optional<double> recall, precision, f1, oa, pe, kappa;
};

inline Metrics metrics(const ConfusionCounts& c) {
  const double n = static_cast<double>(c.total());
  if (n == 0) throw DomainError("metrics: empty confusion matrix");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  Metrics m;
  if (tp + fn > 0) m.recall = tp / (tp + fn);
  if (tp + fp > 0) m.precision = tp / (tp + fp);
  if (m.recall && m.precision && *m.recall + *m.precision > 0)
    m.f1 = 2 * *m.precision * *m.recall / (*m.precision + *m.recall);
  m.oa = (tp + tn) / n;
  m.pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n);
  if (*m.pe != 1.0) m.kappa = (*m.oa - *m.pe) / (1.0 - *m.pe);
  return m;
}

// ---------------------------------------------------------------------------
// Grid aggregation

struct PredictionSample {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  Timestamp time{};
  double p = 0.0;
  int cls = 0;
};

struct GridCell {
  long long lat_index = 0;
  long long lon_index = 0;
  double sum_p = 0.0;
  std::size_t n = 0;
  double gt_sum = 0.0;
  std::size_t gt_n = 0;

  std::optional<double> mean_p() const {
    if (n == 0) return std::nullopt;
    return sum_p / static_cast<double>(n);
  }
  std::optional<double> gt_mean() const {
    if (gt_n == 0) return std::nullopt;
    return gt_sum / static_cast<double>(gt_n);
  }
};

struct GridAggregate {
  GridGeometry geo;
  std::map<std::pair<long long, long long>, GridCell> cells;
  std::size_t binned = 0;
  std::size_t skipped = 0;

  GridCell& cell(long long r, long long c) {
    auto [it, inserted] = cells.try_emplace({r, c});
    if (inserted) {
      it->second.lat_index = r;
      it->second.lon_index = c;
    }
    return it->second;
  }

  /// Associative merge of partial aggregates over the same grid.
  void merge(const GridAggregate& other) {
    for (const auto& [key, oc] : other.cells) {
      auto& mc = cell(key.first, key.second);
      mc.sum_p += oc.sum_p;
      mc.n += oc.n;
      mc.gt_sum += oc.gt_sum;
      mc.gt_n += oc.gt_n;
    }
    binned += other.binned;
    skipped += other.skipped;
  }
};

/// Bins each sample by floor((coord - origin) / cell); samples outside the
/// grid are counted in `skipped`.
inline GridAggregate grid_aggregate(std::span<const PredictionSample> samples, const GridGeometry& geo) {
  geo.validate();
  GridAggregate agg;
  agg.geo = geo;
  for (const auto& s : samples) {
    const auto cell = geo.cell_of(s.lat, s.lon);
    if (!cell || !std::isfinite(s.p)) {
      ++agg.skipped;
      continue;
    }
    auto& gc = agg.cell(static_cast<long long>(cell->first), static_cast<long long>(cell->second));
    gc.sum_p += s.p;
    ++gc.n;
    ++agg.binned;
  }
  return agg;
}

/// Averages mask pixels (by pixel center) into the aggregate's cells.
inline void add_ground_truth(GridAggregate& agg, const WaterMask& mask) {
  for (std::size_t r = 0; r < mask.geo.rows; ++r)
    for (std::size_t c = 0; c < mask.geo.cols; ++c) {
      const auto cell = agg.geo.cell_of(mask.geo.cell_center_lat(r), mask.geo.cell_center_lon(c));
      if (!cell) continue;
      auto& gc = agg.cell(static_cast<long long>(cell->first), static_cast<long long>(cell->second));
      gc.gt_sum += mask.at(r, c);
      ++gc.gt_n;
    }
}

/// Cell-level confusion over cells holding both predictions and ground truth;
/// both sides are binarized as mean >= threshold.
inline ConfusionCounts grid_confusion(const GridAggregate& agg, double threshold = 0.5) {
  ConfusionCounts c;
  for (const auto& [key, cell] : agg.cells) {
    const auto mp = cell.mean_p();
    const auto mg = cell.gt_mean();
    if (!mp || !mg) continue;
    c.add(*mp >= threshold ? 1 : 0, *mg >= threshold ? 1 : 0);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Detection rate

struct BoundingBox {
  double lat_min = -90, lat_max = 90, lon_min = -180, lon_max = 180;

  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }

  void validate() const {
    if (!(lat_min <= lat_max) || !(lon_min <= lon_max)) throw ConfigError("bounding box bounds are not ordered");
  }
};

struct DateRange {
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // exclusive

  bool contains(Timestamp t) const { return (!from || t >= *from) && (!to || t < *to); }
};

struct DetectionRate {
  std::size_t detected = 0;
  std::size_t total = 0;
  std::optional<double> rate;  // undefined when total == 0
};

inline DetectionRate detection_rate(std::span<const PredictionSample> samples, const BoundingBox& box,
                                    const DateRange& dates = {}) {
  DetectionRate d;
  for (const auto& s : samples) {
    if (!box.contains(s.lat, s.lon) || !dates.contains(s.time)) continue;
    ++d.total;
    if (s.cls == 1) ++d.detected;
  }
  if (d.total > 0) d.rate = static_cast<double>(d.detected) / static_cast<double>(d.total);
  return d;
}

}  // namespace iwd

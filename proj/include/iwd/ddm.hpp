#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iwd/errors.hpp"
#include "iwd/geo.hpp"
#include "iwd/timeutil.hpp"

namespace iwd {

inline constexpr std::size_t kDelayBins = 17;
inline constexpr std::size_t kDopplerBins = 11;
inline constexpr std::size_t kDdmSize = kDelayBins * kDopplerBins;

// Central window: delay rows 7..9, Doppler columns 3..7.
inline constexpr std::size_t kCentralRow0 = 7;
inline constexpr std::size_t kCentralRows = 3;
inline constexpr std::size_t kCentralCol0 = 3;
inline constexpr std::size_t kCentralCols = 5;
inline constexpr std::size_t kCentralSize = kCentralRows * kCentralCols;

/// 17 delay bins x 11 Doppler bins of non-negative received power,
/// row-major with delay as the row index.
class DelayDopplerMap {
 public:
  DelayDopplerMap() { power_.fill(0.0); }

  explicit DelayDopplerMap(std::span<const double> row_major) {
    if (row_major.size() != kDdmSize) {
      throw ShapeError("DDM must have 17x11 = 187 values, got " + std::to_string(row_major.size()));
    }
    std::copy(row_major.begin(), row_major.end(), power_.begin());
    validate();
  }

  static DelayDopplerMap from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.size() != kDelayBins) {
      throw ShapeError("DDM must have 17 delay rows, got " + std::to_string(rows.size()));
    }
    std::vector<double> flat;
    flat.reserve(kDdmSize);
    for (const auto& r : rows) {
      if (r.size() != kDopplerBins) {
        throw ShapeError("DDM rows must have 11 Doppler bins, got " + std::to_string(r.size()));
      }
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return DelayDopplerMap(flat);
  }

  double operator()(std::size_t delay, std::size_t doppler) const { return power_[delay * kDopplerBins + doppler]; }

  void set(std::size_t delay, std::size_t doppler, double v) {
    if (delay >= kDelayBins || doppler >= kDopplerBins) throw std::out_of_range("DDM bin out of range");
    if (!std::isfinite(v) || v < 0.0) throw DomainError("DDM power must be finite and >= 0");
    power_[delay * kDopplerBins + doppler] = v;
  }

  std::span<const double, kDdmSize> values() const { return power_; }

  double max() const { return *std::max_element(power_.begin(), power_.end()); }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(power_.begin(), power_.end()) - power_.begin());
  }

  void validate() const {
    for (double v : power_)
      if (!std::isfinite(v) || v < 0.0) throw DomainError("DDM power must be finite and >= 0");
  }

  friend bool operator==(const DelayDopplerMap&, const DelayDopplerMap&) = default;

 private:
  std::array<double, kDdmSize> power_;
};

struct DdmRecord {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  Timestamp time{};
  double sp_inc_angle_deg = 0.0;
  double ant_gain_db = 0.0;
  std::uint32_t quality_flags = 0;
  double noise_avg = 1.0;
  DelayDopplerMap ddm;
  std::optional<int> label;

  void validate() const {
    if (!(lat >= -90.0 && lat <= 90.0)) throw DomainError("record " + id + ": latitude out of range");
    if (!(lon >= -180.0 && lon <= 180.0)) throw DomainError("record " + id + ": longitude out of range");
    if (!(sp_inc_angle_deg >= 0.0) || !std::isfinite(sp_inc_angle_deg))
      throw DomainError("record " + id + ": incidence angle must be >= 0");
    if (!std::isfinite(ant_gain_db)) throw DomainError("record " + id + ": antenna gain must be finite");
    if (!(noise_avg > 0.0) || !std::isfinite(noise_avg)) throw DomainError("record " + id + ": noise_avg must be > 0");
    if (label && *label != 0 && *label != 1) throw DomainError("record " + id + ": label must be 0 or 1");
    ddm.validate();
  }
};

struct FilterPolicy {
  double max_inc_angle_deg = 65.0;
  double min_ant_gain_db = 0.0;
  double min_snr_db = 2.0;
  bool require_clean_flags = true;

  void validate() const {
    if (!std::isfinite(min_snr_db)) throw ConfigError("min_snr_db must be finite");
    if (!(max_inc_angle_deg > 0.0)) throw ConfigError("max_inc_angle_deg must be > 0");
  }
};

/// 10*log10(max(ddm)/noise_avg); -infinity for an all-zero map.
inline double snr_db(const DelayDopplerMap& ddm, double noise_avg) {
  if (!(noise_avg > 0.0) || !std::isfinite(noise_avg)) {
    throw DomainError("snr_db: noise_avg must be positive, got " + std::to_string(noise_avg));
  }
  const double mx = ddm.max();
  if (mx <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(mx / noise_avg);
}

enum class FilterOutcome { Accepted, QualityFlags, IncidenceAngle, AntennaGain, LowSnr, NoSignal, Invalid };

inline const char* to_string(FilterOutcome r) {
  switch (r) {
    case FilterOutcome::Accepted: return "accepted";
    case FilterOutcome::QualityFlags: return "quality_flags";
    case FilterOutcome::IncidenceAngle: return "incidence_angle";
    case FilterOutcome::AntennaGain: return "antenna_gain";
    case FilterOutcome::LowSnr: return "low_snr";
    case FilterOutcome::NoSignal: return "no_signal";
    case FilterOutcome::Invalid: return "invalid";
  }
  return "unknown";
}

/// First failing check, in the order flags, incidence, gain, SNR. Records
/// that fail validation are rejected rather than thrown.
inline FilterOutcome filter_outcome(const DdmRecord& r, const FilterPolicy& policy) {
  try {
    r.validate();
  } catch (const std::exception&) {
    return FilterOutcome::Invalid;
  }
  if (policy.require_clean_flags && r.quality_flags != 0) return FilterOutcome::QualityFlags;
  if (!(r.sp_inc_angle_deg <= policy.max_inc_angle_deg)) return FilterOutcome::IncidenceAngle;
  if (!(r.ant_gain_db >= policy.min_ant_gain_db)) return FilterOutcome::AntennaGain;
  const double snr = snr_db(r.ddm, r.noise_avg);
  if (std::isinf(snr) && snr < 0) return FilterOutcome::NoSignal;
  if (!(snr >= policy.min_snr_db)) return FilterOutcome::LowSnr;
  return FilterOutcome::Accepted;
}

inline bool passes_filter(const DdmRecord& r, const FilterPolicy& policy = {}) {
  return filter_outcome(r, policy) == FilterOutcome::Accepted;
}

/// The fixed 3x5 central block, flattened row-major.
inline std::array<double, kCentralSize> central_region(const DelayDopplerMap& ddm) {
  std::array<double, kCentralSize> out{};
  for (std::size_t r = 0; r < kCentralRows; ++r)
    for (std::size_t c = 0; c < kCentralCols; ++c) out[r * kCentralCols + c] = ddm(kCentralRow0 + r, kCentralCol0 + c);
  return out;
}

/// Divides by the map maximum.
inline DelayDopplerMap normalize(const DelayDopplerMap& ddm) {
  const double mx = ddm.max();
  if (!(mx > 0.0)) throw DomainError("normalize: empty DDM");
  std::array<double, kDdmSize> v;
  const auto src = ddm.values();
  for (std::size_t i = 0; i < kDdmSize; ++i) v[i] = src[i] / mx;
  return DelayDopplerMap(v);
}

// ---------------------------------------------------------------------------
// Otsu binarization

inline constexpr std::size_t kOtsuBins = 256;

inline std::size_t otsu_bin(double v) {
  return std::min<std::size_t>(kOtsuBins - 1, static_cast<std::size_t>(std::floor(v * kOtsuBins)));
}

struct OtsuResult {
  std::size_t last_low_bin;  // values in bins <= last_low_bin form the low class
  double threshold;          // v >= threshold  <=>  bin(v) > last_low_bin
  double between_class_variance;
};

/// Maximizes between-class variance over a 256-bin histogram of values in
/// [0,1]; the smallest maximizing split wins ties.
inline OtsuResult otsu(std::span<const double> values) {
  if (values.empty()) throw DomainError("otsu: empty input");
  std::array<double, kOtsuBins> hist{};
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DomainError("otsu: values must lie in [0,1]");
    hist[otsu_bin(v)] += 1.0;
  }
  const double n = static_cast<double>(values.size());
  double total_moment = 0.0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) total_moment += static_cast<double>(b) * hist[b];

  std::array<double, kOtsuBins - 1> var;
  var.fill(-1.0);
  double w0 = 0.0, moment0 = 0.0;
  double best = -1.0;
  for (std::size_t k = 0; k + 1 < kOtsuBins; ++k) {
    w0 += hist[k];
    moment0 += static_cast<double>(k) * hist[k];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = moment0 / w0;
    const double mu1 = (total_moment - moment0) / w1;
    var[k] = (w0 / n) * (w1 / n) * (mu0 - mu1) * (mu0 - mu1);
    best = std::max(best, var[k]);
  }
  if (best < 0.0) throw DomainError("otsu: degenerate histogram");
  // Splits equal up to rounding count as ties.
  std::size_t best_bin = 0;
  while (var[best_bin] < best * (1.0 - 1e-12)) ++best_bin;
  return {best_bin, static_cast<double>(best_bin + 1) / kOtsuBins, var[best_bin]};
}

inline double otsu_threshold(std::span<const double> values) { return otsu(values).threshold; }

/// Width in meters to grayscale: < 1 m -> 0, [1,100] m -> w/100, > 100 m -> 1.
inline double width_to_gray(double width_m) {
  if (width_m < 1.0) return 0.0;
  return std::min(width_m, 100.0) / 100.0;
}

/// Grayscale mapping followed by Otsu binarization. A raster whose grayscale
/// values are all equal has no threshold; it maps to water where gray > 0.
inline WaterMask width_to_mask(const WidthRaster& widths) {
  if (widths.values.empty()) throw DomainError("width_to_mask: empty raster");
  widths.geo.validate();
  std::vector<double> gray(widths.values.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double w = widths.values[i];
    if (!std::isfinite(w) || w < 0.0) throw DomainError("width_to_mask: widths must be finite and >= 0");
    gray[i] = width_to_gray(w);
  }
  WaterMask mask(widths.geo, 0);
  const bool constant = std::all_of(gray.begin(), gray.end(), [&](double g) { return otsu_bin(g) == otsu_bin(gray[0]); });
  if (constant) {
    for (std::size_t i = 0; i < gray.size(); ++i) mask.values[i] = gray[i] > 0.0 ? 1 : 0;
    return mask;
  }
  const double t = otsu_threshold(gray);
  for (std::size_t i = 0; i < gray.size(); ++i) mask.values[i] = gray[i] >= t ? 1 : 0;
  return mask;
}

}  // namespace iwd

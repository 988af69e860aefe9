#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "iwd/ddm.hpp"
#include "iwd/io.hpp"
#include "oracles.hpp"

using namespace iwd;
namespace fs = std::filesystem;

namespace {

DdmRecord clean_record(double inc = 30.0, double gain = 5.0, double snr = 10.0) {
  DdmRecord r;
  r.id = "r";
  r.sp_inc_angle_deg = inc;
  r.ant_gain_db = gain;
  r.noise_avg = 2.0;
  r.ddm.set(8, 5, 2.0 * std::pow(10.0, snr / 10.0));
  return r;
}

DelayDopplerMap ramp() {
  DelayDopplerMap m;
  for (std::size_t i = 0; i < kDdmSize; ++i) m.set(i / kDopplerBins, i % kDopplerBins, static_cast<double>(i));
  return m;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("iwd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Ddm, RejectsBadShapesAndValues) {
  EXPECT_THROW(DelayDopplerMap(std::vector<double>(186)), ShapeError);
  std::vector<double> v(kDdmSize, 1.0);
  v[3] = -1.0;
  EXPECT_THROW(DelayDopplerMap{v}, DomainError);
  v[3] = std::nan("");
  EXPECT_THROW(DelayDopplerMap{v}, DomainError);
  EXPECT_THROW(DelayDopplerMap::from_rows(std::vector<std::vector<double>>(17, std::vector<double>(10))), ShapeError);
}

TEST(Snr, Examples) {
  DelayDopplerMap m;
  m.set(3, 3, 100.0);
  EXPECT_NEAR(snr_db(m, 1.0), 20.0, 1e-12);
  EXPECT_NEAR(snr_db(m, 100.0), 0.0, 1e-12);
  m.set(3, 3, 1.58489);
  EXPECT_NEAR(snr_db(m, 1.0), 2.0, 1e-5);
  EXPECT_THROW(snr_db(m, 0.0), DomainError);
  EXPECT_THROW(snr_db(m, -1.0), DomainError);
  const double s = snr_db(DelayDopplerMap{}, 1.0);
  EXPECT_TRUE(std::isinf(s) && s < 0);
}

TEST(Snr, MonotoneInPeakAndNoise) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int t = 0; t < 200; ++t) {
    DelayDopplerMap m;
    const double a = u(rng), b = a + u(rng), n = u(rng);
    m.set(2, 2, a);
    const double low = snr_db(m, n);
    m.set(2, 2, b);
    EXPECT_GT(snr_db(m, n), low);
    EXPECT_LT(snr_db(m, n + 1.0), snr_db(m, n));
  }
}

TEST(Filter, Examples) {
  EXPECT_FALSE(passes_filter(clean_record(70.0)));
  EXPECT_TRUE(passes_filter(clean_record(30.0, 5.0, 10.0)));
  EXPECT_FALSE(passes_filter(clean_record(30.0, 5.0, 1.9)));
  EXPECT_EQ(filter_outcome(clean_record(30.0, 5.0, 1.9), {}), FilterOutcome::LowSnr);
}

TEST(Filter, BoundariesPass) {
  EXPECT_TRUE(passes_filter(clean_record(65.0, 0.0, 2.0 + 1e-12)));
  EXPECT_FALSE(passes_filter(clean_record(65.0 + 1e-9)));
  EXPECT_FALSE(passes_filter(clean_record(30.0, -1e-9)));
}

TEST(Filter, FlagsAndDegenerateRecordsFailClosed) {
  auto r = clean_record();
  r.quality_flags = 0x40;
  EXPECT_EQ(filter_outcome(r, {}), FilterOutcome::QualityFlags);
  FilterPolicy relaxed;
  relaxed.require_clean_flags = false;
  EXPECT_TRUE(passes_filter(r, relaxed));

  auto empty = clean_record();
  empty.ddm = DelayDopplerMap{};
  EXPECT_EQ(filter_outcome(empty, {}), FilterOutcome::NoSignal);
  auto bad = clean_record();
  bad.noise_avg = 0.0;
  EXPECT_EQ(filter_outcome(bad, {}), FilterOutcome::Invalid);
}

TEST(Filter, RelaxingPolicyNeverRejects) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> inc(0, 90), gain(-5, 15), snr(-3, 12), relax(0, 5);
  for (int t = 0; t < 2000; ++t) {
    auto r = clean_record(inc(rng), gain(rng), snr(rng));
    r.quality_flags = (t % 7 == 0) ? 1u : 0u;
    FilterPolicy p;
    FilterPolicy q = p;
    q.max_inc_angle_deg += relax(rng);
    q.min_ant_gain_db -= relax(rng);
    q.min_snr_db -= relax(rng);
    if (t % 3 == 0) q.require_clean_flags = false;
    if (passes_filter(r, p)) {
      EXPECT_TRUE(passes_filter(r, q));
    }
  }
}

TEST(Central, Examples) {
  DelayDopplerMap m;
  m.set(8, 5, 1.0);
  const auto c = central_region(m);
  for (std::size_t i = 0; i < kCentralSize; ++i) EXPECT_EQ(c[i], i == 7 ? 1.0 : 0.0);

  std::vector<double> ones(kDdmSize, 1.0);
  for (double v : central_region(DelayDopplerMap{ones})) EXPECT_EQ(v, 1.0);

  const auto rc = central_region(ramp());
  std::size_t k = 0;
  for (std::size_t r = 7; r <= 9; ++r)
    for (std::size_t col = 3; col <= 7; ++col) EXPECT_EQ(rc[k++], static_cast<double>(r * 11 + col));
}

TEST(Normalize, ExamplesAndProperties) {
  DelayDopplerMap m;
  m.set(1, 1, 2.0);
  m.set(4, 4, 4.0);
  const auto n = normalize(m);
  EXPECT_EQ(n(1, 1), 0.5);
  EXPECT_EQ(n(4, 4), 1.0);
  EXPECT_EQ(n.max(), 1.0);
  EXPECT_EQ(normalize(n), n);
  EXPECT_THROW(normalize(DelayDopplerMap{}), DomainError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 50);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(kDdmSize);
    for (auto& x : v) x = u(rng);
    const DelayDopplerMap d{v};
    const auto nd = normalize(d);
    EXPECT_EQ(nd.argmax(), d.argmax());
    EXPECT_EQ(nd.max(), 1.0);
    const auto nn = normalize(nd);
    for (std::size_t i = 0; i < kDdmSize; ++i) EXPECT_NEAR(nn.values()[i], nd.values()[i], 1e-15);
  }
}

TEST(Otsu, Examples) {
  const std::vector<double> two{0, 0, 1, 1};
  const double t = otsu_threshold(two);
  EXPECT_GT(t, 0.0);
  EXPECT_LE(t, 1.0);
  const std::vector<double> v{0.1, 0.1, 0.12, 0.88, 0.9};
  const double t2 = otsu_threshold(v);
  EXPECT_GT(t2, 0.12);
  EXPECT_LT(t2, 0.88);
  EXPECT_EQ(t2, 31.0 / 256.0);  // smallest split that isolates the low group
  EXPECT_THROW(otsu_threshold(std::vector<double>{0.5, 0.5, 0.5}), DomainError);
  EXPECT_THROW(otsu_threshold(std::vector<double>{}), DomainError);
  EXPECT_THROW(otsu_threshold(std::vector<double>{0.5, 1.5}), DomainError);
}

TEST(Otsu, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(2, 64);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (auto& x : v) x = u(rng);
    const auto want = oracle::otsu_exhaustive(v);
    if (want.best_variance < 0) {
      EXPECT_THROW(otsu(v), DomainError);
      continue;
    }
    const auto got = otsu(v);
    EXPECT_EQ(got.last_low_bin, want.best_k);
    EXPECT_NEAR(got.between_class_variance, want.best_variance, 1e-9 * want.best_variance);
  }
}

TEST(Otsu, RoundingLevelTiesGoToTheSmallestSplit) {
  // Splitting after 0.25 or after 0.5 gives the same variance in exact arithmetic.
  const std::vector<double> v{0.5, 0.5, 0.25, 0.5, 0.5, 0.75, 0.5};
  EXPECT_EQ(otsu(v).last_low_bin, 64u);
  EXPECT_EQ(oracle::otsu_exhaustive(v).best_k, 64u);
}

TEST(WidthToMask, GrayscaleMapping) {
  EXPECT_EQ(width_to_gray(100.0), 1.0);
  EXPECT_EQ(width_to_gray(250.0), 1.0);
  EXPECT_EQ(width_to_gray(0.0), 0.0);
  EXPECT_EQ(width_to_gray(0.99), 0.0);
  EXPECT_EQ(width_to_gray(1.0), 0.01);
  EXPECT_EQ(width_to_gray(50.0), 0.5);
}

TEST(WidthToMask, FiveCellExample) {
  WidthRaster w(GridGeometry{0, 0, 0.01, 1, 5});
  w.values = {2, 3, 2, 95, 98};
  const auto m = width_to_mask(w);
  EXPECT_EQ(m.values, (std::vector<std::uint8_t>{0, 0, 0, 1, 1}));
  WidthRaster zero(GridGeometry{0, 0, 0.01, 2, 2});
  EXPECT_EQ(width_to_mask(zero).values, (std::vector<std::uint8_t>(4, 0)));
  WidthRaster empty;
  EXPECT_THROW(width_to_mask(empty), DomainError);
}

TEST(Time, RoundTrip) {
  const auto t = parse_rfc3339("2021-03-04T05:06:07Z");
  EXPECT_EQ(format_rfc3339(t), "2021-03-04T05:06:07Z");
  EXPECT_EQ(format_rfc3339(parse_rfc3339("2021-03-04")), "2021-03-04T00:00:00Z");
  EXPECT_THROW(parse_rfc3339("2021-13-04T00:00:00Z"), DataError);
  EXPECT_THROW(parse_rfc3339("yesterday"), DataError);
}

TEST(Io, JsonlRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<DdmRecord> recs;
  for (int i = 0; i < 5; ++i) {
    DdmRecord r = clean_record();
    r.id = "t0000_00" + std::to_string(i);
    r.lat = -3.123456789 + u(rng);
    r.lon = -65.5 + u(rng);
    r.time = parse_rfc3339("2020-01-01T00:00:00Z") + std::chrono::seconds(i);
    for (std::size_t d = 0; d < kDelayBins; ++d)
      for (std::size_t f = 0; f < kDopplerBins; ++f) r.ddm.set(d, f, u(rng));
    if (i % 2) r.label = i % 4 == 1 ? 1 : 0;
    recs.push_back(r);
  }
  const auto dir = temp_dir("jsonl");
  write_jsonl(dir / "a.jsonl", recs);
  const auto back = read_jsonl(dir / "a.jsonl");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].lat, recs[i].lat);
    EXPECT_EQ(back[i].time, recs[i].time);
    EXPECT_EQ(back[i].ddm, recs[i].ddm);
    EXPECT_EQ(back[i].label, recs[i].label);
  }
  write_jsonl(dir / "b.jsonl", back);
  EXPECT_EQ(read_text(dir / "a.jsonl"), read_text(dir / "b.jsonl"));
}

TEST(Io, MalformedLinesNameTheLine) {
  const auto dir = temp_dir("bad");
  write_text(dir / "x.jsonl", record_to_line(clean_record()) + "\n{\"id\": 3}\n");
  try {
    read_jsonl(dir / "x.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_jsonl(dir / "missing.jsonl"), DataError);
}

TEST(Io, MaskPgmRoundTrip) {
  WaterMask m(GridGeometry{-4.0, -66.0, 0.01, 3, 4});
  m.at(0, 0) = 1;
  m.at(2, 3) = 1;
  m.at(1, 2) = 1;
  const auto dir = temp_dir("mask");
  write_mask(dir / "m.pgm", m);
  const auto back = read_mask(dir / "m.pgm");
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.geo.origin_lat, -4.0);
  EXPECT_EQ(back.geo.rows, 3u);
  // North row first in the file: row 2 holds the water cell at column 3.
  const std::string text = read_text(dir / "m.pgm");
  const std::string header = "P5\n4 3\n255\n";
  ASSERT_EQ(text.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(text[header.size() + 3]), 255);
  EXPECT_EQ(static_cast<unsigned char>(text[header.size() + 8]), 255);
}

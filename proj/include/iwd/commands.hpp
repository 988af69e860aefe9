#pragma once

// The five CLI commands as plain functions over option structs. Each one
// writes its resolved options next to its outputs.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "iwd/checkpoint.hpp"
#include "iwd/datagen.hpp"
#include "iwd/ddm.hpp"
#include "iwd/evaluation.hpp"
#include "iwd/io.hpp"
#include "iwd/parallel.hpp"
#include "iwd/training.hpp"
#include "json.hpp"

namespace iwd::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

/// Shortest decimal that parses back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) throw DataError(what + ": not a number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

/// A dataset argument is either a JSONL file or a directory holding ddm.jsonl.
inline fs::path resolve_records(const fs::path& p) { return fs::is_directory(p) ? p / "ddm.jsonl" : p; }

inline nlohmann::ordered_json metrics_json(const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  return {{"recall", opt(m.recall)}, {"precision", opt(m.precision)}, {"f1", opt(m.f1)},
          {"oa", opt(m.oa)},         {"pe", opt(m.pe)},               {"kappa", opt(m.kappa)}};
}

inline nlohmann::ordered_json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  fs::path scene;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;

  nlohmann::ordered_json resolved(const datagen::SceneSpec& s) const {
    return {{"command", "gen"}, {"scene", scene.string()}, {"out", out.string()}, {"threads", threads},
            {"scene_resolved", datagen::scene_to_json(s)}};
  }
};

inline datagen::DatasetSummary run_gen(const GenOptions& o, std::ostream& log) {
  datagen::SceneSpec scene = datagen::load_scene(o.scene);
  if (o.seed) scene.seed = *o.seed;
  scene.validate();
  const auto ds = datagen::emit_dataset(scene, o.out, o.threads);
  write_json(o.out / "config.json", o.resolved(scene));
  log << "gen: " << ds.summary.records << " records (" << ds.summary.water << " water, " << ds.summary.violations
      << " filter violations) -> " << o.out.string() << "\n";
  return ds.summary;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path data;
  fs::path out;
  ModelKind model = ModelKind::Queen;
  bool no_se = false;
  TrainConfig train;
  std::optional<std::uint64_t> init_seed;  // defaults to the training seed
  unsigned train_percent = 80;
  std::size_t dat_heads = 1;
  qsim::XxPairing pairing = qsim::XxPairing::Adjacent;

  ModelConfig model_config() const {
    ModelConfig m;
    m.kind = model;
    m.use_se = !no_se;
    m.dat.heads = dat_heads;
    m.pairing = pairing;
    return m;
  }

  void validate() const {
    if (no_se && model != ModelKind::Queen) throw ConfigError("--no-se only applies to the queen model");
    if (train_percent == 0 || train_percent >= 100) throw ConfigError("train_percent must be in (0,100)");
    train.validate();
    model_config().validate();
  }

  nlohmann::ordered_json resolved() const {
    return {{"command", "train"},
            {"data", data.string()},
            {"out", out.string()},
            {"model", to_string(model)},
            {"use_se", !no_se},
            {"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"lr", train.lr},
            {"seed", train.seed},
            {"init_seed", init_seed.value_or(train.seed)},
            {"bce_weight", train.bce_weight},
            {"kappa_weight", train.kappa_weight},
            {"kappa_form", to_string(train.kappa_form)},
            {"clamp_eps", train.clamp_eps},
            {"kappa_degenerate_tol", train.kappa_degenerate_tol},
            {"train_percent", train_percent},
            {"dat_heads", dat_heads},
            {"xx_pairing", qsim::to_string(pairing)},
            {"threads", train.threads}};
  }
};

struct TrainOutcome {
  std::size_t train_records = 0;
  std::size_t val_records = 0;
  std::size_t filtered_out = 0;
  std::vector<EpochLog> epochs;
};

inline TrainOutcome run_train(const TrainOptions& o, std::ostream& log) {
  o.validate();
  const auto all = read_jsonl(resolve_records(o.data));
  std::vector<DdmRecord> kept;
  TrainOutcome out;
  for (const auto& r : all) {
    if (!r.label) throw DataError("record '" + r.id + "' has no label; training needs labelled data");
    if (passes_filter(r)) kept.push_back(r);
    else ++out.filtered_out;
  }
  if (kept.empty()) throw DataError("no records pass the quality filter");
  Split split = split_by_id(kept, o.train_percent);
  out.train_records = split.train.size();
  out.val_records = split.val.size();
  if (split.train.empty()) throw DataError("training split is empty");

  ensure_dir(o.out);
  write_json(o.out / "config.json", o.resolved());
  IwdModel model = IwdModel::create(o.model_config(), o.init_seed.value_or(o.train.seed));
  std::ofstream csv(o.out / "metrics.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write " + (o.out / "metrics.csv").string());
  csv << metrics_csv_header();
  log << "train: " << to_string(o.model) << (o.no_se ? " (no SE)" : "") << ", " << out.train_records << " train / "
      << out.val_records << " val records, " << out.filtered_out << " filtered\n";
  const auto result = train(model, split.train, split.val, o.train, [&](const EpochLog& e) {
    csv << metrics_csv_row(e) << std::flush;
    log << "epoch " << e.epoch << " loss " << format_double(e.train_loss) << " val_kappa "
        << format_optional(e.val.kappa) << " val_f1 " << format_optional(e.val.f1) << "\n";
  });
  out.epochs = result.epochs;
  save_checkpoint(o.out / "model.json", model);

  const auto census = model.census();
  nlohmann::ordered_json summary;
  summary["train_records"] = out.train_records;
  summary["val_records"] = out.val_records;
  summary["filtered_out"] = out.filtered_out;
  summary["census"] = {{"qubits", census.qubits},
                       {"quantum_angles", census.quantum_angles},
                       {"classical", census.classical}};
  if (!out.epochs.empty()) summary["final_val"] = metrics_json(out.epochs.back().val);
  write_json(o.out / "summary.json", summary);
  return out;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
  fs::path ckpt;
  fs::path data;
  fs::path out;  // CSV
  bool no_filter = false;
  std::size_t threads = 0;

  fs::path skip_log() const { return fs::path(out.string() + ".skipped.csv"); }
  fs::path config_path() const { return fs::path(out.string() + ".config.json"); }

  nlohmann::ordered_json resolved() const {
    return {{"command", "infer"}, {"ckpt", ckpt.string()}, {"data", data.string()},
            {"out", out.string()}, {"no_filter", no_filter}, {"threads", threads}};
  }
};

inline std::string predictions_csv_header() { return "id,lat,lon,time,p,class\n"; }

struct InferOutcome {
  std::size_t input = 0;
  std::size_t written = 0;
  std::size_t skipped = 0;
};

inline InferOutcome run_infer(const InferOptions& o, std::ostream& log) {
  const IwdModel model = load_checkpoint(o.ckpt);
  // Malformed lines are skipped and logged, like filtered records.
  const fs::path src = resolve_records(o.data);
  std::ifstream in(src, std::ios::binary);
  if (!in) throw DataError("cannot open " + src.string());
  struct Item {
    std::optional<DdmRecord> record;
    std::string id;
    std::string reason;
  };
  std::vector<Item> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Item it;
    it.id = "line:" + std::to_string(lineno);
    try {
      it.record = record_from_json(nlohmann::json::parse(line));
      it.id = it.record->id;
    } catch (const nlohmann::json::exception& e) {
      it.reason = std::string("malformed_json: ") + e.what();
    } catch (const DataError& e) {
      it.reason = std::string("malformed_record: ") + e.what();
    }
    items.push_back(std::move(it));
  }

  std::vector<double> p(items.size(), 0.0);
  const dat::Bound bound(model.params(), false);
  parallel_for(items.size(), o.threads, [&](std::size_t i) {
    auto& it = items[i];
    if (!it.record) return;
    if (!o.no_filter) {
      const FilterOutcome f = filter_outcome(*it.record, FilterPolicy{});
      if (f != FilterOutcome::Accepted) {
        it.reason = to_string(f);
        return;
      }
    }
    try {
      p[i] = model.forward(it.record->ddm, bound, {})->value.item();
    } catch (const DomainError& e) {
      it.reason = std::string("invalid_ddm: ") + e.what();
    } catch (const NumericalError& e) {
      it.reason = std::string("numerical: ") + e.what();
    }
  });

  auto clean = [](std::string s) {
    std::replace_if(s.begin(), s.end(), [](char c) { return c == ',' || c == '\n' || c == '\r' || c == '"'; }, ' ');
    return s;
  };
  std::ostringstream rows, skips;
  rows << predictions_csv_header();
  skips << "id,reason\n";
  InferOutcome out;
  out.input = items.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (!it.reason.empty()) {
      skips << clean(it.id) << ',' << clean(it.reason) << '\n';
      ++out.skipped;
      continue;
    }
    const auto& r = *it.record;
    if (r.id.find_first_of(",\n\r\"") != std::string::npos) {
      skips << clean(r.id) << ",unsupported_id\n";
      ++out.skipped;
      continue;
    }
    rows << r.id << ',' << shortest(r.lat) << ',' << shortest(r.lon) << ',' << format_rfc3339(r.time) << ','
         << shortest(p[i]) << ',' << model.classify(p[i]) << '\n';
    ++out.written;
  }
  if (!o.out.parent_path().empty()) ensure_dir(o.out.parent_path());
  write_text(o.out, rows.str());
  write_text(o.skip_log(), skips.str());
  write_json(o.config_path(), o.resolved());
  log << "infer: " << out.written << " predictions, " << out.skipped << " skipped (" << o.skip_log().string()
      << ")\n";
  return out;
}

inline std::vector<PredictionSample> read_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line + "\n" != predictions_csv_header())
    throw DataError(path.string() + ": expected header " + predictions_csv_header());
  std::vector<PredictionSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw DataError(where + ": expected 6 fields");
    PredictionSample s;
    s.id = f[0];
    s.lat = parse_double(f[1], where);
    s.lon = parse_double(f[2], where);
    try {
      s.time = parse_rfc3339(f[3]);
    } catch (const std::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    s.p = parse_double(f[4], where);
    if (f[5] != "0" && f[5] != "1") throw DataError(where + ": class must be 0 or 1");
    s.cls = f[5] == "1" ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// eval

struct NamedBox {
  std::string name;
  BoundingBox box;
};

/// "lat_min,lat_max,lon_min,lon_max" with an optional "name:" prefix.
inline NamedBox parse_bbox(const std::string& text) {
  NamedBox nb;
  std::string body = text;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    nb.name = text.substr(0, colon);
    body = text.substr(colon + 1);
  }
  const auto f = split(body, ',');
  if (f.size() != 4) throw ConfigError("bbox must be lat_min,lat_max,lon_min,lon_max: '" + text + "'");
  try {
    nb.box = {parse_double(f[0], "bbox"), parse_double(f[1], "bbox"), parse_double(f[2], "bbox"),
              parse_double(f[3], "bbox")};
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  nb.box.validate();
  if (nb.name.empty()) nb.name = body;
  return nb;
}

struct EvalOptions {
  fs::path pred;
  fs::path mask;
  fs::path out;
  std::vector<std::string> bbox;
  std::optional<std::string> from;
  std::optional<std::string> to;
  double cell_size_deg = 0.01;
  double threshold = 0.5;

  DateRange dates() const {
    DateRange d;
    try {
      if (from) d.from = parse_rfc3339(*from);
      if (to) d.to = parse_rfc3339(*to);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("date filter: ") + e.what());
    }
    if (d.from && d.to && !(*d.from < *d.to)) throw ConfigError("--from must be earlier than --to");
    return d;
  }

  nlohmann::ordered_json resolved() const {
    nlohmann::ordered_json j{{"command", "eval"},         {"pred", pred.string()}, {"mask", mask.string()},
                             {"out", out.string()},        {"bbox", bbox},          {"from", nullptr},
                             {"to", nullptr},              {"cell_size_deg", cell_size_deg},
                             {"threshold", threshold}};
    if (from) j["from"] = *from;
    if (to) j["to"] = *to;
    return j;
  }
};

struct RegionReport {
  std::string name;
  BoundingBox box;
  ConfusionCounts grid;
  ConfusionCounts points;
  DetectionRate detection;
};

struct EvalOutcome {
  GridAggregate aggregate;
  ConfusionCounts grid;
  ConfusionCounts points;
  std::vector<RegionReport> regions;
};

/// Grid over the mask's extent at the evaluation cell size.
inline GridGeometry eval_grid(const WaterMask& mask, double cell) {
  GridGeometry g;
  g.origin_lat = mask.geo.origin_lat;
  g.origin_lon = mask.geo.origin_lon;
  g.cell_size_deg = cell;
  g.rows = static_cast<std::size_t>(std::ceil((mask.geo.lat_max() - g.origin_lat) / cell - 1e-9));
  g.cols = static_cast<std::size_t>(std::ceil((mask.geo.lon_max() - g.origin_lon) / cell - 1e-9));
  g.validate();
  return g;
}

inline ConfusionCounts point_confusion(std::span<const PredictionSample> s, const WaterMask& mask) {
  ConfusionCounts c;
  for (const auto& x : s)
    if (const auto gt = mask.lookup(x.lat, x.lon)) c.add(x.cls, *gt);
  return c;
}

inline nlohmann::ordered_json optional_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) return nullptr;
  return metrics_json(metrics(c));
}

inline EvalOutcome run_eval(const EvalOptions& o, std::ostream& log) {
  if (!(o.cell_size_deg > 0)) throw ConfigError("cell_size_deg must be positive");
  if (!(o.threshold > 0 && o.threshold < 1)) throw ConfigError("threshold must be in (0,1)");
  const DateRange dates = o.dates();
  std::vector<NamedBox> boxes;
  for (const auto& b : o.bbox) boxes.push_back(parse_bbox(b));
  const WaterMask mask = read_mask(o.mask);
  const GridGeometry geo = eval_grid(mask, o.cell_size_deg);
  const auto all = read_predictions(o.pred);
  std::vector<PredictionSample> samples;
  for (const auto& s : all)
    if (dates.contains(s.time)) samples.push_back(s);

  EvalOutcome out;
  out.aggregate = grid_aggregate(samples, geo);
  add_ground_truth(out.aggregate, mask);
  out.grid = grid_confusion(out.aggregate, o.threshold);
  out.points = point_confusion(samples, mask);

  if (boxes.empty())
    boxes.push_back({"region", BoundingBox{geo.origin_lat, geo.lat_max(), geo.origin_lon, geo.lon_max()}});
  for (const auto& nb : boxes) {
    RegionReport rep;
    rep.name = nb.name;
    rep.box = nb.box;
    std::vector<PredictionSample> inside;
    for (const auto& s : samples)
      if (nb.box.contains(s.lat, s.lon)) inside.push_back(s);
    auto agg = grid_aggregate(inside, geo);
    add_ground_truth(agg, mask);
    rep.grid = grid_confusion(agg, o.threshold);
    rep.points = point_confusion(inside, mask);
    rep.detection = detection_rate(samples, nb.box);
    out.regions.push_back(std::move(rep));
  }

  ensure_dir(o.out);
  write_json(o.out / "config.json", o.resolved());
  {
    std::ostringstream csv;
    csv << "lat_min,lon_min,n,mean_p,pred,gt,agree\n";
    for (const auto& [key, cell] : out.aggregate.cells) {
      const auto mp = cell.mean_p();
      if (!mp) continue;
      const int pred = *mp >= o.threshold ? 1 : 0;
      csv << shortest(geo.origin_lat + static_cast<double>(key.first) * geo.cell_size_deg) << ','
          << shortest(geo.origin_lon + static_cast<double>(key.second) * geo.cell_size_deg) << ',' << cell.n << ','
          << shortest(*mp) << ',' << pred << ',';
      if (const auto g = cell.gt_mean()) {
        const int gt = *g >= o.threshold ? 1 : 0;
        csv << gt << ',' << (gt == pred ? 1 : 0);
      } else {
        csv << ',';
      }
      csv << '\n';
    }
    write_text(o.out / "grid.csv", csv.str());
  }
  {
    nlohmann::ordered_json m;
    m["samples"] = {{"input", all.size()},
                    {"in_dates", samples.size()},
                    {"binned", out.aggregate.binned},
                    {"skipped", out.aggregate.skipped}};
    m["grid"] = {{"counts", counts_json(out.grid)}, {"metrics", optional_metrics(out.grid)}};
    m["points"] = {{"counts", counts_json(out.points)}, {"metrics", optional_metrics(out.points)}};
    auto regions = nlohmann::ordered_json::array();
    for (const auto& r : out.regions)
      regions.push_back({{"name", r.name},
                         {"bbox", {r.box.lat_min, r.box.lat_max, r.box.lon_min, r.box.lon_max}},
                         {"grid", {{"counts", counts_json(r.grid)}, {"metrics", optional_metrics(r.grid)}}},
                         {"points", {{"counts", counts_json(r.points)}, {"metrics", optional_metrics(r.points)}}}});
    m["subregions"] = std::move(regions);
    write_json(o.out / "metrics.json", m);
  }
  {
    auto d = nlohmann::ordered_json::array();
    for (const auto& r : out.regions)
      d.push_back({{"name", r.name},
                   {"bbox", {r.box.lat_min, r.box.lat_max, r.box.lon_min, r.box.lon_max}},
                   {"from", o.from ? nlohmann::ordered_json(*o.from) : nlohmann::ordered_json()},
                   {"to", o.to ? nlohmann::ordered_json(*o.to) : nlohmann::ordered_json()},
                   {"detected", r.detection.detected},
                   {"total", r.detection.total},
                   {"rate", r.detection.rate ? nlohmann::ordered_json(*r.detection.rate) : nlohmann::ordered_json()}});
    write_json(o.out / "detection.json", d);
  }
  {
    std::vector<std::uint8_t> gray(geo.rows * geo.cols, 0);
    for (const auto& [key, cell] : out.aggregate.cells)
      if (const auto mp = cell.mean_p(); mp && *mp >= o.threshold)
        gray[static_cast<std::size_t>(key.first) * geo.cols + static_cast<std::size_t>(key.second)] = 255;
    write_pgm(o.out / "map.pgm", geo, gray);
  }
  log << "eval: " << samples.size() << " samples, " << out.grid.total() << " scored cells";
  if (out.grid.total()) {
    const Metrics gm = metrics(out.grid);
    log << ", grid kappa " << format_optional(gm.kappa) << ", grid F1 " << format_optional(gm.f1);
  }
  log << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  fs::path ckpt;
  std::size_t n = 1000;
  std::size_t warmup = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // parallel pass; 0 = all hardware threads
  std::optional<fs::path> out;

  nlohmann::ordered_json resolved() const {
    return {{"command", "bench"}, {"ckpt", ckpt.string()}, {"n", n},           {"warmup", warmup},
            {"seed", seed},       {"threads", threads},    {"out", out ? out->string() : ""}};
  }
};

inline constexpr double kReferenceLatencyMs = 6.0;

struct LatencyStats {
  double mean_ms = 0, median_ms = 0, p95_ms = 0;
};

inline LatencyStats latency_stats(std::vector<double> ms) {
  if (ms.empty()) throw DomainError("latency_stats: no samples");
  std::sort(ms.begin(), ms.end());
  LatencyStats s;
  for (double v : ms) s.mean_ms += v;
  s.mean_ms /= static_cast<double>(ms.size());
  const std::size_t n = ms.size();
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  s.p95_ms = ms[std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1)];
  return s;
}

inline std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(line.find_first_not_of(' ', colon + 1));
    }
  return "unknown";
}

inline nlohmann::ordered_json environment_fingerprint() {
  nlohmann::ordered_json j;
#if defined(__clang__)
  j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = std::string("gcc ") + __VERSION__;
#else
  j["compiler"] = "unknown";
#endif
#ifdef NDEBUG
  j["build"] = "release";
#else
  j["build"] = "debug";
#endif
  j["cpu"] = cpu_model();
  j["hardware_threads"] = std::thread::hardware_concurrency();
  return j;
}

struct BenchOutcome {
  LatencyStats single;
  LatencyStats parallel;
  double parallel_throughput_per_s = 0;
  std::size_t parallel_threads = 0;
};

inline BenchOutcome run_bench(const BenchOptions& o, std::ostream& log) {
  if (o.n == 0) throw ConfigError("--n must be positive");
  const IwdModel model = load_checkpoint(o.ckpt);
  std::vector<DdmRecord> records;
  const datagen::DdmSynthParams params;
  for (std::size_t i = 0; i < o.n; ++i) {
    std::mt19937_64 rng(mix_seed(o.seed, i));
    records.push_back(datagen::synth_ddm(static_cast<int>(i % 2), params, rng).record);
  }
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t) { return std::chrono::duration<double, std::milli>(clock::now() - t).count(); };
  double sink = 0;
  for (std::size_t i = 0; i < std::min(o.warmup, o.n); ++i) sink += model.predict(records[i]);

  BenchOutcome out;
  std::vector<double> single(o.n);
  for (std::size_t i = 0; i < o.n; ++i) {
    const auto t = clock::now();
    sink += model.predict(records[i]);
    single[i] = ms_since(t);
  }
  out.single = latency_stats(single);

  out.parallel_threads = o.threads ? o.threads : default_threads();
  std::vector<double> par(o.n);
  std::vector<double> ps(o.n);
  const auto wall = clock::now();
  parallel_for(o.n, out.parallel_threads, [&](std::size_t i) {
    const auto t = clock::now();
    ps[i] = model.predict(records[i]);
    par[i] = ms_since(t);
  });
  const double wall_ms = ms_since(wall);
  for (double v : ps) sink += v;
  out.parallel = latency_stats(par);
  out.parallel_throughput_per_s = 1000.0 * static_cast<double>(o.n) / wall_ms;

  const auto env = environment_fingerprint();
  const double ratio = out.single.median_ms / kReferenceLatencyMs;
  char line[256];
  log << "bench: " << o.n << " single-record forwards, model " << to_string(model.config().kind)
      << (model.config().use_se ? "" : " (no SE)") << "\n";
  std::snprintf(line, sizeof line, "single-thread  mean %.4f ms  median %.4f ms  p95 %.4f ms\n", out.single.mean_ms,
                out.single.median_ms, out.single.p95_ms);
  log << line;
  std::snprintf(line, sizeof line,
                "%zu threads     mean %.4f ms  median %.4f ms  p95 %.4f ms  throughput %.1f DDM/s\n",
                out.parallel_threads, out.parallel.mean_ms, out.parallel.median_ms, out.parallel.p95_ms,
                out.parallel_throughput_per_s);
  log << line;
  std::snprintf(line, sizeof line, "reference 6 ms per DDM: single-thread median is %.3fx the reference (%s)\n", ratio,
                ratio <= 1.0 ? "faster" : "slower");
  log << line;
  log << "environment: " << env.dump() << "\n";
  if (sink == -1.0) log << "";  // keeps the predictions observable

  if (o.out) {
    nlohmann::ordered_json j;
    j["config"] = o.resolved();
    j["single_thread"] = {{"mean_ms", out.single.mean_ms}, {"median_ms", out.single.median_ms},
                          {"p95_ms", out.single.p95_ms}};
    j["parallel"] = {{"threads", out.parallel_threads},        {"mean_ms", out.parallel.mean_ms},
                     {"median_ms", out.parallel.median_ms},     {"p95_ms", out.parallel.p95_ms},
                     {"throughput_per_s", out.parallel_throughput_per_s}};
    j["reference_ms"] = kReferenceLatencyMs;
    j["median_over_reference"] = ratio;
    j["environment"] = env;
    if (!o.out->parent_path().empty()) ensure_dir(o.out->parent_path());
    write_json(*o.out, j);
  }
  return out;
}

}  // namespace iwd::cli

// Acceptance suite. `acceptance <criterion>` runs one criterion and prints a
// single PASS/FAIL line; `acceptance all` runs every criterion in turn.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iwd/checkpoint.hpp"
#include "iwd/commands.hpp"
#include "iwd/qsim.hpp"
#include "oracles.hpp"
#include "qsim_oracle.hpp"
#include "test_support.hpp"

using namespace iwd;
namespace fs = std::filesystem;
using iwd::testing::rel_err;

namespace {

// Pinned tolerances and budgets.
constexpr double kGateTol = 1e-12;
constexpr double kGateBudgetS = 1.0;
constexpr double kHeadTol = 1e-12;
constexpr double kDenseTol = 1e-10;
constexpr double kQuantumGradTol = 1e-6;
constexpr double kModelGradTol = 1e-4;
constexpr double kGradBudgetS = 120.0;
constexpr double kLossTol = 1e-12;
constexpr double kMetricTol = 1e-12;
constexpr double kE2eKappa = 0.8;
constexpr double kE2eF1 = 0.9;
constexpr double kE2eMargin = 0.02;
constexpr std::size_t kE2eEpochs = 30;
constexpr std::size_t kE2eMinTrain = 5000;
constexpr std::size_t kE2eMinVal = 1000;
constexpr double kE2eBudgetS = 30 * 60.0;
constexpr std::size_t kAblationSeeds = 5;
constexpr std::size_t kAblationEpochs = 10;
constexpr double kLatencyMs = 10.0;

constexpr double kPi = std::numbers::pi;

struct Result {
  bool pass = false;
  std::string detail;
};

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t) {
  return std::chrono::duration<double>(clock_type::now() - t).count();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

fs::path work_dir(const std::string& name) {
  const fs::path d = fs::current_path() / "acceptance_out" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------

qsim::QuantumHeadParams random_angles(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-kPi, kPi);
  qsim::QuantumHeadParams p;
  for (auto& a : p.angles) a = u(rng);
  return p;
}

std::array<double, 4> random_x(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-kPi, kPi);
  return {u(rng), u(rng), u(rng), u(rng)};
}

// Columns of the 16x16 matrix realised by `apply` on the simulator.
oracle::Mat simulated_matrix(const std::function<void(qsim::StateVector&)>& apply) {
  oracle::Mat m(qsim::kDim, std::vector<oracle::C>(qsim::kDim));
  for (std::size_t j = 0; j < qsim::kDim; ++j) {
    auto s = qsim::StateVector::basis(j);
    apply(s);
    for (std::size_t i = 0; i < qsim::kDim; ++i) m[i][j] = s.amplitude(i);
  }
  return m;
}

double max_abs_diff(const oracle::Mat& a, const oracle::Mat& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  return worst;
}

Result gate_correctness() {
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-2 * kPi, 2 * kPi);
  double closed = 0, unitary = 0;
  for (int t = 0; t < 1000; ++t) {
    const double th = u(rng);
    const std::size_t a = rng() % 4;
    std::size_t b = rng() % 4;
    if (b == a) b = (a + 1) % 4;
    oracle::Mat sim, ref;
    switch (t % 4) {
      case 0:
        sim = simulated_matrix([&](qsim::StateVector& s) { qsim::apply_rx(s, a, th); });
        ref = oracle::on_qubit(oracle::rx(th), a);
        break;
      case 1:
        sim = simulated_matrix([&](qsim::StateVector& s) { qsim::apply_ry(s, a, th); });
        ref = oracle::on_qubit(oracle::ry(th), a);
        break;
      case 2:
        sim = simulated_matrix([&](qsim::StateVector& s) { qsim::apply_xx(s, a, b, th); });
        ref = oracle::xx(th, a, b);
        break;
      default:
        sim = simulated_matrix([&](qsim::StateVector& s) { qsim::apply_crx(s, a, b, th); });
        ref = oracle::crx(th, a, b);
        break;
    }
    closed = std::max(closed, max_abs_diff(sim, ref));
    unitary = std::max(unitary, oracle::max_deviation_from_identity(sim));
  }
  // Zero-angle circuits, with and without SE, are exact identities.
  bool identity = true;
  const qsim::QuantumHeadParams zero;
  for (bool se : {true, false})
    for (auto pairing : {qsim::XxPairing::Adjacent, qsim::XxPairing::Interleaved}) {
      const qsim::CircuitOptions opt{se, pairing};
      const auto m = simulated_matrix([&](qsim::StateVector& s) {
        s = qsim::run_fe(s, zero, pairing);
        if (opt.use_se) s = qsim::run_se(s, zero);
      });
      identity = identity && max_abs_diff(m, oracle::identity(qsim::kDim)) == 0.0;
    }
  const double secs = seconds_since(t0);
  Result r;
  r.pass = closed <= kGateTol && unitary <= kGateTol && identity && secs < kGateBudgetS;
  r.detail = "closed-form dev " + fmt(closed) + ", |U^dag U - I| " + fmt(unitary) + " over 1000 gates, zero-angle " +
             (identity ? "exact" : "NOT exact") + ", " + fmt(secs, 3) + " s";
  return r;
}

Result analytic_head() {
  std::mt19937_64 rng(102);
  const qsim::QuantumHeadParams zero;
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto x = random_x(rng);
    const auto o = qsim::run_head(x, zero);
    worst = std::max({worst, std::abs(o[0] - std::cos(x[0])), std::abs(o[1] - std::cos(x[2]))});
  }
  return {worst <= kHeadTol, "max |head - (cos x0, cos x2)| = " + fmt(worst) + " over 1000 inputs"};
}

Result dense_matrix() {
  std::mt19937_64 rng(103);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto p = random_angles(rng);
    const auto x = random_x(rng);
    std::array<double, 28> a;
    std::copy(p.angles.begin(), p.angles.end(), a.begin());
    for (bool se : {true, false}) {
      const auto want = oracle::head_expectations(oracle::head_unitary(x, a, se));
      const auto got = qsim::run_head(x, p, {se, qsim::XxPairing::Adjacent});
      worst = std::max({worst, std::abs(got[0] - want[0]), std::abs(got[1] - want[1])});
    }
  }
  return {worst <= kDenseTol, "max deviation from the 16x16 matrix chain = " + fmt(worst) + " over 100 draws"};
}

// Non-zero biases so every parameter moves the output.
void perturb(ParameterSet& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.2);
  for (auto& [name, t] : p)
    for (auto& v : t.vec()) v += n(rng);
}

Result gradient_triple() {
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> uu(-2, 2);

  double quantum = 0;
  for (int t = 0; t < 50; ++t) {
    const auto p = random_angles(rng);
    const auto x = random_x(rng);
    const double up[2] = {uu(rng), uu(rng)};
    const qsim::CircuitOptions opt{true, qsim::XxPairing::Adjacent};
    const auto adj = qsim::head_gradient(x, p, up, opt);
    const auto ps = qsim::parameter_shift_gradient(x, p, up, opt);
    auto f = [&](const qsim::QuantumHeadParams& q) {
      const auto o = qsim::run_head(x, q, opt);
      return up[0] * o[0] + up[1] * o[1];
    };
    constexpr double h = 1e-5;
    for (std::size_t k = 0; k < qsim::kAnglesPerHead; ++k) {
      auto a = p, b = p;
      a.angles[k] += h;
      b.angles[k] -= h;
      const double fd = (f(a) - f(b)) / (2 * h);
      quantum = std::max({quantum, rel_err(adj.params[k], ps.params[k]), rel_err(adj.params[k], fd),
                          rel_err(ps.params[k], fd)});
    }
  }

  // Full model: 25 random entries of every parameter group.
  std::map<std::string, double> group_err;
  for (auto kind : {ModelKind::Queen, ModelKind::Transformer}) {
    ModelConfig cfg;
    cfg.kind = kind;
    auto m = IwdModel::create(cfg, 105);
    perturb(m.params(), 106);
    DdmRecord rec;
    rec.id = "grad";
    std::uniform_real_distribution<double> pw(0.05, 1.0);
    for (std::size_t d = 0; d < kDelayBins; ++d)
      for (std::size_t f = 0; f < kDopplerBins; ++f) rec.ddm.set(d, f, pw(rng));
    const dat::Bound b(m.params(), true);
    ad::backward(m.forward(rec.ddm, b, {}));
    const auto grads = b.gradients();

    std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> entries;
    for (auto& [name, t] : m.params())
      for (std::size_t i = 0; i < t.size(); ++i) entries[name.substr(0, name.find('.'))].push_back({name, i});
    for (auto& [group, list] : entries) {
      std::shuffle(list.begin(), list.end(), rng);
      double& worst = group_err[group];
      for (std::size_t k = 0; k < std::min<std::size_t>(25, list.size()); ++k) {
        const auto& [name, i] = list[k];
        auto eval = [&] { return m.predict(rec); };
        const double fd = iwd::testing::central_difference(m.params()[name].vec(), i, eval);
        worst = std::max(worst, rel_err(grads.at(name)[i], fd));
      }
    }
  }
  const double secs = seconds_since(t0);
  bool ok = quantum <= kQuantumGradTol && secs < kGradBudgetS;
  std::string detail = "quantum adjoint/shift/FD worst " + fmt(quantum);
  for (const auto& [g, e] : group_err) {
    ok = ok && e <= kModelGradTol;
    detail += ", " + g + " " + fmt(e);
  }
  if (group_err.size() != 4) ok = false;
  detail += ", " + fmt(secs, 3) + " s";
  return {ok, detail};
}

Result loss_oracles() {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> u(0, 1);
  double bce = 0, kap = 0;
  bool skip_agrees = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t b = 2 + rng() % 100;
    std::vector<double> p(b);
    std::vector<int> y(b);
    for (std::size_t i = 0; i < b; ++i) {
      p[i] = u(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    if (t % 10 == 0) p[0] = 0.0;  // exercise the clamp
    bce = std::max(bce, rel_err(bce_loss(p, y).value.value(), oracle::bce_direct(p, y), 1.0));
    const auto got = kappa_loss(p, y).value;
    const auto want = oracle::kappa_printed_direct(p, y);
    skip_agrees = skip_agrees && got.has_value() == want.has_value();
    if (got && want) kap = std::max(kap, rel_err(*got, *want, 1.0));
  }
  // All-zero batches skip; any non-zero entry does not.
  bool skips_exact = true;
  for (std::size_t b = 1; b <= 64; ++b) {
    const std::vector<double> zp(b, 0.0);
    const std::vector<int> zy(b, 0);
    skips_exact = skips_exact && !kappa_loss(zp, zy).value;
    if (b >= 2) {
      auto p1 = zp;
      p1[b - 1] = 0.25;
      auto y1 = zy;
      y1[0] = 1;
      skips_exact = skips_exact && kappa_loss(p1, zy).value && kappa_loss(zp, y1).value;
    }
  }
  Result r;
  r.pass = bce <= kLossTol && kap <= kLossTol && skip_agrees && skips_exact;
  r.detail = "BCE dev " + fmt(bce) + ", kappa-loss dev " + fmt(kap) + " over 1000 batches, degenerate skip " +
             (skips_exact && skip_agrees ? "exact" : "WRONG");
  return r;
}

Result metric_oracle() {
  std::mt19937_64 rng(108);
  double worst = 0;
  bool defined_agrees = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 2000;
    const double bias = std::uniform_real_distribution<double>(0, 1)(rng);
    std::bernoulli_distribution b(bias);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = b(rng);
      pred[i] = (rng() % 4 == 0) ? 1 - truth[i] : truth[i];
    }
    const auto m = metrics(ConfusionCounts::from(pred, truth));
    const auto o = oracle::metrics_by_recount(pred, truth);
    auto cmp = [&](const std::optional<double>& a, const std::optional<double>& c) {
      defined_agrees = defined_agrees && a.has_value() == c.has_value();
      if (a && c) worst = std::max(worst, std::abs(*a - *c));
    };
    cmp(m.recall, o.recall);
    cmp(m.precision, o.precision);
    cmp(m.f1, o.f1);
    cmp(m.oa, o.oa);
    cmp(m.kappa, o.kappa);
  }
  // tp=3, fp=1, fn=2, tn=94: po = 0.97, pe = 0.04*0.05 + 0.96*0.95 = 0.914.
  ConfusionCounts c;
  c.tp = 3;
  c.fp = 1;
  c.fn = 2;
  c.tn = 94;
  const double hand = (0.97 - 0.914) / (1 - 0.914);
  const double k = *metrics(c).kappa;
  const bool worked = std::abs(k - hand) <= 1e-12 && std::round(k * 1e4) / 1e4 == 0.6512;
  Result r;
  r.pass = worst <= kMetricTol && defined_agrees && worked;
  r.detail = "recount dev " + fmt(worst) + " over 1000 vectors, worked example kappa " + fmt(k, 6) +
             " (hand " + fmt(hand, 6) + ")";
  return r;
}

Result otsu_oracle() {
  std::mt19937_64 rng(109);
  std::uniform_int_distribution<int> len(2, 64);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t agree = 0, degenerate = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (auto& x : v) x = (t % 5 == 0) ? std::round(u(rng) * 4) / 4 : u(rng);
    const auto want = oracle::otsu_exhaustive(v);
    if (want.best_variance < 0) {
      try {
        otsu(v);
      } catch (const DomainError&) {
        ++agree;
        ++degenerate;
      }
      continue;
    }
    const auto got = otsu(v);
    if (got.last_low_bin == want.best_k &&
        std::abs(got.between_class_variance - want.best_variance) <= 1e-9 * want.best_variance)
      ++agree;
  }
  return {agree == 500, std::to_string(agree) + "/500 inputs match the exhaustive search (" +
                            std::to_string(degenerate) + " constant inputs rejected by both)"};
}

// ---------------------------------------------------------------------------

cli::TrainOutcome train_on(const fs::path& data, const fs::path& out, ModelKind kind, bool no_se, std::size_t epochs,
                           std::uint64_t seed) {
  cli::TrainOptions t;
  t.data = data;
  t.out = out;
  t.model = kind;
  t.no_se = no_se;
  t.train.epochs = epochs;
  t.train.seed = seed;
  std::ostringstream log;
  return cli::run_train(t, log);
}

fs::path generate(const std::string& scene, const fs::path& dir) {
  cli::GenOptions g;
  g.scene = fs::path(IWD_SOURCE_DIR) / "scenes" / scene;
  g.out = dir / "data";
  std::ostringstream log;
  cli::run_gen(g, log);
  return g.out;
}

Result synthetic_end_to_end() {
  const auto t0 = clock_type::now();
  const fs::path dir = work_dir("synthetic_end_to_end");
  const fs::path data = generate("default.json", dir);
  const auto q = train_on(data, dir / "queen", ModelKind::Queen, false, kE2eEpochs, 1);
  const auto t = train_on(data, dir / "transformer", ModelKind::Transformer, false, kE2eEpochs, 1);
  const double secs = seconds_since(t0);
  const Metrics& qm = q.epochs.back().val;
  const Metrics& tm = t.epochs.back().val;
  const double qk = qm.kappa.value_or(-1), qf = qm.f1.value_or(-1), tk = tm.kappa.value_or(-1);
  Result r;
  r.pass = q.train_records >= kE2eMinTrain && q.val_records >= kE2eMinVal && qk >= kE2eKappa && qf >= kE2eF1 &&
           qk >= tk - kE2eMargin && secs < kE2eBudgetS;
  r.detail = std::to_string(q.train_records) + " train / " + std::to_string(q.val_records) + " val, " +
             std::to_string(kE2eEpochs) + " epochs: QUEEN val kappa " + fmt(qk) + " F1 " + fmt(qf) +
             ", Transformer val kappa " + fmt(tk) + " F1 " + fmt(tm.f1.value_or(-1)) + ", " + fmt(secs, 4) + " s";
  return r;
}

Result ablation_direction() {
  const fs::path dir = work_dir("ablation_direction");
  const fs::path data = generate("hard.json", dir);
  double with = 0, without = 0;
  std::string per_seed;
  std::size_t train_n = 0, val_n = 0;
  for (std::uint64_t seed = 1; seed <= kAblationSeeds; ++seed) {
    const auto a = train_on(data, dir / ("se_" + std::to_string(seed)), ModelKind::Queen, false, kAblationEpochs, seed);
    const auto b = train_on(data, dir / ("nose_" + std::to_string(seed)), ModelKind::Queen, true, kAblationEpochs, seed);
    const double ka = a.epochs.back().val.kappa.value_or(0), kb = b.epochs.back().val.kappa.value_or(0);
    with += ka;
    without += kb;
    per_seed += (seed > 1 ? "; " : "") + std::to_string(seed) + ": " + fmt(ka, 3) + " vs " + fmt(kb, 3);
    train_n = a.train_records;
    val_n = a.val_records;
    std::cerr << "ablation seed " << seed << ": SE " << fmt(ka) << ", no SE " << fmt(kb) << "\n";
  }
  with /= kAblationSeeds;
  without /= kAblationSeeds;
  Result r;
  r.pass = with >= without;
  r.detail = "hard scene (" + std::to_string(train_n) + " train / " + std::to_string(val_n) + " val, " +
             std::to_string(kAblationEpochs) + " epochs): mean val kappa SE " + fmt(with) + " vs no-SE " +
             fmt(without) + " (gap " + fmt(with - without, 3) + "; per seed " + per_seed + ")";
  return r;
}

Result latency() {
  const fs::path dir = work_dir("latency");
  const auto model = IwdModel::create(ModelConfig{}, 7);
  save_checkpoint(dir / "model.json", model);
  cli::BenchOptions b;
  b.ckpt = dir / "model.json";
  b.n = 1000;
  b.out = dir / "bench.json";
  std::ostringstream log;
  const auto out = cli::run_bench(b, log);
  std::cout << log.str();
  const bool printed = log.str().find("reference 6 ms per DDM") != std::string::npos;
  return {out.single.median_ms <= kLatencyMs && printed,
          "single-thread median " + fmt(out.single.median_ms) + " ms (limit " + fmt(kLatencyMs) + " ms, reference " +
              fmt(cli::kReferenceLatencyMs) + " ms, ratio " + fmt(out.single.median_ms / cli::kReferenceLatencyMs, 3) +
              ")"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IWD_CLI_PATH) + " " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Result determinism() {
  const fs::path dir = work_dir("determinism");
  auto scene = datagen::load_scene(fs::path(IWD_SOURCE_DIR) / "scenes" / "default.json");
  scene.tracks.count = 40;
  write_text(dir / "scene.json", datagen::scene_to_json(scene).dump(2));
  const std::vector<fs::path> artifacts{"data/ddm.jsonl", "data/manifest.json", "data/mask.pgm",
                                        "run/model.json", "run/metrics.csv",    "pred.csv"};
  for (const char* run : {"a", "b"}) {
    const fs::path r = dir / run;
    const std::string threads = std::string(run) == "a" ? "0" : "1";
    const std::string q = "'";
    if (run_cli("gen --scene " + q + (dir / "scene.json").string() + q + " --out " + q + (r / "data").string() + q +
                " --threads " + threads) != 0 ||
        run_cli("train --data " + q + (r / "data").string() + q + " --out " + q + (r / "run").string() + q +
                " --epochs 2 --seed 11 --threads " + threads) != 0 ||
        run_cli("infer --ckpt " + q + (r / "run" / "model.json").string() + q + " --data " + q +
                (r / "data").string() + q + " --out " + q + (r / "pred.csv").string() + q + " --threads " +
                threads) != 0)
      return {false, "a CLI stage failed in run " + std::string(run)};
  }
  std::string differing;
  for (const auto& a : artifacts)
    if (read_text(dir / "a" / a) != read_text(dir / "b" / a)) differing += " " + a.string();
  return {differing.empty(), differing.empty()
                                 ? "gen/train/infer twice (threads all vs 1): " + std::to_string(artifacts.size()) +
                                       " artifacts byte-identical"
                                 : "differing:" + differing};
}

const std::vector<std::pair<std::string, std::function<Result()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Result()>>> c{
      {"gate_correctness", gate_correctness},
      {"analytic_head", analytic_head},
      {"dense_matrix", dense_matrix},
      {"gradient_triple", gradient_triple},
      {"loss_oracles", loss_oracles},
      {"metric_oracle", metric_oracle},
      {"otsu_oracle", otsu_oracle},
      {"synthetic_end_to_end", synthetic_end_to_end},
      {"ablation_direction", ablation_direction},
      {"latency", latency},
      {"determinism", determinism},
  };
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <criterion|all>\n";
    return 2;
  }
  const std::string want = argv[1];
  bool found = false, all_pass = true;
  for (const auto& [name, run] : criteria()) {
    if (want != "all" && want != name) continue;
    found = true;
    Result r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << std::endl;
    all_pass = all_pass && r.pass;
  }
  if (!found) {
    std::cerr << "unknown criterion '" << want << "'\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}

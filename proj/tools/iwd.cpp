// iwd: dataset generation, training, inference, evaluation and latency
// benchmarking for the DDM water classifiers.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iwd/commands.hpp"

namespace {

using namespace iwd;

// Config files hold `key = value` lines named after the subcommand's long
// options. They are spliced in ahead of the command line, so flags given on
// the command line win.
std::map<CLI::App*, std::string> config_paths;

void add_config(CLI::App* sub) {
  sub->add_option("--config", config_paths[sub], "key = value config file; command-line flags take precedence");
}

std::vector<std::string> config_args(CLI::App* sub) {
  const std::string& path = config_paths[sub];
  std::vector<std::string> out;
  if (path.empty()) return out;
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    if (!item.parents.empty() || key == "config" || key == "help" || sub->get_option_no_throw("--" + key) == nullptr)
      throw ConfigError("unknown key '" + key + "' in " + path);
    for (const auto& v : item.inputs) out.push_back("--" + key + "=" + v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inland water detection from GNSS-R delay-Doppler maps"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // gen
  cli::GenOptions gen;
  std::uint64_t gen_seed = 0;
  auto* g = app.add_subcommand("gen", "Synthesize a scene: water mask, tracks and labelled DDM records");
  add_config(g);
  g->add_option("--scene", gen.scene, "Scene JSON")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  auto* gen_seed_opt = g->add_option("--seed", gen_seed, "Override the scene seed");
  g->add_option("--threads", gen.threads, "Worker threads (0 = all)");

  // train
  cli::TrainOptions tr;
  std::string model_kind = "queen", kappa_form = "printed", pairing = "adjacent";
  std::uint64_t init_seed = 0;
  auto* t = app.add_subcommand("train", "Train IWD-QUEEN or IWD-Transformer on a generated dataset");
  add_config(t);
  t->add_option("--data", tr.data, "Dataset directory or JSONL file")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--model", model_kind, "queen | transformer")->check(CLI::IsMember({"queen", "transformer"}));
  t->add_flag("--no-se", tr.no_se, "Drop the SE (controlled-RX) stage from every quantum head");
  t->add_option("--epochs", tr.train.epochs);
  t->add_option("--batch-size", tr.train.batch_size);
  t->add_option("--lr", tr.train.lr);
  t->add_option("--seed", tr.train.seed, "Shuffling and dropout seed");
  auto* init_seed_opt = t->add_option("--init-seed", init_seed, "Parameter initialization seed (default: --seed)");
  t->add_option("--bce-weight", tr.train.bce_weight);
  t->add_option("--kappa-weight", tr.train.kappa_weight);
  t->add_option("--kappa-form", kappa_form, "printed | cohen")->check(CLI::IsMember({"printed", "cohen"}));
  t->add_option("--clamp-eps", tr.train.clamp_eps);
  t->add_option("--train-percent", tr.train_percent, "Share of record-id hashes assigned to training");
  t->add_option("--dat-heads", tr.dat_heads, "Attention heads in the DDM-aware transformer");
  t->add_option("--xx-pairing", pairing, "adjacent | interleaved")->check(CLI::IsMember({"adjacent", "interleaved"}));
  t->add_option("--threads", tr.train.threads, "Worker threads (0 = all); results do not depend on it");

  // infer
  cli::InferOptions inf;
  auto* i = app.add_subcommand("infer", "Predict water probability for every record of a JSONL file");
  add_config(i);
  i->add_option("--ckpt", inf.ckpt, "Model checkpoint JSON")->required();
  i->add_option("--data", inf.data, "Dataset directory or JSONL file")->required();
  i->add_option("--out", inf.out, "Prediction CSV")->required();
  i->add_flag("--no-filter", inf.no_filter, "Score records that fail the quality filter");
  i->add_option("--threads", inf.threads);

  // eval
  cli::EvalOptions ev;
  std::string from, to;
  auto* e = app.add_subcommand("eval", "Grid-level metrics, detection rates and a prediction map");
  add_config(e);
  e->add_option("--pred", ev.pred, "Prediction CSV from infer")->required();
  e->add_option("--mask", ev.mask, "Ground-truth mask PGM (with .json sidecar)")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--bbox", ev.bbox, "[name:]lat_min,lat_max,lon_min,lon_max (repeatable)");
  auto* from_opt = e->add_option("--from", from, "Inclusive start time (RFC 3339)");
  auto* to_opt = e->add_option("--to", to, "Exclusive end time (RFC 3339)");
  e->add_option("--cell-size", ev.cell_size_deg, "Grid cell size in degrees");
  e->add_option("--threshold", ev.threshold);

  // bench
  cli::BenchOptions be;
  std::string bench_out;
  auto* b = app.add_subcommand("bench", "Single-record forward latency");
  add_config(b);
  b->add_option("--ckpt", be.ckpt, "Model checkpoint JSON")->required();
  b->add_option("--n", be.n, "Number of timed forwards");
  b->add_option("--warmup", be.warmup);
  b->add_option("--seed", be.seed, "Seed for the synthetic benchmark DDMs");
  b->add_option("--threads", be.threads, "Threads for the parallel pass (0 = all)");
  auto* bench_out_opt = b->add_option("--out", bench_out, "Optional JSON report");

  try {
    app.parse(argc, argv);
    const std::vector<CLI::App*> selected = app.get_subcommands();
    for (auto* sub : selected) {
      auto extra = config_args(sub);
      if (extra.empty()) continue;
      std::vector<std::string> args{sub->get_name()};
      args.insert(args.end(), extra.begin(), extra.end());
      bool after_sub = false;
      for (int k = 1; k < argc; ++k) {
        if (after_sub) args.emplace_back(argv[k]);
        if (argv[k] == sub->get_name()) after_sub = true;
      }
      std::reverse(args.begin(), args.end());  // CLI11 takes reversed argument vectors
      app.parse(args);
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return cli::kConfig;
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return cli::kConfig;
  }

  try {
    if (*g) {
      if (*gen_seed_opt) gen.seed = gen_seed;
      cli::run_gen(gen, std::cout);
    } else if (*t) {
      tr.model = model_kind_from_string(model_kind);
      tr.train.kappa_form = kappa_form_from_string(kappa_form);
      tr.pairing = qsim::pairing_from_string(pairing);
      if (*init_seed_opt) tr.init_seed = init_seed;
      cli::run_train(tr, std::cout);
    } else if (*i) {
      cli::run_infer(inf, std::cout);
    } else if (*e) {
      if (*from_opt) ev.from = from;
      if (*to_opt) ev.to = to;
      cli::run_eval(ev, std::cout);
    } else if (*b) {
      if (*bench_out_opt) be.out = bench_out;
      cli::run_bench(be, std::cout);
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return cli::kConfig;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical error: " << ex.what() << "\n";
    return cli::kNumerical;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return cli::kData;
  } catch (const DomainError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return cli::kData;
  } catch (const ShapeError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return cli::kData;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return cli::kOk;
}

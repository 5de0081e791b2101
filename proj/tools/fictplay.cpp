// Experiment runner: training, attacks, evaluation and the matrix-game demo.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "fictplay/config.hpp"
#include "fictplay/game.hpp"

namespace fs = std::filesystem;
using namespace fictplay;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4 };

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> flags;  // key -> raw value
};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

void add_config_flags(CLI::App* cmd, Invocation& inv) {
  cmd->add_option("--config", inv.config_path, "key = value config file");
  for (const auto& key : config_keys())
    cmd->add_option_function<std::string>(
        "--" + dashed(key), [&inv, key](const std::string& v) { inv.flags[key] = v; }, "override '" + key + "'");
}

ExperimentConfig resolve(const Invocation& inv) {
  std::vector<std::pair<std::string, std::string>> flags(inv.flags.begin(), inv.flags.end());
  return load_config(inv.config_path, flags);
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void prepare_output(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output, ec);
  if (ec) throw IoError("cannot create '" + cfg.output + "': " + ec.message());
  std::ofstream echo(in_dir(cfg.output, "config.txt"), std::ios::binary);
  echo << echo_config(cfg);
  if (!echo) throw IoError("cannot write resolved config into '" + cfg.output + "'");
}

std::string numbered(const char* stem, int n, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d%s", stem, n, ext);
  return buf;
}

template <typename Scalar>
int run_train(const ExperimentConfig& cfg, const std::string& algorithm) {
  prepare_output(cfg);
  const auto splits = load_splits<Scalar>(cfg);
  const TrainConfig tc = cfg.train_config();
  const EvalConfig ec = cfg.eval_config();
  auto initial = build_model<Scalar>(cfg.model_config(), derive_seed(cfg.seed, stream::kInit));
  TrainHooks<Scalar> hooks;
  hooks.on_outer = [&](int n, const Params<Scalar>& params, const ClassifierPool<Scalar>*,
                       const PerturbationSpec<Scalar>* latest) {
    save_checkpoint(in_dir(cfg.output, numbered("ckpt", n, ".fplyckpt")), params, n);
    if (latest != nullptr) save_perturbation(in_dir(cfg.output, numbered("xi", n, ".fplypert")), *latest);
    auto rows = evaluate_splits(params, n, splits.all(), ec, derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(n)));
    for (const auto& r : rows) std::cout << format_metrics_row(r) << '\n';
    std::cout.flush();
    return rows;
  };
  std::cout << metrics_csv_header() << '\n';
  TrainResult<Scalar> result;
  if (algorithm == "fp")
    result = fp_train(splits.train, std::move(initial), tc,
                      cfg.fp_mode == "exact" ? FpMode::Exact : FpMode::Approximate, hooks);
  else if (algorithm == "at")
    result = at_train(splits.train, std::move(initial), tc, hooks);
  else
    result = sgd_train(splits.train, std::move(initial), tc, hooks);
  write_metrics_csv(in_dir(cfg.output, "metrics.csv"), result.report);
  return kOk;
}

template <typename Scalar>
int run_attack(const ExperimentConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("attack needs --checkpoint");
  prepare_output(cfg);
  const auto splits = load_splits<Scalar>(cfg);
  const auto ck = load_checkpoint<Scalar>(cfg.checkpoint);
  const EvalConfig ec = cfg.eval_config();
  Rng rng(derive_seed(cfg.seed, stream::kEval));
  const auto spec = craft_perturbation(ck.params, splits.train, ec.attack, rng);
  const std::string path = in_dir(cfg.output, std::string(kind_name(spec.kind())) + ".fplypert");
  save_perturbation(path, spec);
  const auto idx = sample_indices(splits.test.size(), ec.sample_size, derive_seed(cfg.seed, stream::kData));
  const std::span<const Index> s(idx);
  const std::uint64_t placement_seed = derive_seed(cfg.seed, stream::kPlacement);
  const double clean = view_accuracy(ck.params, PerturbedView<Scalar>(splits.test), s);
  const double adv = perturbed_accuracy(ck.params, splits.test, spec, s, placement_seed);
  std::printf("perturbation=%s\nclean_acc=%.6f\nadv_acc=%.6f\n", path.c_str(), clean, adv);
  if (cfg.target_class >= 0)
    std::printf("target_rate=%.6f\n",
                target_hit_rate(ck.params, splits.test, spec, s, static_cast<int>(cfg.target_class), placement_seed));
  return kOk;
}

template <typename Scalar>
int run_eval(const ExperimentConfig& cfg) {
  const std::string dir = cfg.input.empty() ? cfg.output : cfg.input;
  const auto splits = load_splits<Scalar>(cfg);
  const auto rows = evaluate_checkpoint_series<Scalar>(dir, splits.all(), cfg.eval_config(), cfg.seed);
  std::error_code ec;
  fs::create_directories(cfg.output, ec);
  write_metrics_csv(in_dir(cfg.output, "eval.csv"), rows);
  std::cout << metrics_csv(rows);
  return kOk;
}

int run_export(const ExperimentConfig& cfg) {
  if (cfg.input.empty()) throw ConfigError("export-ppm needs --input <perturbation file>");
  const auto spec = load_perturbation<double>(cfg.input);
  std::string out = cfg.output;
  if (fs::path(out).extension() != ".ppm") {
    std::error_code ec;
    fs::create_directories(out, ec);
    out = in_dir(out, fs::path(cfg.input).stem().string() + ".ppm");
  }
  write_ppm(out, spec);
  std::cout << out << '\n';
  return kOk;
}

int run_matrix(const ExperimentConfig& cfg) {
  const auto game = MatrixGame::builtin(cfg.game);
  const auto r = fp_matrix_game(game, cfg.iters);
  auto print = [](const char* who, const Eigen::VectorXd& v) {
    std::printf("%s:", who);
    for (Eigen::Index i = 0; i < v.size(); ++i) std::printf(" %.6f", v[i]);
    std::printf("\n");
  };
  print("row", r.row_strategy);
  print("col", r.col_strategy);
  std::printf("value: %.6f\nexploitability: %.6f\n", r.value, r.exploitability.back());
  return kOk;
}

template <typename Fn>
int dispatch_precision(const ExperimentConfig& cfg, Fn&& fn) {
  return cfg.precision == "double" ? fn(double{}) : fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fictitious-play training against universal perturbations and patches"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train-fp", "fictitious-play training"},
      {"train-at", "adversarial training with per-sample PGD"},
      {"train-sgd", "plain SGD"},
      {"attack", "craft a perturbation or patch against a checkpoint"},
      {"eval", "evaluate every checkpoint in a directory"},
      {"export-ppm", "convert a perturbation container to PPM"},
      {"matrix-demo", "fictitious play on a built-in matrix game"},
  };
  std::map<std::string, Invocation> invocations;
  for (const auto& [name, help] : commands) add_config_flags(app.add_subcommand(name, help), invocations[name]);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig cfg = resolve(invocations[name]);
    if (name == "train-fp" || name == "train-at" || name == "train-sgd") {
      const std::string algorithm = name.substr(6);
      return dispatch_precision(cfg, [&](auto s) { return run_train<decltype(s)>(cfg, algorithm); });
    }
    if (name == "attack") return dispatch_precision(cfg, [&](auto s) { return run_attack<decltype(s)>(cfg); });
    if (name == "eval") return dispatch_precision(cfg, [&](auto s) { return run_eval<decltype(s)>(cfg); });
    if (name == "export-ppm") return run_export(cfg);
    return run_matrix(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

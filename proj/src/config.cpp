#include "fictplay/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

namespace fictplay {
namespace {

using E = ExperimentConfig;
using Field = std::variant<std::string E::*, long E::*, double E::*, unsigned long long E::*, bool E::*,
                           std::vector<long> E::*>;

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"profile", &E::profile},
      {"model", &E::model},
      {"data", &E::data},
      {"data_dir", &E::data_dir},
      {"image_side", &E::image_side},
      {"channels", &E::channels},
      {"classes", &E::classes},
      {"train_per_class", &E::train_per_class},
      {"valid_per_class", &E::valid_per_class},
      {"test_per_class", &E::test_per_class},
      {"outer_iterations", &E::outer_iterations},
      {"inner_steps", &E::inner_steps},
      {"batch_size", &E::batch_size},
      {"lr", &E::lr},
      {"lr_decay", &E::lr_decay},
      {"lr_milestones", &E::lr_milestones},
      {"momentum", &E::momentum},
      {"weight_decay", &E::weight_decay},
      {"seed", &E::seed},
      {"weighting", &E::weighting},
      {"fp_mode", &E::fp_mode},
      {"snapshot_dir", &E::snapshot_dir},
      {"kind", &E::kind},
      {"epsilon_pixels", &E::epsilon_pixels},
      {"attack_alpha", &E::attack_alpha},
      {"attack_iterations", &E::attack_iterations},
      {"attack_batch", &E::attack_batch},
      {"eval_attack_iterations", &E::eval_attack_iterations},
      {"patch_side", &E::patch_side},
      {"chi", &E::chi},
      {"theta_max_deg", &E::theta_max_deg},
      {"placements", &E::placements},
      {"patch_alpha", &E::patch_alpha},
      {"target_class", &E::target_class},
      {"lambda", &E::lambda},
      {"pgd_steps", &E::pgd_steps},
      {"pgd_step_pixels", &E::pgd_step_pixels},
      {"pgd_random_init", &E::pgd_random_init},
      {"eval_sample_size", &E::eval_sample_size},
      {"record_seconds", &E::record_seconds},
      {"precision", &E::precision},
      {"output", &E::output},
      {"checkpoint", &E::checkpoint},
      {"input", &E::input},
      {"game", &E::game},
      {"iters", &E::iters},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          cfg.*member = v;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true" || v == "1")
            cfg.*member = true;
          else if (v == "false" || v == "0")
            cfg.*member = false;
          else
            throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
        } else if constexpr (std::is_same_v<T, std::vector<long>>) {
          std::vector<long> out;
          std::stringstream ss(v);
          for (std::string part; std::getline(ss, part, ',');)
            if (!trim(part).empty()) out.push_back(parse_number<long>(key, trim(part)));
          cfg.*member = std::move(out);
        } else {
          cfg.*member = parse_number<T>(key, v);
        }
      },
      find_field(key));
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return cfg.*member;
        } else if constexpr (std::is_same_v<T, bool>) {
          return cfg.*member ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::vector<long>>) {
          std::string out;
          for (long m : cfg.*member) out += (out.empty() ? "" : ",") + std::to_string(m);
          return out;
        } else {
          return format_number(cfg.*member);
        }
      },
      find_field(key));
}

ExperimentConfig profile_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") return c;
  if (name != "cifar10") throw ConfigError("unknown profile '" + name + "' (desk, cifar10)");
  c.profile = "cifar10";
  c.model = "paper-vgg";
  c.data = "cifar10";
  c.image_side = 32;
  c.outer_iterations = 50;
  c.inner_steps = 10000;
  c.batch_size = 256;
  c.lr = 0.01;
  c.lr_decay = 0.1;
  c.lr_milestones = {150000, 300000, 450000};
  c.weight_decay = 0.0002;
  c.epsilon_pixels = 16;
  c.attack_alpha = 2e-5;
  c.attack_iterations = 20000;
  c.attack_batch = 100;
  c.eval_attack_iterations = 20000;
  c.patch_side = 32;
  c.eval_sample_size = 10000;
  return c;
}

void ExperimentConfig::validate() const {
  require(model == "tiny" || model == "paper-vgg", "model must be tiny or paper-vgg");
  require(data == "synthetic" || data == "cifar10", "data must be synthetic or cifar10");
  require(data != "cifar10" || (channels == 3 && image_side == 32 && classes == 10),
          "cifar10 data needs channels=3, image_side=32, classes=10");
  require(image_side >= 8 && channels >= 1 && classes >= 2, "image_side >= 8, channels >= 1, classes >= 2 required");
  require(train_per_class >= 2 && valid_per_class >= 2 && test_per_class >= 2, "per-class counts must be >= 2");
  require(weighting == "literal" || weighting == "uniform", "weighting must be literal or uniform");
  require(fp_mode == "approximate" || fp_mode == "exact", "fp_mode must be approximate or exact");
  require(kind == "universal" || kind == "patch", "kind must be universal or patch");
  require(precision == "float" || precision == "double", "precision must be float or double");
  require(epsilon_pixels >= 0, "epsilon_pixels must be >= 0");
  require(target_class >= -1 && target_class < classes, "target_class must be -1 or a class index");
  require(eval_sample_size >= 1, "eval_sample_size must be >= 1");
  require(iters >= 1, "iters must be >= 1");
  try {
    train_config().validate();
    attack_settings(false).universal.validate();
    attack_settings(false).patch.validate();
    attack_settings(true).universal.validate();
    train_config().pgd.validate();
    model_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig ExperimentConfig::model_config() const {
  return builtin_config(model, image_side, channels, classes);
}

AttackSettings ExperimentConfig::attack_settings(bool for_eval) const {
  AttackSettings a;
  a.kind = kind == "patch" ? PerturbationKind::Patch : PerturbationKind::Universal;
  const long iterations = for_eval ? eval_attack_iterations : attack_iterations;
  a.universal.epsilon = epsilon();
  a.universal.alpha = attack_alpha;
  a.universal.iterations = iterations;
  a.universal.batch_size = attack_batch;
  a.patch.side = patch_side;
  a.patch.chi = chi;
  a.patch.theta_max = theta_max_deg * std::numbers::pi / 180.0;
  a.patch.placements = placements;
  a.patch.alpha = patch_alpha;
  a.patch.iterations = iterations;
  a.patch.batch_size = attack_batch;
  if (target_class >= 0) a.patch.target_class = static_cast<int>(target_class);
  a.patch.lambda = lambda;
  return a;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.outer_iterations = static_cast<int>(outer_iterations);
  t.inner_steps = inner_steps;
  t.batch_size = batch_size;
  t.lr = lr;
  t.lr_decay = lr_decay;
  t.lr_milestones = lr_milestones;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.seed = seed;
  t.weighting = weighting == "uniform" ? Weighting::Uniform : Weighting::Literal;
  t.attack = attack_settings(false);
  t.pgd.epsilon = epsilon();
  t.pgd.step_size = pgd_step_pixels / 255.0;
  t.pgd.steps = static_cast<int>(pgd_steps);
  t.pgd.random_init = pgd_random_init;
  t.snapshot_dir = snapshot_dir;
  return t;
}

EvalConfig ExperimentConfig::eval_config() const {
  EvalConfig e;
  e.attack = attack_settings(true);
  e.sample_size = eval_sample_size;
  e.record_seconds = record_seconds;
  return e;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  int line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    find_field(key);
    for (const auto& [k, v] : out)
      if (k == key) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& file,
                                const std::vector<std::pair<std::string, std::string>>& flags,
                                const char* env_output) {
  std::string profile = "desk";
  for (const auto* layer : {&file, &flags})
    for (const auto& [k, v] : *layer)
      if (k == "profile") profile = trim(v);
  ExperimentConfig cfg = profile_config(profile);
  for (const auto& [k, v] : file) set_config_value(cfg, k, v);
  if (env_output != nullptr && *env_output != '\0') cfg.output = env_output;
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& flags) {
  std::vector<std::pair<std::string, std::string>> file;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    file = parse_config_text(ss.str());
  }
  return resolve_config(file, flags, std::getenv(kOutputEnv));
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(cfg, key) + "\n";
  return out;
}

}  // namespace fictplay

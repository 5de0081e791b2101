#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fictplay/eval.hpp"

namespace fictplay {

/// Every experiment knob as a flat key. Defaults are the `desk` profile.
struct ExperimentConfig {
  std::string profile = "desk";
  // model and data
  std::string model = "tiny";
  std::string data = "synthetic";
  std::string data_dir;
  long image_side = 16;
  long channels = 3;
  long classes = 10;
  long train_per_class = 200;
  long valid_per_class = 50;
  long test_per_class = 100;
  // optimisation
  long outer_iterations = 8;
  long inner_steps = 300;
  long batch_size = 64;
  double lr = 0.05;
  double lr_decay = 0.1;
  std::vector<long> lr_milestones{720, 1440, 2160};
  double momentum = 0.9;
  double weight_decay = 0.0002;
  unsigned long long seed = 0;
  std::string weighting = "literal";
  std::string fp_mode = "approximate";
  std::string snapshot_dir;
  // perturbation player
  std::string kind = "universal";
  double epsilon_pixels = 16;
  double attack_alpha = 0.004;
  long attack_iterations = 200;
  long attack_batch = 100;
  long eval_attack_iterations = 2000;
  long patch_side = 16;
  double chi = 0.4;
  double theta_max_deg = 20;
  long placements = 4;
  double patch_alpha = 1.0;
  long target_class = -1;  // -1: untargeted
  double lambda = 0;
  // adversarial training
  long pgd_steps = 7;
  double pgd_step_pixels = 4;
  bool pgd_random_init = true;
  // evaluation and artifacts
  long eval_sample_size = 2000;
  bool record_seconds = false;
  std::string precision = "float";
  std::string output = "out";
  std::string checkpoint;
  std::string input;
  std::string game = "rps";
  long iters = 50000;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  /// Throws ConfigError on out-of-range or unknown enumerated values.
  void validate() const;

  double epsilon() const { return epsilon_pixels / 255.0; }
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  /// Attack used while training (FP) or, with `for_eval`, the fresh evaluation attack.
  AttackSettings attack_settings(bool for_eval = false) const;
  EvalConfig eval_config() const;
};

/// Key names in canonical (echo) order.
const std::vector<std::string>& config_keys();

ExperimentConfig profile_config(const std::string& name);

/// Sets one key from its text form; ConfigError on unknown key or bad value.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// `key = value` lines; `#` starts a comment; duplicate keys are errors.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Profile defaults, then file pairs, then the output-directory environment
/// override, then flags. A `profile` key in any layer picks the base profile.
ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& file,
                                const std::vector<std::pair<std::string, std::string>>& flags,
                                const char* env_output = nullptr);

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& flags = {});

/// Every key as `key = value`, parseable by parse_config_text.
std::string echo_config(const ExperimentConfig& cfg);

/// Name of the environment variable overriding `output`.
inline constexpr const char* kOutputEnv = "FICTPLAY_OUT_DIR";

template <typename Scalar>
struct Splits {
  Dataset<Scalar> train, valid, test;
  std::vector<const Dataset<Scalar>*> all() const { return {&train, &valid, &test}; }
};

/// Synthetic splits share class textures and differ in their draws. CIFAR-10
/// uses data_batch_1..4 for training, data_batch_5 for validation and test_batch.
template <typename Scalar>
Splits<Scalar> load_splits(const ExperimentConfig& cfg) {
  Splits<Scalar> s;
  if (cfg.data == "synthetic") {
    auto make = [&](long per_class, Split split) {
      return make_synthetic<Scalar>(static_cast<int>(cfg.classes), static_cast<int>(per_class), cfg.image_side,
                                    cfg.seed, split, SyntheticStyle{}, cfg.channels);
    };
    s.train = make(cfg.train_per_class, Split::Train);
    s.valid = make(cfg.valid_per_class, Split::Valid);
    s.test = make(cfg.test_per_class, Split::Test);
    return s;
  }
  const std::string d = cfg.data_dir.empty() ? std::string(".") : cfg.data_dir;
  std::vector<std::string> train;
  for (int i = 1; i <= 4; ++i) train.push_back(d + "/data_batch_" + std::to_string(i) + ".bin");
  s.train = load_cifar10<Scalar>(train, Split::Train);
  s.valid = load_cifar10<Scalar>(d + "/data_batch_5.bin", Split::Valid);
  s.test = load_cifar10<Scalar>(d + "/test_batch.bin", Split::Test);
  return s;
}

}  // namespace fictplay

#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fictplay/binary_io.hpp"
#include "fictplay/layers.hpp"
#include "fictplay/model_config.hpp"
#include "fictplay/optim.hpp"
#include "fictplay/rng.hpp"

namespace fictplay {

/// Parameters of one classifier: trainable tensors plus batch-norm running statistics.
template <typename Scalar>
struct Params {
  ModelConfig config;
  TensorMap<Scalar> weights;
  std::map<std::string, RunningStats<Scalar>> stats;

  template <typename Other>
  Params<Other> cast() const {
    Params<Other> out;
    out.config = config;
    for (const auto& [k, v] : weights) out.weights[k] = v.template cast<Other>();
    for (const auto& [k, s] : stats) out.stats[k] = {s.mean.template cast<Other>(), s.var.template cast<Other>()};
    return out;
  }

  friend bool operator==(const Params& a, const Params& b) {
    if (!(a.config == b.config) || a.weights != b.weights || a.stats.size() != b.stats.size()) return false;
    for (const auto& [k, s] : a.stats) {
      auto it = b.stats.find(k);
      if (it == b.stats.end() || !(it->second.mean == s.mean) || !(it->second.var == s.var)) return false;
    }
    return true;
  }
};

namespace detail {

inline std::string layer_name(const char* kind, std::size_t index) { return kind + std::to_string(index); }

}  // namespace detail

/// Fresh parameters: conv/dense weights ~ U(−b, b) with b = sqrt(1/fan_in)
/// (fan_in = C·k·k for conv, inputs for dense); biases 0; gamma 1, beta 0;
/// running mean 0, running variance 1.
template <typename Scalar>
Params<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  const auto shapes = config.activation_shapes();
  Params<Scalar> p;
  p.config = config;
  Rng rng(derive_seed(seed, stream::kInit));
  Shape cur{config.channels, config.height, config.width};
  auto uniform = [&rng](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
  };
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        const std::string n = detail::layer_name("conv", i);
        const double bound = std::sqrt(1.0 / static_cast<double>(cur[0] * l.kernel * l.kernel));
        p.weights[n + ".weight"] = uniform({l.out, cur[0], l.kernel, l.kernel}, bound);
        p.weights[n + ".bias"] = Tensor<Scalar>::zeros({l.out});
        break;
      }
      case LayerKind::BatchNorm: {
        const std::string n = detail::layer_name("bn", i);
        p.weights[n + ".gamma"] = Tensor<Scalar>::constant({cur[0]}, Scalar(1));
        p.weights[n + ".beta"] = Tensor<Scalar>::zeros({cur[0]});
        p.stats[n] = {Tensor<Scalar>::zeros({cur[0]}), Tensor<Scalar>::constant({cur[0]}, Scalar(1))};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Dense: {
        const std::string n = detail::layer_name("dense", i);
        const Index fan_in = shape_size(cur);
        p.weights[n + ".weight"] = uniform({fan_in, l.out}, std::sqrt(1.0 / static_cast<double>(fan_in)));
        p.weights[n + ".bias"] = Tensor<Scalar>::zeros({l.out});
        break;
      }
    }
    cur = shapes[i];
  }
  return p;
}

namespace detail {

/// Shared body of the train and infer forward passes. `params` is mutated only
/// when `update_stats` is set (train mode).
template <typename Scalar>
Var<Scalar> run_layers(Tape<Scalar>& tape, const Params<Scalar>& params, Var<Scalar> x, Mode mode, bool trainable,
                       Params<Scalar>* update_stats) {
  const ModelConfig& cfg = params.config;
  const Shape expect{cfg.channels, cfg.height, cfg.width};
  if (x.value().rank() != 4 || !std::equal(expect.begin(), expect.end(), x.shape().begin() + 1))
    throw ShapeError("forward: batch " + shape_string(x.shape()) + " does not match model input " +
                     shape_string(expect));
  auto bind = [&](const std::string& name) {
    const Tensor<Scalar>& w = params.weights.at(name);
    return trainable ? tape.leaf(w, true, name) : tape.constant(w);
  };
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        const std::string n = layer_name("conv", i);
        x = conv2d(x, bind(n + ".weight"), bind(n + ".bias"), l.stride, l.padding);
        break;
      }
      case LayerKind::BatchNorm: {
        const std::string n = layer_name("bn", i);
        auto gamma = bind(n + ".gamma");
        auto beta = bind(n + ".beta");
        if (mode == Mode::Train) {
          x = batchnorm(x, gamma, beta, Mode::Train, update_stats ? &update_stats->stats.at(n) : nullptr);
        } else {
          RunningStats<Scalar> running = params.stats.at(n);
          x = batchnorm(x, gamma, beta, Mode::Infer, &running);
        }
        break;
      }
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::Dense: {
        const std::string n = layer_name("dense", i);
        if (x.value().rank() != 2) x = flatten(x);
        x = dense(x, bind(n + ".weight"), bind(n + ".bias"));
        break;
      }
    }
  }
  return x;
}

}  // namespace detail

/// Inference-mode logits [B,K]; parameters enter the tape as constants, so
/// gradients flow only to `input`.
template <typename Scalar>
Var<Scalar> forward(Tape<Scalar>& tape, const Params<Scalar>& params, const Var<Scalar>& input) {
  return detail::run_layers<Scalar>(tape, params, input, Mode::Infer, false, nullptr);
}

/// Train-mode logits. Weights become named leaves requiring gradients; batch
/// statistics normalise and, if `update_running_stats`, update `params.stats`.
template <typename Scalar>
Var<Scalar> forward_train(Tape<Scalar>& tape, Params<Scalar>& params, const Var<Scalar>& input,
                          bool update_running_stats = true) {
  return detail::run_layers<Scalar>(tape, params, input, Mode::Train, true,
                            update_running_stats ? &params : nullptr);
}

/// Inference-mode logits without gradient bookkeeping beyond a scratch tape.
template <typename Scalar>
Tensor<Scalar> logits(const Params<Scalar>& params, const Tensor<Scalar>& batch) {
  Tape<Scalar> tape;
  return forward(tape, params, tape.constant(batch)).value();
}

/// Row-wise argmax with ties broken toward the lowest class id.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& scores) {
  const Index B = scores.dim(0), C = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    Index best = 0;
    for (Index c = 1; c < C; ++c)
      if (scores[b * C + c] > scores[b * C + best]) best = c;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

template <typename Scalar>
std::vector<int> predict(const Params<Scalar>& params, const Tensor<Scalar>& batch) {
  return argmax_rows(logits(params, batch));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "FPLYCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   magic "FPLYCKPT" | u32 version | string model config | i32 iteration |
///   u32 tensor count | per tensor: string name, u32 rank, u32 extents[rank], f32 values
/// Strings are u32 length + bytes. Running statistics are stored as
/// "<bn>.running_mean" / "<bn>.running_var". Tensors are written in name order.
template <typename Scalar>
void save_checkpoint(const std::string& path, const Params<Scalar>& params, int iteration) {
  TensorMap<Scalar> all = params.weights;
  for (const auto& [k, s] : params.stats) {
    all[k + ".running_mean"] = s.mean;
    all[k + ".running_var"] = s.var;
  }
  auto os = io::open_out(path);
  io::write_magic(os, kCheckpointMagic);
  io::write_u32(os, kCheckpointVersion);
  io::write_string(os, params.config.serialize());
  io::write_i32(os, iteration);
  io::write_u32(os, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) {
    io::write_string(os, name);
    io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
    std::vector<float> f(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    io::write_f32_array(os, f);
  }
  os.flush();
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

template <typename Scalar>
struct Checkpoint {
  Params<Scalar> params;
  int iteration = 0;
};

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kCheckpointMagic, "checkpoint '" + path + "'");
  if (io::read_u32(is) != kCheckpointVersion) throw IoError("checkpoint '" + path + "': unsupported version");
  Checkpoint<Scalar> ck;
  try {
    ck.params.config = ModelConfig::parse(io::read_string(is));
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path + "': " + e.what());
  }
  ck.iteration = io::read_i32(is);
  const std::uint32_t count = io::read_u32(is);
  // Expected names and shapes come from a freshly built model of the same config.
  Params<Scalar> proto = build_model<Scalar>(ck.params.config, 0);
  TensorMap<Scalar> all;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is, 4096);
    const std::uint32_t rank = io::read_u32(is);
    if (rank > 8) throw IoError("checkpoint '" + path + "': bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = io::read_u32(is);
    Index n = shape_size(shape);
    if (n <= 0 || n > (Index{1} << 28)) throw IoError("checkpoint '" + path + "': bad extents for " + name);
    auto values = io::read_f32_array(is, static_cast<std::size_t>(n));
    typename Tensor<Scalar>::Array a(n);
    for (Index j = 0; j < n; ++j) a[j] = static_cast<Scalar>(values[static_cast<std::size_t>(j)]);
    try {
      all[name] = Tensor<Scalar>(std::move(shape), std::move(a));
    } catch (const ShapeError& e) {
      throw IoError("checkpoint '" + path + "': " + e.what());
    }
  }
  for (const auto& [name, t] : proto.weights) {
    auto it = all.find(name);
    if (it == all.end() || it->second.shape() != t.shape())
      throw IoError("checkpoint '" + path + "': missing or misshapen tensor " + name);
    ck.params.weights[name] = it->second;
  }
  for (const auto& [name, s] : proto.stats) {
    auto m = all.find(name + ".running_mean");
    auto v = all.find(name + ".running_var");
    if (m == all.end() || v == all.end() || m->second.shape() != s.mean.shape() || v->second.shape() != s.var.shape())
      throw IoError("checkpoint '" + path + "': missing running stats for " + name);
    ck.params.stats[name] = {m->second, v->second};
  }
  if (all.size() != proto.weights.size() + 2 * proto.stats.size())
    throw IoError("checkpoint '" + path + "': unexpected extra tensors");
  for (const auto& [name, t] : ck.params.weights)
    if (!t.all_finite()) throw IoError("checkpoint '" + path + "': non-finite values in " + name);
  return ck;
}

/// Outer iteration stored in a checkpoint header, without reading the tensors.
inline int checkpoint_iteration(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kCheckpointMagic, "checkpoint '" + path + "'");
  if (io::read_u32(is) != kCheckpointVersion) throw IoError("checkpoint '" + path + "': unsupported version");
  io::read_string(is);
  return io::read_i32(is);
}

// ---------------------------------------------------------------------------
// Snapshots and the uniform mixture of past classifiers
// ---------------------------------------------------------------------------

/// Frozen classifier fᵢ. Either held in memory or stored in a checkpoint file
/// and loaded on each access, so at most one on-disk member is resident at a time.
template <typename Scalar>
class ClassifierSnapshot {
 public:
  ClassifierSnapshot(int iteration, Params<Scalar> params, std::string note = {})
      : iteration_(iteration), params_(std::make_shared<const Params<Scalar>>(std::move(params))),
        note_(std::move(note)) {}

  /// Writes `params` to `path` and keeps only the path.
  static ClassifierSnapshot on_disk(int iteration, const Params<Scalar>& params, std::string path,
                                    std::string note = {}) {
    save_checkpoint(path, params, iteration);
    return ClassifierSnapshot(iteration, std::move(path), std::move(note));
  }

  int iteration() const { return iteration_; }
  const std::string& note() const { return note_; }
  bool resident() const { return params_ != nullptr; }

  std::shared_ptr<const Params<Scalar>> load() const {
    if (params_) return params_;
    return std::make_shared<const Params<Scalar>>(load_checkpoint<Scalar>(path_).params);
  }

 private:
  ClassifierSnapshot(int iteration, std::string path, std::string note)
      : iteration_(iteration), path_(std::move(path)), note_(std::move(note)) {}

  int iteration_;
  std::shared_ptr<const Params<Scalar>> params_;
  std::string path_;
  std::string note_;
};

template <typename Scalar>
class ClassifierPool {
 public:
  void add(ClassifierSnapshot<Scalar> snapshot) {
    if (!members_.empty() && snapshot.iteration() <= members_.back().iteration())
      throw std::invalid_argument("ClassifierPool: snapshot iterations must increase");
    members_.push_back(std::move(snapshot));
  }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  const ClassifierSnapshot<Scalar>& operator[](std::size_t i) const { return members_.at(i); }
  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

 private:
  std::vector<ClassifierSnapshot<Scalar>> members_;
};

/// Calls `objective(logits)` for the single classifier.
template <typename Scalar, typename Objective>
Var<Scalar> mixture_objective(Tape<Scalar>& tape, const Params<Scalar>& params, const Var<Scalar>& input,
                              Objective&& objective) {
  return objective(forward(tape, params, input));
}

/// Uniform average of `objective(logits_i)` over the pool members. A pool of
/// one returns that member's objective unscaled.
template <typename Scalar, typename Objective>
Var<Scalar> mixture_objective(Tape<Scalar>& tape, const ClassifierPool<Scalar>& pool, const Var<Scalar>& input,
                              Objective&& objective) {
  if (pool.empty()) throw std::invalid_argument("classifier pool is empty");
  std::vector<Var<Scalar>> terms;
  terms.reserve(pool.size());
  for (const auto& member : pool) {
    auto params = member.load();
    terms.push_back(objective(forward(tape, *params, input)));
  }
  if (terms.size() == 1) return terms.front();
  std::vector<Scalar> w(terms.size(), Scalar(1) / static_cast<Scalar>(terms.size()));
  return linear_combination(std::span<const Var<Scalar>>(terms), std::span<const Scalar>(w));
}

/// Expected cross-entropy of a uniformly drawn classifier (the conman objective),
/// differentiable with respect to `input`.
template <typename Scalar, typename Target>
Var<Scalar> expected_loss(Tape<Scalar>& tape, const Target& target, const Var<Scalar>& input,
                          std::span<const int> labels) {
  return mixture_objective(tape, target, input,
                           [labels](const Var<Scalar>& z) { return softmax_cross_entropy(z, labels); });
}

template <typename Scalar>
Var<Scalar> pool_expected_loss(Tape<Scalar>& tape, const ClassifierPool<Scalar>& pool, const Var<Scalar>& input,
                               std::span<const int> labels) {
  return expected_loss(tape, pool, input, labels);
}

/// Argmax of the averaged softmax posteriors; a single member predicts from its logits.
template <typename Scalar>
std::vector<int> pool_predict(const ClassifierPool<Scalar>& pool, const Tensor<Scalar>& batch) {
  if (pool.empty()) throw std::invalid_argument("classifier pool is empty");
  if (pool.size() == 1) return predict(*pool[0].load(), batch);
  Tensor<Scalar> avg;
  for (const auto& member : pool) {
    Tensor<Scalar> p = softmax_rows(logits(*member.load(), batch));
    if (avg.empty())
      avg = std::move(p);
    else
      avg.values() += p.values();
  }
  avg.values() /= static_cast<Scalar>(pool.size());
  return argmax_rows(avg);
}

template <typename Scalar>
std::vector<int> predict(const ClassifierPool<Scalar>& pool, const Tensor<Scalar>& batch) {
  return pool_predict(pool, batch);
}

}  // namespace fictplay

#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fictplay/autodiff.hpp"
#include "fictplay/data.hpp"

namespace fictplay {

/// Differentiable patch overlay on a batch: sample b is overwritten inside the
/// disc placed at placements[b]. Gradients reach the patch through the
/// bilinear weights and the images outside the disc.
template <typename Scalar>
Var<Scalar> overlay_patch(const Var<Scalar>& images, const Var<Scalar>& patch,
                          std::span<const PatchPlacement> placements) {
  const Tensor<Scalar>& x = images.value();
  const Tensor<Scalar>& xi = patch.value();
  if (x.rank() != 4 || xi.rank() != 3 || xi.dim(0) != x.dim(1) || xi.dim(1) != xi.dim(2) ||
      static_cast<Index>(placements.size()) != x.dim(0))
    throw ShapeError("overlay_patch: images " + shape_string(x.shape()) + ", patch " + shape_string(xi.shape()) +
                     ", " + std::to_string(placements.size()) + " placements");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), P = xi.dim(1);
  std::vector<std::vector<OverlayTap>> taps;
  taps.reserve(placements.size());
  for (const auto& pl : placements) taps.push_back(overlay_taps(H, W, P, pl));
  Tensor<Scalar> out = x;
  for (Index b = 0; b < B; ++b)
    detail::overlay_into(out.data() + b * C * H * W, C, H * W, xi.data(), P * P, taps[static_cast<std::size_t>(b)]);
  return images.tape().record(
      std::move(out), {images, patch},
      [images, patch, taps = std::move(taps), B, C, H, W, P](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        if (t.needs_grad(images)) {
          Tensor<Scalar> gx = g;
          for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < C; ++c)
              for (const auto& tap : taps[static_cast<std::size_t>(b)]) gx[(b * C + c) * H * W + tap.pixel] = 0;
          t.accumulate(images, gx);
        }
        if (t.needs_grad(patch)) {
          Tensor<Scalar> gp(patch.shape());
          for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < C; ++c)
              for (const auto& tap : taps[static_cast<std::size_t>(b)]) {
                const Scalar up = g[(b * C + c) * H * W + tap.pixel];
                for (std::size_t q = 0; q < 4; ++q) gp[c * P * P + tap.src[q]] += static_cast<Scalar>(tap.weight[q]) * up;
              }
          t.accumulate(patch, gp);
        }
      },
      "overlay_patch");
}

/// A perturbed dataset D_ξ held as (base dataset, perturbation, placement seed).
/// The view owns only the perturbation; images are produced on demand.
template <typename Scalar>
class PerturbedView {
 public:
  /// Clean view (D₀).
  PerturbedView(const Dataset<Scalar>& base, std::uint64_t seed = 0) : base_(&base), seed_(seed) {}

  PerturbedView(const Dataset<Scalar>& base, std::shared_ptr<const PerturbationSpec<Scalar>> spec,
                std::uint64_t seed)
      : base_(&base), spec_(std::move(spec)), seed_(seed) {
    if (spec_ && spec_->kind() == PerturbationKind::Universal && spec_->xi().shape() != base.image_shape())
      throw ShapeError("view: perturbation shape " + shape_string(spec_->xi().shape()) + " vs image " +
                       shape_string(base.image_shape()));
    if (spec_ && spec_->kind() == PerturbationKind::Patch && spec_->xi().dim(0) != base.channels())
      throw ShapeError("view: patch channels do not match images");
  }

  const Dataset<Scalar>& base() const { return *base_; }
  const PerturbationSpec<Scalar>* spec() const { return spec_.get(); }
  std::uint64_t seed() const { return seed_; }
  bool clean() const { return spec_ == nullptr || spec_->is_zero_universal(); }

  /// Placement used for dataset index `index` at draw number `draw`.
  PatchPlacement placement(Index index, std::uint64_t draw) const {
    Rng rng(derive_seed(derive_seed(seed_, draw), static_cast<std::uint64_t>(index)));
    return sample_placement(rng, base_->height(), base_->width(), spec_->chi(), spec_->theta_max());
  }

  /// Bytes this view owns beyond its own object.
  std::size_t storage_bytes() const { return spec_ ? sizeof(*spec_) + spec_->storage_bytes() : 0; }

  /// Whether both views yield identical images for every (indices, draw).
  bool same_effect(const PerturbedView& o) const {
    if (base_ != o.base_) return false;
    if (clean() || o.clean()) return clean() && o.clean();
    if (!spec_->same_effect(*o.spec_)) return false;
    return spec_->kind() == PerturbationKind::Universal || seed_ == o.seed_;
  }

 private:
  const Dataset<Scalar>* base_;
  std::shared_ptr<const PerturbationSpec<Scalar>> spec_;
  std::uint64_t seed_;
};

/// Images of `indices` under the view's perturbation. Patch placements are a
/// pure function of (view seed, draw, index), so equal arguments give equal batches.
template <typename Scalar>
Tensor<Scalar> materialize(const PerturbedView<Scalar>& view, std::span<const Index> indices, std::uint64_t draw = 0) {
  Tensor<Scalar> batch = view.base().gather(indices);
  const PerturbationSpec<Scalar>* spec = view.spec();
  if (spec == nullptr) return batch;
  if (spec->kind() == PerturbationKind::Universal) return apply_universal(batch, spec->xi(), spec->epsilon());
  const Index C = batch.dim(1), H = batch.dim(2), W = batch.dim(3), P = spec->side();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto taps = overlay_taps(H, W, P, view.placement(indices[i], draw));
    detail::overlay_into(batch.data() + static_cast<Index>(i) * C * H * W, C, H * W, spec->xi().data(), P * P, taps);
  }
  return batch;
}

/// Uniform batches without replacement inside an epoch; the order is
/// reshuffled whenever fewer than `size` unused indices remain.
class BatchSampler {
 public:
  BatchSampler(Index n, std::uint64_t seed) : n_(n), rng_(seed) {
    if (n < 1) throw std::invalid_argument("BatchSampler: empty dataset");
  }

  std::vector<Index> next(Index size) {
    if (size < 1 || size > n_)
      throw std::invalid_argument("BatchSampler: batch size " + std::to_string(size) + " outside [1," +
                                  std::to_string(n_) + "]");
    if (order_.empty() || cursor_ + size > n_) reshuffle();
    std::vector<Index> out(order_.begin() + cursor_, order_.begin() + cursor_ + size);
    cursor_ += size;
    return out;
  }

  long epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(static_cast<std::size_t>(n_));
    std::iota(order_.begin(), order_.end(), Index{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epoch_;
  }

  Index n_;
  Rng rng_;
  std::vector<Index> order_;
  Index cursor_ = 0;
  long epoch_ = 0;
};

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;
  std::vector<int> labels;
  std::vector<Index> indices;
};

template <typename Scalar>
Batch<Scalar> sample_batch(const PerturbedView<Scalar>& view, Index size, BatchSampler& sampler,
                           std::uint64_t draw = 0) {
  Batch<Scalar> b;
  b.indices = sampler.next(size);
  b.images = materialize(view, b.indices, draw);
  b.labels = view.base().gather_labels(b.indices);
  return b;
}

template <typename Scalar>
Batch<Scalar> sample_batch(const Dataset<Scalar>& ds, Index size, BatchSampler& sampler) {
  Batch<Scalar> b;
  b.indices = sampler.next(size);
  b.images = ds.gather(b.indices);
  b.labels = ds.gather_labels(b.indices);
  return b;
}

/// Binary PPM (P6, maxval 255). Universal payloads map v ↦ round((v+ε)/(2ε)·255);
/// patches are written as-is. Single-channel payloads are replicated to grey.
template <typename Scalar>
void write_ppm(const std::string& path, const PerturbationSpec<Scalar>& spec) {
  const Tensor<Scalar>& xi = spec.xi();
  if (xi.rank() != 3 || (xi.dim(0) != 3 && xi.dim(0) != 1)) throw ShapeError("write_ppm: need 1 or 3 channels");
  const Index C = xi.dim(0), H = xi.dim(1), W = xi.dim(2);
  auto os = io::open_out(path);
  os << "P6\n" << W << ' ' << H << "\n255\n";
  std::vector<char> px(static_cast<std::size_t>(H * W * 3));
  const double eps = spec.epsilon();
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = static_cast<double>(xi.at(C == 1 ? 0 : c, y, x));
        const double scaled = spec.kind() == PerturbationKind::Universal ? (v + eps) / (2 * eps) * 255.0 : v * 255.0;
        px[static_cast<std::size_t>((y * W + x) * 3 + c)] =
            static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(scaled), 0L, 255L)));
      }
  os.write(px.data(), static_cast<std::streamsize>(px.size()));
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace fictplay

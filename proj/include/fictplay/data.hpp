#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fictplay/binary_io.hpp"
#include "fictplay/rng.hpp"
#include "fictplay/tensor.hpp"

namespace fictplay {

enum class Split { Train, Valid, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

/// Labelled images [N,C,H,W] with pixels in [0,1].
template <typename Scalar>
struct Dataset {
  Tensor<Scalar> images;
  std::vector<int> labels;
  int classes = 0;
  Split split = Split::Train;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index channels() const { return images.dim(1); }
  Index height() const { return images.dim(2); }
  Index width() const { return images.dim(3); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Index image_size() const { return images.size() / std::max<Index>(size(), 1); }

  /// Throws when a pixel lies outside [0,1] or a label outside [0,classes).
  void validate() const {
    if (images.rank() != 4 || images.dim(0) != size()) throw ShapeError("dataset: images/labels mismatch");
    if (!images.all_finite() || (images.values() < Scalar(0)).any() || (images.values() > Scalar(1)).any())
      throw std::invalid_argument("dataset: pixels must lie in [0,1]");
    for (int y : labels)
      if (y < 0 || y >= classes) throw std::invalid_argument("dataset: label out of range");
  }

  Tensor<Scalar> gather(std::span<const Index> indices) const {
    const Index per = image_size();
    Tensor<Scalar> out({static_cast<Index>(indices.size()), channels(), height(), width()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Index idx = indices[i];
      if (idx < 0 || idx >= size()) throw std::out_of_range("dataset index " + std::to_string(idx));
      out.values().segment(static_cast<Index>(i) * per, per) = images.values().segment(idx * per, per);
    }
    return out;
  }

  std::vector<int> gather_labels(std::span<const Index> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (Index idx : indices) {
      if (idx < 0 || idx >= size()) throw std::out_of_range("dataset index " + std::to_string(idx));
      out.push_back(labels[static_cast<std::size_t>(idx)]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes of 32x32, row-major).
// ---------------------------------------------------------------------------

inline constexpr Index kCifarSide = 32;
inline constexpr Index kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

template <typename Scalar>
Dataset<Scalar> load_cifar10(const std::vector<std::string>& paths, Split split = Split::Train) {
  std::vector<unsigned char> bytes;
  for (const auto& path : paths) {
    auto raw = io::read_file(path);
    if (raw.size() % static_cast<std::size_t>(kCifarRecord) != 0)
      throw IoError("cifar10 '" + path + "': truncated record (" + std::to_string(raw.size()) + " bytes)");
    bytes.insert(bytes.end(), raw.begin(), raw.end());
  }
  const Index n = static_cast<Index>(bytes.size()) / kCifarRecord;
  if (n == 0) throw IoError("cifar10: no records");
  Dataset<Scalar> ds;
  ds.classes = 10;
  ds.split = split;
  ds.images = Tensor<Scalar>({n, 3, kCifarSide, kCifarSide});
  ds.labels.resize(static_cast<std::size_t>(n));
  const Index per = kCifarRecord - 1;
  for (Index r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= 10) throw IoError("cifar10: label byte " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    ds.labels[static_cast<std::size_t>(r)] = rec[0];
    for (Index j = 0; j < per; ++j) ds.images[r * per + j] = static_cast<Scalar>(rec[1 + j]) / Scalar(255);
  }
  return ds;
}

template <typename Scalar>
Dataset<Scalar> load_cifar10(const std::string& path, Split split = Split::Train) {
  return load_cifar10<Scalar>(std::vector<std::string>{path}, split);
}

/// Inverse of load_cifar10 (pixels rounded to the nearest byte).
template <typename Scalar>
void save_cifar10(const std::string& path, const Dataset<Scalar>& ds) {
  if (ds.image_shape() != Shape{3, kCifarSide, kCifarSide}) throw ShapeError("save_cifar10: images must be 3x32x32");
  auto os = io::open_out(path);
  const Index per = kCifarRecord - 1;
  std::vector<char> rec(static_cast<std::size_t>(kCifarRecord));
  for (Index r = 0; r < ds.size(); ++r) {
    rec[0] = static_cast<char>(ds.labels[static_cast<std::size_t>(r)]);
    for (Index j = 0; j < per; ++j)
      rec[static_cast<std::size_t>(1 + j)] =
          static_cast<char>(static_cast<unsigned char>(std::lround(static_cast<double>(ds.images[r * per + j]) * 255.0)));
    os.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale data
// ---------------------------------------------------------------------------

/// Knobs of the procedural generator. Class k has a ramp oriented near 2πk/K
/// (a large, jittered cue), a colour direction used both as a faint global
/// tint and inside a small disc at a random position, and an optional fixed
/// sinusoidal texture. All of it sits on a random brightness offset plus noise.
struct SyntheticStyle {
  double ramp_min = 0.3;
  double ramp_max = 0.6;
  double orientation_jitter = 1.3;  // fraction of the half-gap between class orientations
  double texture_amplitude = 0.0;
  double offset_min = 0.4;
  double offset_max = 0.6;
  double noise_sigma = 0.04;
  bool random_texture_phase = false;
  double tint_amplitude = 0.03;  // class colour cast, zero mean over channels
  double spot_amplitude = 0.6;   // class-coloured disc at a random position
  double spot_diameter = 0.25;   // fraction of the image side
};

/// Draws `per_class` images of side `side` for each of `classes` classes,
/// ordered class-major. Pixels are clipped to [0,1].
template <typename Scalar>
Dataset<Scalar> make_synthetic(int classes, int per_class, Index side, std::uint64_t seed,
                               Split split = Split::Train, const SyntheticStyle& style = {}, Index channels = 3) {
  if (classes < 2 || per_class < 2 || side < 8) throw std::invalid_argument("make_synthetic: need K>=2, M>=2, H>=8");
  // Class textures depend on the class only, so every split shares them.
  Rng texture_rng(derive_seed(0x7e57u, static_cast<std::uint64_t>(classes)));
  struct Texture {
    double fx, fy, phase;
    std::vector<double> channel_sign;
    std::vector<double> tint;
  };
  std::vector<Texture> textures;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < classes; ++k) {
    Texture t;
    const double angle = 2 * std::numbers::pi * unit(texture_rng);
    const double freq = 0.25 * static_cast<double>(side) * (0.35 + 0.4 * unit(texture_rng));
    t.fx = freq * std::cos(angle);
    t.fy = freq * std::sin(angle);
    t.phase = 2 * std::numbers::pi * unit(texture_rng);
    for (Index c = 0; c < channels; ++c) t.channel_sign.push_back(unit(texture_rng) < 0.5 ? -1.0 : 1.0);
    // Unit-norm, zero-mean colour direction: classes sit evenly around the
    // chroma plane of RGB images (no tint for other channel counts).
    const double hue = 2 * std::numbers::pi * k / classes;
    for (Index c = 0; c < channels; ++c)
      t.tint.push_back(channels == 3 ? std::sqrt(2.0 / 3.0) * std::cos(hue - 2 * std::numbers::pi * static_cast<double>(c) / 3)
                                     : 0.0);
    textures.push_back(std::move(t));
  }

  Rng rng(derive_seed(seed, stream::kData + 17 * static_cast<std::uint64_t>(split)));
  std::normal_distribution<double> noise(0.0, style.noise_sigma);
  const Index n = static_cast<Index>(classes) * per_class;
  Dataset<Scalar> ds;
  ds.classes = classes;
  ds.split = split;
  ds.images = Tensor<Scalar>({n, channels, side, side});
  ds.labels.resize(static_cast<std::size_t>(n));
  const double half_gap = std::numbers::pi / classes;
  Index i = 0;
  for (int k = 0; k < classes; ++k) {
    const Texture& tex = textures[static_cast<std::size_t>(k)];
    for (int m = 0; m < per_class; ++m, ++i) {
      ds.labels[static_cast<std::size_t>(i)] = k;
      const double phi =
          2 * std::numbers::pi * k / classes + style.orientation_jitter * half_gap * (2 * unit(rng) - 1);
      const double ramp = style.ramp_min + (style.ramp_max - style.ramp_min) * unit(rng);
      const double offset = style.offset_min + (style.offset_max - style.offset_min) * unit(rng);
      const double cphi = std::cos(phi), sphi = std::sin(phi);
      const double spot_r = style.spot_diameter * static_cast<double>(side) / 2;
      const double spot_x = spot_r + (static_cast<double>(side) - 2 * spot_r) * unit(rng);
      const double spot_y = spot_r + (static_cast<double>(side) - 2 * spot_r) * unit(rng);
      const double phase = tex.phase + (style.random_texture_phase ? 2 * std::numbers::pi * unit(rng) : 0.0);
      for (Index c = 0; c < channels; ++c)
        for (Index y = 0; y < side; ++y)
          for (Index x = 0; x < side; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(side) - 0.5;
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(side) - 0.5;
            const double texture = tex.channel_sign[static_cast<std::size_t>(c)] * style.texture_amplitude *
                                   std::sin(2 * std::numbers::pi * (tex.fx * u + tex.fy * v) + phase);
            double value = offset + ramp * (u * cphi + v * sphi) + texture +
                                 style.tint_amplitude * tex.tint[static_cast<std::size_t>(c)] + noise(rng);
            const double dist = std::hypot(static_cast<double>(x) + 0.5 - spot_x, static_cast<double>(y) + 0.5 - spot_y);
            value += style.spot_amplitude * tex.tint[static_cast<std::size_t>(c)] * std::clamp(spot_r + 0.5 - dist, 0.0, 1.0);
            ds.images.at(i, c, y, x) = static_cast<Scalar>(std::clamp(value, 0.0, 1.0));
          }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

enum class PerturbationKind { Universal, Patch };

inline const char* kind_name(PerturbationKind k) { return k == PerturbationKind::Universal ? "universal" : "patch"; }

/// Discrete disc of diameter `side`: pixel (i,j) is inside when its centre lies
/// within side/2 of the patch centre.
template <typename Scalar>
Tensor<Scalar> disc_mask(Index side) {
  Tensor<Scalar> m({side, side});
  const double r = static_cast<double>(side) / 2;
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) {
      const double dy = static_cast<double>(i) + 0.5 - r, dx = static_cast<double>(j) + 0.5 - r;
      m.at(i, j) = dy * dy + dx * dx <= r * r ? Scalar(1) : Scalar(0);
    }
  return m;
}

/// Either a universal additive perturbation with L∞ budget ε (fraction of the
/// pixel range), or a circular patch with its placement distribution.
template <typename Scalar>
class PerturbationSpec {
 public:
  static PerturbationSpec universal(Tensor<Scalar> xi, double epsilon) {
    if (!(epsilon > 0)) throw std::invalid_argument("universal perturbation: epsilon must be positive");
    PerturbationSpec s;
    s.kind_ = PerturbationKind::Universal;
    s.epsilon_ = epsilon;
    s.set_xi(std::move(xi));
    return s;
  }

  static PerturbationSpec zero_universal(Shape image_shape, double epsilon) {
    return universal(Tensor<Scalar>::zeros(std::move(image_shape)), epsilon);
  }

  /// `theta_max` in radians; `chi` is the placed diameter as a fraction of the image side.
  static PerturbationSpec patch(Tensor<Scalar> xi, double chi, double theta_max) {
    if (xi.rank() != 3 || xi.dim(1) != xi.dim(2)) throw ShapeError("patch: xi must be C x P x P");
    if (!(chi > 0 && chi <= 1)) throw std::invalid_argument("patch: chi must lie in (0,1]");
    if (!(theta_max >= 0)) throw std::invalid_argument("patch: theta_max must be non-negative");
    PerturbationSpec s;
    s.kind_ = PerturbationKind::Patch;
    s.chi_ = chi;
    s.theta_max_ = theta_max;
    s.mask_ = disc_mask<Scalar>(xi.dim(1));
    s.set_xi(std::move(xi));
    return s;
  }

  static PerturbationSpec gray_patch(Index channels, Index side, double chi, double theta_max) {
    return patch(Tensor<Scalar>::constant({channels, side, side}, Scalar(0.5)), chi, theta_max);
  }

  PerturbationKind kind() const { return kind_; }
  const Tensor<Scalar>& xi() const { return xi_; }
  double epsilon() const { return epsilon_; }
  /// ε in the working precision; the value projections clamp to.
  Scalar budget() const { return static_cast<Scalar>(epsilon_); }
  const Tensor<Scalar>& mask() const { return mask_; }
  double chi() const { return chi_; }
  double theta_max() const { return theta_max_; }
  Index side() const { return xi_.dim(1); }

  /// Replaces the payload, enforcing the kind's invariant.
  void set_xi(Tensor<Scalar> xi) {
    require_finite(xi, "perturbation");
    if (kind_ == PerturbationKind::Universal) {
      if (xi.max_abs() > budget())
        throw std::invalid_argument("universal perturbation exceeds its L-inf budget");
    } else {
      if (!xi_.empty() && xi.shape() != xi_.shape()) throw ShapeError("patch: payload shape changed");
      if ((xi.values() < Scalar(0)).any() || (xi.values() > Scalar(1)).any())
        throw std::invalid_argument("patch pixels must lie in [0,1]");
    }
    xi_ = std::move(xi);
  }

  /// Heap bytes owned by this spec.
  std::size_t storage_bytes() const {
    return static_cast<std::size_t>(xi_.size() + mask_.size()) * sizeof(Scalar);
  }

  /// Whether the two specs perturb every image identically.
  bool same_effect(const PerturbationSpec& o) const {
    if (kind_ != o.kind_) return false;
    if (kind_ == PerturbationKind::Universal) return xi_ == o.xi_;
    return xi_ == o.xi_ && chi_ == o.chi_ && theta_max_ == o.theta_max_;
  }

  bool is_zero_universal() const {
    return kind_ == PerturbationKind::Universal && (xi_.values() == Scalar(0)).all();
  }

 private:
  PerturbationSpec() = default;

  PerturbationKind kind_ = PerturbationKind::Universal;
  Tensor<Scalar> xi_;
  Tensor<Scalar> mask_;
  double epsilon_ = 0;
  double chi_ = 0;
  double theta_max_ = 0;
};

/// clip(x + xi, 0, 1) for one image or a batch ([B, ...] with xi of shape [...]).
template <typename Scalar>
Tensor<Scalar> apply_universal(const Tensor<Scalar>& x, const Tensor<Scalar>& xi, double epsilon) {
  if (xi.max_abs() > static_cast<Scalar>(epsilon)) throw std::invalid_argument("apply_universal: budget violated");
  const Index per = xi.size();
  if (x.size() % per != 0) throw ShapeError("apply_universal: " + shape_string(x.shape()) + " vs " + shape_string(xi.shape()));
  Tensor<Scalar> out = x;
  for (Index b = 0; b < x.size() / per; ++b) {
    auto seg = out.values().segment(b * per, per);
    seg = (seg + xi.values()).max(Scalar(0)).min(Scalar(1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch overlay
// ---------------------------------------------------------------------------

/// Affine placement of a patch: centre (a, b) in image pixel coordinates
/// (pixel centres at integer + 0.5), placed diameter in pixels, rotation in radians.
struct PatchPlacement {
  double a = 0;
  double b = 0;
  double diameter = 0;
  double theta = 0;
};

/// Uniform centre keeping the placed disc inside the image, θ ~ U[−θmax, θmax].
inline PatchPlacement sample_placement(Rng& rng, Index height, Index width, double chi, double theta_max) {
  const double d = chi * static_cast<double>(std::min(height, width));
  std::uniform_real_distribution<double> ua(d / 2, static_cast<double>(width) - d / 2);
  std::uniform_real_distribution<double> ub(d / 2, static_cast<double>(height) - d / 2);
  std::uniform_real_distribution<double> ut(-theta_max, theta_max);
  PatchPlacement p;
  p.a = ua(rng);
  p.b = ub(rng);
  p.diameter = d;
  p.theta = theta_max > 0 ? ut(rng) : 0.0;
  return p;
}

/// One overwritten image pixel and its four bilinear taps into the patch.
struct OverlayTap {
  Index pixel = 0;  // y * W + x
  std::array<Index, 4> src{};
  std::array<double, 4> weight{};
};

/// Inverse mapping: each image pixel centre inside the placed disc is rotated
/// by −θ, scaled by P/diameter into patch coordinates, and bilinearly sampled
/// (edge-clamped). Throws std::out_of_range if the disc leaves the image.
inline std::vector<OverlayTap> overlay_taps(Index height, Index width, Index patch_side, const PatchPlacement& pl) {
  const double r = pl.diameter / 2;
  constexpr double tol = 1e-9;
  if (!(pl.diameter >= 0) || pl.a - r < -tol || pl.b - r < -tol || pl.a + r > static_cast<double>(width) + tol ||
      pl.b + r > static_cast<double>(height) + tol)
    throw std::out_of_range("patch placement out of bounds");
  std::vector<OverlayTap> taps;
  if (pl.diameter <= 0) return taps;
  const double scale = static_cast<double>(patch_side) / pl.diameter;
  const double c = std::cos(pl.theta), s = std::sin(pl.theta);
  const double half = static_cast<double>(patch_side) / 2;
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(pl.b - r)));
  const Index y1 = std::min<Index>(height - 1, static_cast<Index>(std::ceil(pl.b + r)));
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(pl.a - r)));
  const Index x1 = std::min<Index>(width - 1, static_cast<Index>(std::ceil(pl.a + r)));
  auto clamp_idx = [patch_side](Index i) { return std::clamp<Index>(i, 0, patch_side - 1); };
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double rx = static_cast<double>(x) + 0.5 - pl.a, ry = static_cast<double>(y) + 0.5 - pl.b;
      const double px = (c * rx + s * ry) * scale + half;
      const double py = (-s * rx + c * ry) * scale + half;
      // Disc membership in patch coordinates.
      if ((px - half) * (px - half) + (py - half) * (py - half) > half * half) continue;
      const double sx = px - 0.5, sy = py - 0.5;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const auto ix = static_cast<Index>(fx0), iy = static_cast<Index>(fy0);
      OverlayTap t;
      t.pixel = y * width + x;
      t.src = {clamp_idx(iy) * patch_side + clamp_idx(ix), clamp_idx(iy) * patch_side + clamp_idx(ix + 1),
               clamp_idx(iy + 1) * patch_side + clamp_idx(ix), clamp_idx(iy + 1) * patch_side + clamp_idx(ix + 1)};
      t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      taps.push_back(t);
    }
  return taps;
}

namespace detail {

template <typename Scalar>
void overlay_into(Scalar* image, Index channels, Index hw, const Scalar* patch, Index pp,
                  const std::vector<OverlayTap>& taps) {
  for (Index c = 0; c < channels; ++c) {
    const Scalar* src = patch + c * pp;
    Scalar* dst = image + c * hw;
    for (const auto& t : taps) {
      Scalar v = 0;
      for (int q = 0; q < 4; ++q) v += static_cast<Scalar>(t.weight[static_cast<std::size_t>(q)]) * src[t.src[static_cast<std::size_t>(q)]];
      dst[t.pixel] = v;
    }
  }
}

}  // namespace detail

/// Overlays the patch on one [C,H,W] image at `placement`.
template <typename Scalar>
Tensor<Scalar> apply_patch(const Tensor<Scalar>& image, const Tensor<Scalar>& xi, const PatchPlacement& placement) {
  if (image.rank() != 3 || xi.rank() != 3 || xi.dim(0) != image.dim(0))
    throw ShapeError("apply_patch: image " + shape_string(image.shape()) + ", patch " + shape_string(xi.shape()));
  const auto taps = overlay_taps(image.dim(1), image.dim(2), xi.dim(1), placement);
  Tensor<Scalar> out = image;
  detail::overlay_into(out.data(), image.dim(0), image.dim(1) * image.dim(2), xi.data(), xi.dim(1) * xi.dim(2), taps);
  return out;
}

}  // namespace fictplay

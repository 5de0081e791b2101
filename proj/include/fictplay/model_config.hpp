#pragma once

#include <string>
#include <vector>

#include "fictplay/ops.hpp"

namespace fictplay {

enum class LayerKind { Conv, BatchNorm, Relu, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Index out = 0;     // conv filters / dense units
  Index kernel = 0;  // conv only
  Index stride = 1;  // conv only
  Padding padding = Padding::Same;

  static LayerSpec conv(Index filters, Index kernel, Index stride, Padding padding = Padding::Same) {
    return {LayerKind::Conv, filters, kernel, stride, padding};
  }
  static LayerSpec batchnorm() { return {LayerKind::BatchNorm}; }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec dense(Index units) { return {LayerKind::Dense, units}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Architecture of a classifier on [C,H,W] inputs producing `classes` logits.
/// A dense layer flattens whatever precedes it.
struct ModelConfig {
  Index channels = 3;
  Index height = 16;
  Index width = 16;
  Index classes = 10;
  std::vector<LayerSpec> layers;

  /// Throws ConfigError when consecutive shapes do not conform or the final
  /// layer does not emit `classes` logits.
  void validate() const;

  /// Per-sample activation shape after each layer (validate()s first).
  std::vector<Shape> activation_shapes() const;

  /// Canonical single-line text form, e.g.
  /// "input=3x16x16 classes=10 layers=conv(8,3,2,same);bn;relu;dense(10)"
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Desk-scale default: two strided conv blocks and a dense head.
ModelConfig tiny_config(Index side = 16, Index channels = 3, Index classes = 10);

/// The VGG-style CIFAR network: eleven 3x3 conv/bn/relu blocks, no pooling,
/// stride-2 convs at the block boundaries, then one fully connected layer.
ModelConfig paper_vgg_config(Index classes = 10);

/// "tiny" or "paper-vgg".
ModelConfig builtin_config(const std::string& name, Index side, Index channels, Index classes);

}  // namespace fictplay

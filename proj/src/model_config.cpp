#include "fictplay/model_config.hpp"

#include <sstream>

#include "fictplay/layers.hpp"

namespace fictplay {

std::vector<Shape> ModelConfig::activation_shapes() const {
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("model: input extents must be positive");
  if (classes < 2) throw ConfigError("model: need at least two classes");
  if (layers.empty()) throw ConfigError("model: no layers");
  std::vector<Shape> shapes;
  Shape cur{channels, height, width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "model layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) throw ConfigError(where + "conv after dense");
        if (l.out < 1 || l.kernel < 1 || l.stride < 1) throw ConfigError(where + "conv extents must be positive");
        const Index pad = detail::conv_padding(l.padding, l.kernel);
        if (l.kernel > cur[1] + 2 * pad || l.kernel > cur[2] + 2 * pad) throw ConfigError(where + "kernel too large");
        cur = {l.out, conv_output_extent(cur[1], l.kernel, l.stride, l.padding),
               conv_output_extent(cur[2], l.kernel, l.stride, l.padding)};
        break;
      }
      case LayerKind::BatchNorm:
        if (cur.size() != 3) throw ConfigError(where + "batchnorm needs a [C,H,W] activation");
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Dense:
        if (l.out < 1) throw ConfigError(where + "dense units must be positive");
        cur = {l.out};
        break;
    }
    shapes.push_back(cur);
  }
  if (layers.back().kind != LayerKind::Dense || shapes.back() != Shape{classes})
    throw ConfigError("model: final layer must be dense with " + std::to_string(classes) + " outputs");
  return shapes;
}

void ModelConfig::validate() const { (void)activation_shapes(); }

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "input=" << channels << 'x' << height << 'x' << width << " classes=" << classes << " layers=";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (i) os << ';';
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv(" << l.out << ',' << l.kernel << ',' << l.stride << ','
           << (l.padding == Padding::Same ? "same" : "valid") << ')';
        break;
      case LayerKind::BatchNorm: os << "bn"; break;
      case LayerKind::Relu: os << "relu"; break;
      case LayerKind::Dense: os << "dense(" << l.out << ')'; break;
    }
  }
  return os.str();
}

namespace {

Index parse_index(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ConfigError("model config: bad integer '" + s + "' in " + ctx);
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

LayerSpec parse_layer(const std::string& tok) {
  if (tok == "bn") return LayerSpec::batchnorm();
  if (tok == "relu") return LayerSpec::relu();
  const auto open = tok.find('(');
  if (open == std::string::npos || tok.back() != ')') throw ConfigError("model config: bad layer '" + tok + "'");
  const std::string name = tok.substr(0, open);
  const auto args = split(tok.substr(open + 1, tok.size() - open - 2), ',');
  if (name == "dense" && args.size() == 1) return LayerSpec::dense(parse_index(args[0], tok));
  if (name == "conv" && args.size() == 4) {
    Padding pad;
    if (args[3] == "same")
      pad = Padding::Same;
    else if (args[3] == "valid")
      pad = Padding::Valid;
    else
      throw ConfigError("model config: bad padding in '" + tok + "'");
    return LayerSpec::conv(parse_index(args[0], tok), parse_index(args[1], tok), parse_index(args[2], tok), pad);
  }
  throw ConfigError("model config: bad layer '" + tok + "'");
}

}  // namespace

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  bool have_input = false, have_classes = false, have_layers = false;
  std::istringstream is(text);
  std::string field;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: bad field '" + field + "'");
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "input") {
      const auto dims = split(val, 'x');
      if (dims.size() != 3) throw ConfigError("model config: input must be CxHxW");
      cfg.channels = parse_index(dims[0], key);
      cfg.height = parse_index(dims[1], key);
      cfg.width = parse_index(dims[2], key);
      have_input = true;
    } else if (key == "classes") {
      cfg.classes = parse_index(val, key);
      have_classes = true;
    } else if (key == "layers") {
      for (const auto& tok : split(val, ';')) cfg.layers.push_back(parse_layer(tok));
      have_layers = true;
    } else {
      throw ConfigError("model config: unknown field '" + key + "'");
    }
  }
  if (!have_input || !have_classes || !have_layers) throw ConfigError("model config: missing field");
  cfg.validate();
  return cfg;
}

ModelConfig tiny_config(Index side, Index channels, Index classes) {
  ModelConfig cfg;
  cfg.channels = channels;
  cfg.height = side;
  cfg.width = side;
  cfg.classes = classes;
  cfg.layers = {LayerSpec::conv(8, 5, 2), LayerSpec::batchnorm(), LayerSpec::relu(),
                LayerSpec::conv(16, 5, 2), LayerSpec::batchnorm(), LayerSpec::relu(),
                LayerSpec::dense(classes)};
  cfg.validate();
  return cfg;
}

ModelConfig paper_vgg_config(Index classes) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.height = 32;
  cfg.width = 32;
  cfg.classes = classes;
  const std::pair<Index, Index> blocks[] = {{64, 1},  {64, 1},  {128, 2}, {128, 1}, {128, 1}, {256, 2},
                                            {256, 1}, {256, 1}, {512, 2}, {512, 1}, {512, 1}};
  for (auto [filters, stride] : blocks) {
    cfg.layers.push_back(LayerSpec::conv(filters, 3, stride));
    cfg.layers.push_back(LayerSpec::batchnorm());
    cfg.layers.push_back(LayerSpec::relu());
  }
  cfg.layers.push_back(LayerSpec::dense(classes));
  cfg.validate();
  return cfg;
}

ModelConfig builtin_config(const std::string& name, Index side, Index channels, Index classes) {
  if (name == "tiny") return tiny_config(side, channels, classes);
  if (name == "paper-vgg") {
    if (side != 32 || channels != 3) throw ConfigError("paper-vgg expects 3x32x32 inputs");
    return paper_vgg_config(classes);
  }
  throw ConfigError("unknown model '" + name + "' (expected tiny or paper-vgg)");
}

}  // namespace fictplay

#include "acl/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "acl/error.hpp"
#include "acl/losses.hpp"
#include "acl/textio.hpp"

namespace acl {

namespace {

constexpr const char* kCheckpointMagic = "acl-checkpoint v1";

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  for (const auto& cell : split(text, ',')) out.push_back(parse_size(cell));
  return out;
}

Dense make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out), b(out);
  for (auto& v : w) v = u(rng);
  for (auto& v : b) v = u(rng);
  return {Tensor({in, out}, std::move(w), true), Tensor({out}, std::move(b), true)};
}

Tensor apply(const Dense& layer, const Tensor& x) {
  return add_bias(matmul(x, layer.weight), layer.bias);
}

Tensor copy_leaf(const Tensor& t, bool requires_grad) {
  const auto v = t.values();
  return Tensor(t.shape(), std::vector<double>(v.begin(), v.end()), requires_grad);
}

Dense copy_dense(const Dense& d, bool requires_grad) {
  return {copy_leaf(d.weight, requires_grad), copy_leaf(d.bias, requires_grad)};
}

kernels::ConvGeometry conv_geometry(const NetworkConfig& c, std::size_t layer) {
  kernels::ConvGeometry g;
  g.channels = layer == 0 ? c.channels : c.conv1_channels;
  g.height = c.height;
  g.width = c.width;
  return g;
}

}  // namespace

std::string to_string(ExtractorKind kind) { return kind == ExtractorKind::mlp ? "mlp" : "conv"; }

ExtractorKind parse_extractor_kind(const std::string& text) {
  if (text == "mlp") return ExtractorKind::mlp;
  if (text == "conv") return ExtractorKind::conv;
  throw ConfigError("unknown extractor '" + text + "' (expected mlp or conv)");
}

void NetworkConfig::validate() const {
  if (extractor == ExtractorKind::mlp) {
    if (input_dim == 0) throw ConfigError("network.input_dim must be positive");
    for (auto w : hidden)
      if (w == 0) throw ConfigError("network.hidden widths must be positive");
  } else {
    if (channels == 0 || height == 0 || width == 0)
      throw ConfigError("conv extractor needs channels, height and width");
    if (height % 2 || width % 2) throw ConfigError("conv extractor needs even height and width");
    if (conv1_channels == 0 || conv2_channels == 0)
      throw ConfigError("conv channel counts must be positive");
  }
  if (feature_dim == 0) throw ConfigError("network.feature_dim must be positive");
  if (code_length < 2) throw ConfigError("network.code_length must be at least 2");
  if (effective_projection_dim() == 0) throw ConfigError("network.projection_dim must be positive");
  if (classes < 2) throw ConfigError("network.classes must be at least 2");
}

std::size_t NetworkConfig::input_size() const {
  return extractor == ExtractorKind::mlp ? input_dim : channels * height * width;
}

std::size_t NetworkConfig::effective_projection_dim() const {
  return projection_dim ? projection_dim : code_length / 2;
}

std::size_t NetworkConfig::effective_projection_hidden() const {
  return projection_hidden ? projection_hidden : code_length;
}

std::vector<std::pair<std::string, std::string>> NetworkConfig::to_kv() const {
  std::vector<std::pair<std::string, std::string>> kv{
      {"channels", std::to_string(channels)},
      {"classes", std::to_string(classes)},
      {"code_length", std::to_string(code_length)},
      {"conv1_channels", std::to_string(conv1_channels)},
      {"conv2_channels", std::to_string(conv2_channels)},
      {"extractor", to_string(extractor)},
      {"feature_dim", std::to_string(feature_dim)},
      {"height", std::to_string(height)},
      {"hidden", join_sizes(hidden)},
      {"input_dim", std::to_string(input_dim)},
      {"projection_dim", std::to_string(projection_dim)},
      {"projection_hidden", std::to_string(projection_hidden)},
      {"width", std::to_string(width)},
  };
  return kv;
}

NetworkConfig NetworkConfig::from_kv(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  NetworkConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "channels") c.channels = parse_size(value);
    else if (key == "classes") c.classes = parse_size(value);
    else if (key == "code_length") c.code_length = parse_size(value);
    else if (key == "conv1_channels") c.conv1_channels = parse_size(value);
    else if (key == "conv2_channels") c.conv2_channels = parse_size(value);
    else if (key == "extractor") c.extractor = parse_extractor_kind(value);
    else if (key == "feature_dim") c.feature_dim = parse_size(value);
    else if (key == "height") c.height = parse_size(value);
    else if (key == "hidden") c.hidden = parse_sizes(value);
    else if (key == "input_dim") c.input_dim = parse_size(value);
    else if (key == "projection_dim") c.projection_dim = parse_size(value);
    else if (key == "projection_hidden") c.projection_hidden = parse_size(value);
    else if (key == "width") c.width = parse_size(value);
    else throw ConfigError("unknown network key '" + key + "'");
  }
  return c;
}

std::uint64_t NetworkConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : to_kv()) text += k + "=" + v + "\n";
  return fnv1a(text.data(), text.size());
}

std::vector<std::pair<std::string, Tensor>> NetworkParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto add = [&](const std::string& name, const Dense& d) {
    out.emplace_back(name + ".weight", d.weight);
    out.emplace_back(name + ".bias", d.bias);
  };
  for (std::size_t i = 0; i < conv.size(); ++i) add("conv" + std::to_string(i), conv[i]);
  for (std::size_t i = 0; i < extractor.size(); ++i)
    add("extractor" + std::to_string(i), extractor[i]);
  add("encoder", encoder);
  add("projection1", projection1);
  add("projection2", projection2);
  add("head", head);
  return out;
}

std::vector<Tensor> NetworkParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::vector<Tensor> NetworkParams::backbone() const {
  std::vector<Tensor> out;
  for (const auto& d : conv) out.insert(out.end(), {d.weight, d.bias});
  for (const auto& d : extractor) out.insert(out.end(), {d.weight, d.bias});
  out.insert(out.end(), {encoder.weight, encoder.bias});
  return out;
}

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.config = config;
  std::size_t width;
  if (config.extractor == ExtractorKind::conv) {
    const auto g1 = conv_geometry(config, 0), g2 = conv_geometry(config, 1);
    p.conv.push_back(make_dense(g1.patch_size(), config.conv1_channels, rng));
    p.conv.push_back(make_dense(g2.patch_size(), config.conv2_channels, rng));
    width = config.conv2_channels * (config.height / 2) * (config.width / 2);
  } else {
    width = config.input_dim;
    for (auto w : config.hidden) {
      p.extractor.push_back(make_dense(width, w, rng));
      width = w;
    }
  }
  p.extractor.push_back(make_dense(width, config.feature_dim, rng));
  p.encoder = make_dense(config.feature_dim, config.code_length, rng);
  p.projection1 = make_dense(config.code_length, config.effective_projection_hidden(), rng);
  p.projection2 = make_dense(config.effective_projection_hidden(),
                             config.effective_projection_dim(), rng);
  p.head = make_dense(config.feature_dim, config.classes, rng);
  return p;
}

NetworkParams clone(const NetworkParams& params, bool requires_grad) {
  NetworkParams p;
  p.config = params.config;
  for (const auto& d : params.conv) p.conv.push_back(copy_dense(d, requires_grad));
  for (const auto& d : params.extractor) p.extractor.push_back(copy_dense(d, requires_grad));
  p.encoder = copy_dense(params.encoder, requires_grad);
  p.projection1 = copy_dense(params.projection1, requires_grad);
  p.projection2 = copy_dense(params.projection2, requires_grad);
  p.head = copy_dense(params.head, requires_grad);
  return p;
}

NetworkParams transfer_pretrained(const NetworkParams& pretrained, std::uint64_t seed) {
  NetworkParams p = init_params(pretrained.config, seed);
  for (std::size_t i = 0; i < p.conv.size(); ++i) p.conv[i] = copy_dense(pretrained.conv[i], true);
  for (std::size_t i = 0; i < p.extractor.size(); ++i)
    p.extractor[i] = copy_dense(pretrained.extractor[i], true);
  p.encoder = copy_dense(pretrained.encoder, true);
  return p;
}

std::uint64_t checksum(const std::vector<Tensor>& tensors) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& t : tensors) {
    const auto v = t.values();
    h = fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

Tensor extract_features(const NetworkParams& params, const Tensor& x) {
  const auto& cfg = params.config;
  if (x.dim() != 2 || x.cols() != cfg.input_size())
    throw ShapeError("network input must be (batch x " + std::to_string(cfg.input_size()) +
                     "), got " + to_string(x.shape()));
  Tensor h = x;
  if (cfg.extractor == ExtractorKind::conv) {
    h = relu(conv2d(h, params.conv[0].weight, params.conv[0].bias, conv_geometry(cfg, 0)));
    h = relu(conv2d(h, params.conv[1].weight, params.conv[1].bias, conv_geometry(cfg, 1)));
    h = maxpool2x2(h, cfg.conv2_channels, cfg.height, cfg.width);
  }
  for (const auto& layer : params.extractor) h = relu(apply(layer, h));
  return h;
}

Tensor encode(const NetworkParams& params, const Tensor& h) {
  return tanh(apply(params.encoder, h));
}

Tensor project(const NetworkParams& params, const Tensor& c) {
  return apply(params.projection2, relu(apply(params.projection1, c)));
}

ForwardOutputs forward_pretrain(const NetworkParams& params, const Tensor& x) {
  ForwardOutputs out;
  out.h = extract_features(params, x);
  out.c = encode(params, out.h);
  out.z = project(params, out.c);
  return out;
}

ForwardOutputs forward_finetune(const NetworkParams& params, const Tensor& x,
                                const Tensor& book) {
  ForwardOutputs out;
  out.h = extract_features(params, x);
  out.c = encode(params, out.h);
  out.p = decoder_probabilities(out.c, book);
  return out;
}

ForwardOutputs forward_finetune(const NetworkParams& params, const Tensor& x,
                                const Codebook& book) {
  return forward_finetune(params, x, book.as_tensor());
}

Tensor forward_baseline(const NetworkParams& params, const Tensor& x) {
  return apply(params.head, extract_features(params, x));
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::standard: return "standard";
    case ModelKind::simclr: return "simclr";
    case ModelKind::acl_pf: return "acl-pf";
    case ModelKind::acl_cfpc: return "acl-cfpc";
    case ModelKind::acl_tfc: return "acl-tfc";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  for (auto k : {ModelKind::standard, ModelKind::simclr, ModelKind::acl_pf, ModelKind::acl_cfpc,
                 ModelKind::acl_tfc})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown model '" + text + "'");
}

bool uses_codebook(ModelKind kind) {
  return kind == ModelKind::acl_pf || kind == ModelKind::acl_cfpc || kind == ModelKind::acl_tfc;
}

Tensor Classifier::scores(const Tensor& x) const {
  if (!uses_codebook(kind)) return forward_baseline(params, x);
  if (!book) throw Error(to_string(kind) + " classifier has no codebook");
  return codeword_scores(encode(params, extract_features(params, x)), book->as_tensor());
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<std::size_t> Classifier::predict(const Tensor& x) const {
  NoGradGuard guard;
  const Tensor s = scores(x);
  const std::size_t k = s.cols();
  std::vector<std::size_t> out(s.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(s.values().subspan(i * k, k));
  return out;
}

Classifier Classifier::frozen() const { return {kind, clone(params, false), book}; }

Classifier Checkpoint::classifier() const { return {kind, params, book}; }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += "model " + to_string(checkpoint.kind) + "\n";
  out += "config_hash " + std::to_string(checkpoint.params.config.hash()) + "\n";
  for (const auto& [k, v] : checkpoint.params.config.to_kv())
    out += "config " + k + " " + (v.empty() ? "-" : v) + "\n";
  for (const auto& [name, t] : checkpoint.params.named()) {
    out += "param " + name + " " + join_sizes(t.shape()) + " ";
    const auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += format_double(v[i]);
    }
    out += '\n';
  }
  if (checkpoint.book) {
    std::istringstream csv(codebook_to_csv(*checkpoint.book));
    out += "codebook " + to_string(checkpoint.book->source()) + "\n";
    for (std::string line; std::getline(csv, line);) out += "  " + line + "\n";
  }
  out += "end\n";
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw fail("not an acl checkpoint");

  std::optional<ModelKind> kind;
  std::optional<std::uint64_t> stored_hash;
  std::vector<std::pair<std::string, std::string>> kv;
  std::map<std::string, std::pair<Shape, std::vector<double>>> values;
  std::optional<Codebook> book;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string tag;
    row >> tag;
    if (tag == "model") {
      std::string name;
      row >> name;
      kind = parse_model_kind(name);
    } else if (tag == "config_hash") {
      std::string h;
      row >> h;
      stored_hash = std::stoull(h);
    } else if (tag == "config") {
      std::string k, v;
      row >> k >> v;
      kv.emplace_back(k, v == "-" ? "" : v);
    } else if (tag == "param") {
      std::string name, shape, data;
      row >> name >> shape >> data;
      Shape s = parse_sizes(shape);
      std::vector<double> v;
      if (!data.empty())
        for (const auto& cell : split(data, ',')) v.push_back(parse_double(cell));
      if (numel(s) != v.size()) throw fail("parameter " + name + " has the wrong value count");
      values[name] = {std::move(s), std::move(v)};
    } else if (tag == "codebook") {
      std::string source, csv;
      row >> source;
      std::string body;
      while (std::getline(in, body) && body.rfind("  ", 0) == 0) csv += body.substr(2) + "\n";
      const Codebook parsed = codebook_from_csv(csv);
      const CodebookSource src = source == "fixed_binary" ? CodebookSource::fixed_binary
                                 : source == "loaded"     ? CodebookSource::loaded
                                                          : CodebookSource::generated;
      book = Codebook(parsed.classes(), parsed.length(),
                      std::vector<double>(parsed.rows().begin(), parsed.rows().end()), src);
      if (body == "end") ended = true;
      break;
    } else if (tag == "end") {
      ended = true;
      break;
    } else {
      throw fail("unexpected line '" + line + "'");
    }
  }
  if (!ended) throw fail("truncated checkpoint");
  if (!kind || !stored_hash) throw fail("missing model or config hash");

  const NetworkConfig config = NetworkConfig::from_kv(kv);
  if (config.hash() != *stored_hash) throw fail("config hash does not match its config lines");
  NetworkParams params = init_params(config, 0);
  auto named = params.named();
  if (named.size() != values.size()) throw fail("parameter set does not match the config");
  for (auto& [name, t] : named) {
    const auto it = values.find(name);
    if (it == values.end()) throw fail("missing parameter " + name);
    if (it->second.first != t.shape()) throw fail("parameter " + name + " has the wrong shape");
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_values().begin());
  }
  return {*kind, std::move(params), std::move(book)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  if (c.params.config.hash() != expected.hash())
    throw ConfigError(path.string() + ": checkpoint was written for a different network config");
  return c;
}

}  // namespace acl

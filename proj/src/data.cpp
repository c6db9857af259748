#include "acl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

#include "acl/error.hpp"
#include "acl/textio.hpp"

namespace acl {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string to_string(const SampleShape& shape) {
  if (!shape.is_image()) return std::to_string(shape.features);
  return std::to_string(shape.channels) + "," + std::to_string(shape.height) + "," +
         std::to_string(shape.width);
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t d = shape.size();
  return std::span<const double>(inputs).subspan(i * d, d);
}

void Dataset::validate() const {
  const std::size_t d = shape.size();
  if (d == 0) throw ShapeError("dataset sample shape is empty");
  if (inputs.size() != labels.size() * d)
    throw ShapeError("dataset holds " + std::to_string(inputs.size()) + " values for " +
                     std::to_string(labels.size()) + " samples of size " + std::to_string(d));
  if (origin.size() != labels.size()) throw ShapeError("dataset origin table has the wrong size");
  for (auto y : labels)
    if (y >= classes)
      throw ShapeError("label " + std::to_string(y) + " outside 0.." +
                       std::to_string(classes ? classes - 1 : 0));
  for (double v : inputs)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dataset input outside [0,1]");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.shape = shape;
  out.classes = classes;
  const std::size_t d = shape.size();
  out.inputs.reserve(indices.size() * d);
  for (auto i : indices) {
    if (i >= size()) throw ShapeError("subset index out of range");
    const auto s = sample(i);
    out.inputs.insert(out.inputs.end(), s.begin(), s.end());
    out.labels.push_back(labels[i]);
    out.origin.push_back(origin[i]);
  }
  return out;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = shape.size();
  std::vector<double> v;
  v.reserve(indices.size() * d);
  for (auto i : indices) {
    const auto s = sample(i);
    v.insert(v.end(), s.begin(), s.end());
  }
  return Tensor({indices.size(), d}, std::move(v));
}

Tensor Dataset::all_inputs() const { return Tensor({size(), shape.size()}, inputs); }

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (auto y : labels) ++counts[y];
  return counts;
}

void SplitRatios::validate() const {
  for (double r : {train, test, generation, validation})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0,1]");
  if (std::abs(train + test + generation + validation - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
}

namespace {

std::array<double, 4> as_array(const SplitRatios& r) {
  return {r.train, r.test, r.generation, r.validation};
}

// n * r with products that land within rounding noise of an integer snapped
// to it, so that class-level and global floors agree.
double ideal_count(std::size_t n, double r) {
  const double x = static_cast<double>(n) * r;
  const double nearest = std::round(x);
  return std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : x;
}

// Distributes `total` over cells proportional to `ideal` (which sums to
// total): floors first, then one extra unit to the largest remainders.
std::vector<std::size_t> largest_remainder(const std::vector<double>& ideal, std::size_t total) {
  std::vector<std::size_t> out(ideal.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ideal.size(); ++i) assigned += out[i] = std::floor(ideal[i]);
  std::vector<std::size_t> order(ideal.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[order[i % order.size()]];
  return out;
}

// Rounds the class x split matrix of ideal counts so that rows sum to the
// class sizes and columns to the split sizes, each cell being the floor or
// the ceiling of its ideal. Solved as a unit-capacity flow from classes to
// splits over the cells' leftover units.
std::vector<std::array<std::size_t, 4>> stratify(const std::vector<std::size_t>& class_sizes,
                                                 const std::array<double, 4>& ratios,
                                                 const std::vector<std::size_t>& totals) {
  const std::size_t k = class_sizes.size();
  std::vector<std::array<std::size_t, 4>> cells(k);
  std::vector<std::array<double, 4>> frac(k);
  std::vector<std::size_t> row_left(k);
  std::array<std::size_t, 4> col_left{};
  for (std::size_t s = 0; s < 4; ++s) col_left[s] = totals[s];
  for (std::size_t c = 0; c < k; ++c) {
    row_left[c] = class_sizes[c];
    for (std::size_t s = 0; s < 4; ++s) {
      const double ideal = ideal_count(class_sizes[c], ratios[s]);
      cells[c][s] = static_cast<std::size_t>(std::floor(ideal));
      frac[c][s] = ideal - std::floor(ideal);
      row_left[c] -= cells[c][s];
      if (col_left[s] < cells[c][s]) throw Error("stratified split: class floors exceed a split");
      col_left[s] -= cells[c][s];
    }
  }

  // Nodes: 0 source, 1..k classes, k+1..k+4 splits, k+5 sink.
  const std::size_t n = k + 6, src = 0, sink = k + 5;
  std::vector<std::vector<long>> cap(n, std::vector<long>(n, 0));
  for (std::size_t c = 0; c < k; ++c) {
    cap[src][1 + c] = static_cast<long>(row_left[c]);
    for (std::size_t s = 0; s < 4; ++s)
      if (ratios[s] > 0.0) cap[1 + c][k + 1 + s] = 1;
  }
  for (std::size_t s = 0; s < 4; ++s) cap[k + 1 + s][sink] = static_cast<long>(col_left[s]);

  // Greedy pass by descending remainder, then augmenting paths for the rest.
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t s = 0; s < 4; ++s) order.emplace_back(c, s);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return frac[a.first][a.second] > frac[b.first][b.second];
  });
  const auto push = [&](std::size_t u, std::size_t v) {
    --cap[u][v];
    ++cap[v][u];
  };
  for (auto [c, s] : order) {
    const std::size_t u = 1 + c, v = k + 1 + s;
    if (cap[src][u] > 0 && cap[u][v] > 0 && cap[v][sink] > 0) {
      push(src, u);
      push(u, v);
      push(v, sink);
    }
  }
  while (true) {
    std::vector<long> parent(n, -1);
    parent[src] = static_cast<long>(src);
    std::queue<std::size_t> q;
    q.push(src);
    while (!q.empty() && parent[sink] < 0) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n; ++v)
        if (parent[v] < 0 && cap[u][v] > 0) {
          parent[v] = static_cast<long>(u);
          q.push(v);
        }
    }
    if (parent[sink] < 0) break;
    for (std::size_t v = sink; v != src; v = static_cast<std::size_t>(parent[v]))
      push(static_cast<std::size_t>(parent[v]), v);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (cap[src][1 + c] != 0) throw Error("stratified split: no consistent rounding exists");
    for (std::size_t s = 0; s < 4; ++s)
      if (ratios[s] > 0.0 && cap[1 + c][k + 1 + s] == 0) ++cells[c][s];
  }
  return cells;
}

}  // namespace

std::vector<std::size_t> split_sizes(std::size_t n, const SplitRatios& ratios) {
  ratios.validate();
  std::vector<double> ideal;
  for (double r : as_array(ratios)) ideal.push_back(ideal_count(n, r));
  return largest_remainder(ideal, n);
}

Splits split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed) {
  data.validate();
  const auto totals = split_sizes(data.size(), ratios);
  std::vector<std::vector<std::size_t>> members(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) members[data.labels[i]].push_back(i);
  std::vector<std::size_t> class_sizes;
  for (const auto& m : members) class_sizes.push_back(m.size());
  const auto cells = stratify(class_sizes, as_array(ratios), totals);

  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 4> chosen;
  for (std::size_t c = 0; c < data.classes; ++c) {
    auto& m = members[c];
    std::shuffle(m.begin(), m.end(), rng);
    std::size_t at = 0;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t j = 0; j < cells[c][s]; ++j) chosen[s].push_back(m[at++]);
  }
  for (auto& c : chosen) std::sort(c.begin(), c.end());
  return {data.subset(chosen[0]), data.subset(chosen[1]), data.subset(chosen[2]),
          data.subset(chosen[3])};
}

Dataset take_stratified(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n > data.size()) throw ShapeError("take_stratified: asked for more samples than exist");
  const double r = static_cast<double>(n) / static_cast<double>(data.size());
  SplitRatios ratios{r, 1.0 - r, 0.0, 0.0};
  auto parts = split(data, ratios, seed);
  if (parts.train.size() != n) throw Error("take_stratified: rounding missed the target size");
  return parts.train;
}

void AugmentConfig::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip probability outside [0,1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
}

namespace {

std::vector<double> one_view(std::span<const double> x, const SampleShape& shape,
                             const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (shape.is_image()) {
    const std::size_t ch = shape.channels, h = shape.height, w = shape.width;
    const long p = static_cast<long>(cfg.crop_padding);
    long dy = 0, dx = 0;
    if (p > 0) {
      std::uniform_int_distribution<long> off(-p, p);
      dy = off(rng);
      dx = off(rng);
    }
    bool flip = false;
    if (cfg.flip_prob > 0.0) flip = std::bernoulli_distribution(cfg.flip_prob)(rng);
    if (dy != 0 || dx != 0 || flip) {
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xo = 0; xo < w; ++xo) {
            const long sx0 = flip ? static_cast<long>(w - 1 - xo) : static_cast<long>(xo);
            const long sy = static_cast<long>(y) + dy, sx = sx0 + dx;
            const bool inside =
                sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
            out[(c * h + y) * w + xo] = inside ? x[(c * h + sy) * w + sx] : 0.0;
          }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  return out;
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> augment_pair(std::span<const double> x,
                                                                 const SampleShape& shape,
                                                                 const AugmentConfig& cfg,
                                                                 std::uint64_t call_index) {
  cfg.validate();
  if (x.size() != shape.size()) throw ShapeError("augment_pair: sample does not match its shape");
  std::mt19937_64 rng(mix_seed(cfg.seed, call_index));
  auto a = one_view(x, shape, cfg, rng);
  auto b = one_view(x, shape, cfg, rng);
  return {std::move(a), std::move(b)};
}

Tensor augment_batch(const Dataset& data, std::span<const std::size_t> indices,
                     const AugmentConfig& cfg, std::uint64_t first_call) {
  const std::size_t d = data.shape.size(), b = indices.size();
  std::vector<double> v(2 * b * d);
  for (std::size_t i = 0; i < b; ++i) {
    auto [x1, x2] = augment_pair(data.sample(indices[i]), data.shape, cfg, first_call + i);
    std::copy(x1.begin(), x1.end(), v.begin() + i * d);
    std::copy(x2.begin(), x2.end(), v.begin() + (b + i) * d);
  }
  return Tensor({2 * b, d}, std::move(v));
}

std::vector<double> replicate_channels(std::span<const double> x, const SampleShape& shape) {
  if (!shape.is_image()) throw ShapeError("replicate_channels needs image samples");
  if (x.size() != shape.size()) throw ShapeError("replicate_channels: sample size mismatch");
  if (shape.channels == 3) return {x.begin(), x.end()};
  if (shape.channels != 1)
    throw ShapeError("replicate_channels expects 1 or 3 channels, got " +
                     std::to_string(shape.channels));
  std::vector<double> out;
  out.reserve(3 * x.size());
  for (int c = 0; c < 3; ++c) out.insert(out.end(), x.begin(), x.end());
  return out;
}

Dataset replicate_channels(const Dataset& data) {
  Dataset out = data;
  if (data.shape.is_image() && data.shape.channels == 3) return out;
  out.inputs.clear();
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto v = replicate_channels(data.sample(i), data.shape);
    out.inputs.insert(out.inputs.end(), v.begin(), v.end());
  }
  out.shape.channels = 3;
  return out;
}

std::vector<std::vector<double>> blob_centers(const BlobsConfig& cfg) {
  if (cfg.classes < 2 || cfg.dim == 0) throw ConfigError("blobs need at least 2 classes and d > 0");
  if (!(cfg.spread >= 0.0)) throw ConfigError("blobs spread must be non-negative");
  std::mt19937_64 rng(mix_seed(cfg.seed, 0));
  std::uniform_real_distribution<double> u(0.1, 0.9);
  const double min_dist = 4.0 * cfg.spread;
  std::vector<std::vector<double>> centers;
  for (int attempt = 0; centers.size() < cfg.classes; ++attempt) {
    if (attempt > 100000)
      throw ConfigError("blobs: cannot place centres " + format_double(min_dist) + " apart");
    std::vector<double> c(cfg.dim);
    for (auto& v : c) v = u(rng);
    const bool far = std::all_of(centers.begin(), centers.end(), [&](const auto& o) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.dim; ++j) s += (c[j] - o[j]) * (c[j] - o[j]);
      return std::sqrt(s) >= min_dist;
    });
    if (far) centers.push_back(std::move(c));
  }
  return centers;
}

Dataset make_blobs(const BlobsConfig& cfg) {
  const auto centers = blob_centers(cfg);
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset out;
  out.shape = SampleShape::vector(cfg.dim);
  out.classes = cfg.classes;
  for (std::size_t k = 0; k < cfg.classes; ++k)
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      for (std::size_t j = 0; j < cfg.dim; ++j)
        out.inputs.push_back(std::clamp(centers[k][j] + cfg.spread * noise(rng), 0.0, 1.0));
      out.origin.push_back(out.labels.size());
      out.labels.push_back(k);
    }
  return out;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t at, const char* what) {
  if (bytes.size() < at + 4) throw FormatError(std::string(what) + ": truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

}  // namespace

Dataset parse_idx(const std::string& images, const std::string& labels) {
  if (read_be32(images, 0, "images") != 0x00000803)
    throw FormatError("images: bad IDX magic (expected 0x00000803)");
  if (read_be32(labels, 0, "labels") != 0x00000801)
    throw FormatError("labels: bad IDX magic (expected 0x00000801)");
  const std::size_t n = read_be32(images, 4, "images");
  const std::size_t rows = read_be32(images, 8, "images");
  const std::size_t cols = read_be32(images, 12, "images");
  const std::size_t nl = read_be32(labels, 4, "labels");
  if (n != nl)
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images, " +
                      std::to_string(nl) + " labels");
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("IDX file holds no samples");
  if (images.size() != 16 + n * rows * cols)
    throw FormatError("images: payload is " + std::to_string(images.size() - 16) +
                      " bytes, header promises " + std::to_string(n * rows * cols));
  if (labels.size() != 8 + n)
    throw FormatError("labels: payload does not match the header count");

  Dataset out;
  out.shape = SampleShape::image(1, rows, cols);
  out.inputs.reserve(n * rows * cols);
  for (std::size_t i = 16; i < images.size(); ++i)
    out.inputs.push_back(static_cast<unsigned char>(images[i]) / 255.0);
  std::size_t top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<unsigned char>(labels[8 + i]);
    out.labels.push_back(y);
    out.origin.push_back(i);
    top = std::max(top, y);
  }
  out.classes = top + 1;
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(read_file(images), read_file(labels));
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out = to_string(data.shape) + "\n";
  const std::size_t d = data.shape.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out += format_double(data.inputs[i * d + j]) + ",";
    out += std::to_string(data.labels[i]) + "\n";
  }
  return out;
}

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw FormatError("dataset CSV: missing header");
  const auto header = split(line, ',');
  Dataset out;
  if (header.size() == 1) out.shape = SampleShape::vector(parse_size(header[0]));
  else if (header.size() == 3)
    out.shape = SampleShape::image(parse_size(header[0]), parse_size(header[1]),
                                   parse_size(header[2]));
  else throw FormatError("dataset CSV header must be 'd' or 'C,H,W'");
  const std::size_t d = out.shape.size();
  if (d == 0) throw FormatError("dataset CSV: empty sample shape");
  std::size_t top = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != d + 1)
      throw FormatError("dataset CSV line " + std::to_string(line_no) + ": expected " +
                        std::to_string(d + 1) + " cells, got " + std::to_string(cells.size()));
    for (std::size_t j = 0; j < d; ++j) out.inputs.push_back(parse_double(cells[j]));
    const std::size_t y = parse_size(cells[d]);
    top = std::max(top, y);
    out.origin.push_back(out.labels.size());
    out.labels.push_back(y);
  }
  if (out.labels.empty()) throw FormatError("dataset CSV holds no samples");
  out.classes = top + 1;
  out.validate();
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file(path, dataset_to_csv(data));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_csv(read_file(path));
}

}  // namespace acl

#include "acl/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "acl/error.hpp"
#include "acl/textio.hpp"

namespace acl {

std::string to_string(CodebookSource source) {
  switch (source) {
    case CodebookSource::generated: return "generated";
    case CodebookSource::loaded: return "loaded";
    case CodebookSource::fixed_binary: return "fixed-binary";
  }
  return "unknown";
}

Codebook::Codebook(std::size_t classes, std::size_t length, std::vector<double> rows,
                   CodebookSource source)
    : classes_(classes), length_(length), rows_(std::move(rows)), source_(source) {
  if (classes_ == 0 || length_ == 0)
    throw ShapeError("codebook needs at least one class and one bit");
  if (rows_.size() != classes_ * length_)
    throw ShapeError("codebook " + std::to_string(classes_) + "x" +
                     std::to_string(length_) + " given " + std::to_string(rows_.size()) +
                     " entries");
  for (double v : rows_)
    if (!std::isfinite(v)) throw NumericError("codebook entry is not finite");
  if (source_ == CodebookSource::fixed_binary && !is_binary())
    throw FormatError("fixed-binary codebook holds a value other than 0 or 1");
}

std::span<const double> Codebook::row(std::size_t k) const {
  if (k >= classes_) throw ShapeError("codebook row out of range");
  return std::span(rows_).subspan(k * length_, length_);
}

bool Codebook::is_binary() const {
  return std::all_of(rows_.begin(), rows_.end(),
                     [](double v) { return v == 0.0 || v == 1.0; });
}

Tensor Codebook::as_tensor() const { return Tensor::matrix(classes_, length_, rows_); }

std::uint64_t Codebook::hash() const {
  std::uint64_t h = fnv1a(&classes_, sizeof classes_);
  h = fnv1a(&length_, sizeof length_, h);
  return fnv1a(rows_.data(), rows_.size() * sizeof(double), h);
}

Tensor class_means(const Tensor& codewords, std::span<const std::size_t> labels,
                   std::size_t classes) {
  const std::size_t n = codewords.rows();
  if (labels.size() != n)
    throw ShapeError("class_means: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " codewords");
  std::vector<std::size_t> counts(classes, 0);
  for (auto y : labels) {
    if (y >= classes) throw ShapeError("class_means: label out of range");
    ++counts[y];
  }
  for (std::size_t k = 0; k < classes; ++k)
    if (counts[k] == 0)
      throw ShapeError("class " + std::to_string(k) + " has no instances");
  std::vector<double> averaging(classes * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    averaging[labels[i] * n + i] = 1.0 / static_cast<double>(counts[labels[i]]);
  return matmul(Tensor::matrix(classes, n, std::move(averaging)), codewords);
}

Codebook generate_codebook(const Tensor& codewords, std::span<const std::size_t> labels,
                           std::size_t classes) {
  NoGradGuard no_grad;
  const Tensor means = class_means(codewords, labels, classes);
  const std::size_t len = codewords.cols();
  const auto v = means.values();
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b) {
      double diff = 0.0;
      for (std::size_t j = 0; j < len; ++j)
        diff = std::max(diff, std::abs(v[a * len + j] - v[b * len + j]));
      if (diff < kDuplicateRowTolerance)
        throw Error("generated codebook rows " + std::to_string(a) + " and " +
                    std::to_string(b) + " are identical");
    }
  return Codebook(classes, len, {v.begin(), v.end()}, CodebookSource::generated);
}

HammingDecision hamming_decode(std::span<const std::uint8_t> predicted,
                               const Codebook& book) {
  if (predicted.size() != book.length())
    throw ShapeError("hamming_decode: codeword length " + std::to_string(predicted.size()) +
                     " vs codebook length " + std::to_string(book.length()));
  if (!book.is_binary()) throw DomainError("hamming_decode needs a binary codebook");
  for (auto bit : predicted)
    if (bit > 1) throw DomainError("hamming_decode: predicted bits must be 0 or 1");
  HammingDecision d;
  d.distances.resize(book.classes());
  for (std::size_t k = 0; k < book.classes(); ++k) {
    std::size_t dist = 0;
    for (std::size_t j = 0; j < book.length(); ++j)
      dist += (book.at(k, j) == 1.0) != (predicted[j] == 1);
    d.distances[k] = dist;
    if (k == 0 || dist < d.distance) {
      d.distance = dist;
      d.label = k;
    }
  }
  return d;
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine of a zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

CosineDecision cosine_decode(std::span<const double> predicted, const Codebook& book) {
  if (predicted.size() != book.length())
    throw ShapeError("cosine_decode: codeword length mismatch");
  if (norm(predicted) == 0.0) throw DomainError("cosine_decode: zero-norm codeword");
  CosineDecision d;
  std::vector<double> sims(book.classes());
  for (std::size_t k = 0; k < book.classes(); ++k) sims[k] = cosine(predicted, book.row(k));
  const double hi = *std::max_element(sims.begin(), sims.end());
  double total = 0.0;
  d.probabilities.resize(sims.size());
  for (std::size_t k = 0; k < sims.size(); ++k)
    total += d.probabilities[k] = std::exp(sims[k] - hi);
  for (auto& p : d.probabilities) p /= total;
  d.label = static_cast<std::size_t>(std::max_element(sims.begin(), sims.end()) - sims.begin());
  return d;
}

Codebook binarize(const Codebook& book, BinarizeRule rule) {
  const std::size_t k = book.classes(), n = book.length();
  std::vector<double> out(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    double cut = rule.threshold;
    if (rule.kind == BinarizeRule::Kind::column_median) {
      std::vector<double> column(k);
      for (std::size_t r = 0; r < k; ++r) column[r] = book.at(r, j);
      cut = median(std::move(column));
    }
    for (std::size_t r = 0; r < k; ++r) out[r * n + j] = book.at(r, j) > cut ? 1.0 : 0.0;
  }
  return Codebook(k, n, std::move(out), CodebookSource::fixed_binary);
}

SeparationReport separation_report(const Codebook& book) {
  const std::size_t k = book.classes(), n = book.length();
  if (k < 2) throw ShapeError("separation_report needs at least two classes");
  const Codebook bits = book.is_binary() ? book : binarize(book);

  SeparationReport r;
  r.min_pairwise_hamming = n + 1;
  std::size_t pairs = 0, cosine_pairs = 0;
  double min_distance = 2.0, max_cos = -1.0, sum_distance = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b, ++pairs) {
      std::size_t h = 0;
      for (std::size_t j = 0; j < n; ++j) h += bits.at(a, j) != bits.at(b, j);
      r.min_pairwise_hamming = std::min(r.min_pairwise_hamming, h);
      r.mean_pairwise_hamming += static_cast<double>(h);
      if (norm(book.row(a)) == 0.0 || norm(book.row(b)) == 0.0) continue;
      const double c = cosine(book.row(a), book.row(b));
      max_cos = std::max(max_cos, c);
      min_distance = std::min(min_distance, 1.0 - c);
      sum_distance += 1.0 - c;
      ++cosine_pairs;
    }
  r.mean_pairwise_hamming /= static_cast<double>(pairs);
  if (cosine_pairs) {
    r.max_pairwise_cosine = max_cos;
    r.min_pairwise_cosine_distance = min_distance;
    r.mean_pairwise_cosine_distance = sum_distance / static_cast<double>(cosine_pairs);
  } else {
    r.max_pairwise_cosine = r.min_pairwise_cosine_distance = r.mean_pairwise_cosine_distance =
        std::numeric_limits<double>::quiet_NaN();
  }

  // Column correlation over the class axis.
  std::vector<std::vector<double>> centered;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> col(k);
    double mu = 0.0;
    for (std::size_t i = 0; i < k; ++i) mu += col[i] = book.at(i, j);
    mu /= static_cast<double>(k);
    for (auto& v : col) v -= mu;
    if (norm(col) > 0.0) centered.push_back(std::move(col));
  }
  std::size_t col_pairs = 0;
  for (std::size_t a = 0; a < centered.size(); ++a)
    for (std::size_t b = a + 1; b < centered.size(); ++b, ++col_pairs)
      r.mean_column_correlation += std::abs(cosine(centered[a], centered[b]));
  if (col_pairs) r.mean_column_correlation /= static_cast<double>(col_pairs);
  return r;
}

std::string codebook_to_csv(const Codebook& book) {
  std::string out = std::to_string(book.classes()) + "," + std::to_string(book.length()) + "\n";
  for (std::size_t k = 0; k < book.classes(); ++k) {
    for (std::size_t j = 0; j < book.length(); ++j) {
      if (j) out += ',';
      out += format_double(book.at(k, j));
    }
    out += '\n';
  }
  return out;
}

Codebook codebook_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw FormatError("codebook file is empty");
  const auto header = split(line, ',');
  if (header.size() != 2) throw FormatError("codebook header must be 'K,n'");
  const std::size_t k = parse_size(header[0]), n = parse_size(header[1]);
  std::vector<double> rows;
  rows.reserve(k * n);
  for (std::size_t r = 0; r < k; ++r) {
    if (!std::getline(in, line))
      throw FormatError("codebook file truncated: expected " + std::to_string(k) +
                        " rows, found " + std::to_string(r));
    const auto cells = split(line, ',');
    if (cells.size() != n)
      throw FormatError("codebook row " + std::to_string(r) + " has " +
                        std::to_string(cells.size()) + " entries, expected " +
                        std::to_string(n));
    for (const auto& c : cells) rows.push_back(parse_double(c));
  }
  while (std::getline(in, line))
    if (!trim(line).empty()) throw FormatError("codebook file has extra rows");
  return Codebook(k, n, std::move(rows), CodebookSource::loaded);
}

void save_codebook(const Codebook& book, const std::filesystem::path& path) {
  write_file(path, codebook_to_csv(book));
}

Codebook load_codebook(const std::filesystem::path& path) {
  return codebook_from_csv(read_file(path));
}

}  // namespace acl

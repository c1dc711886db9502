#include "lace/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lace {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > b.size())
    throw FormatError(path + ": truncated at offset " + std::to_string(offset));
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(bytes, 4);
}

char hexdigit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(std::uint32_t v) {
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += hexdigit(v >> shift);
  return s;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImagesMagic)
    throw FormatError(images_path + ": bad magic at offset 0: expected " +
                      hex32(kIdxImagesMagic) + ", got " + hex32(img_magic));
  const std::uint32_t n = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::size_t expect = 16 + std::size_t(n) * rows * cols;
  if (img.size() < expect)
    throw FormatError(images_path + ": truncated at offset " +
                      std::to_string(img.size()) + " (need " + std::to_string(expect) +
                      " bytes)");

  const auto lab = read_file(labels_path);
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelsMagic)
    throw FormatError(labels_path + ": bad magic at offset 0: expected " +
                      hex32(kIdxLabelsMagic) + ", got " + hex32(lab_magic));
  const std::uint32_t ln = read_be32(lab, 4, labels_path);
  if (lab.size() < 8 + std::size_t(ln))
    throw FormatError(labels_path + ": truncated at offset " +
                      std::to_string(lab.size()));
  if (ln != n)
    throw std::invalid_argument("idx: image count " + std::to_string(n) +
                                " != label count " + std::to_string(ln));

  Dataset ds;
  ds.img_c = 1;
  ds.img_h = rows;
  ds.img_w = cols;
  ds.features = Matrix(n, std::size_t(rows) * cols);
  for (std::size_t i = 0; i < std::size_t(n) * rows * cols; ++i)
    ds.features.span()[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::size_t(max_label) + 1;
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels,
               std::size_t rows, std::size_t cols) {
  if (pixels.size() != labels.size() * rows * cols)
    throw std::invalid_argument("write_idx: pixel buffer does not match label count");
  std::ofstream img(images_path, std::ios::binary);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, std::uint32_t(labels.size()));
  write_be32(img, std::uint32_t(rows));
  write_be32(img, std::uint32_t(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));

  std::ofstream lab(labels_path, std::ios::binary);
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, std::uint32_t(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  std::vector<std::uint8_t> all;
  for (const std::string& path : batch_paths) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0)
      throw FormatError(path + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecord));
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const std::size_t n = all.size() / kCifarRecord;

  Dataset ds;
  ds.img_c = 3;
  ds.img_h = 32;
  ds.img_w = 32;
  ds.num_classes = 10;
  ds.augment = AugmentKind::cifar;
  ds.features = Matrix(n, 3072);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = all[i * kCifarRecord];
    if (label >= 10)
      throw FormatError("cifar10: record " + std::to_string(i) + " has label " +
                        std::to_string(label) + " >= 10");
    ds.labels[i] = label;
    const std::uint8_t* px = all.data() + i * kCifarRecord + 1;
    for (std::size_t j = 0; j < 3072; ++j) ds.features(i, j) = px[j] / 255.0;
  }
  return ds;
}

void write_cifar10_bin(const std::string& path, const std::vector<std::uint8_t>& records) {
  if (records.size() % kCifarRecord != 0)
    throw std::invalid_argument("write_cifar10_bin: buffer is not whole records");
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(records.data()), std::streamsize(records.size()));
}

Dataset make_blobs(const BlobSpec& spec) {
  if (spec.classes == 0 || spec.per_class == 0 || spec.dim == 0)
    throw std::invalid_argument("make_blobs: empty spec");
  if (spec.means.rows() != spec.classes || spec.means.cols() != spec.dim)
    throw std::invalid_argument("make_blobs: means must be classes x dim");
  const Matrix chol = cholesky(spec.cov);  // throws if not SPD

  Dataset ds;
  ds.num_classes = spec.classes;
  ds.features = Matrix(spec.classes * spec.per_class, spec.dim);
  ds.labels.resize(spec.classes * spec.per_class);

  Rng rng(spec.seed);
  Vector g(spec.dim);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
      for (std::size_t j = 0; j < spec.dim; ++j) g[j] = rng.gaussian();
      for (std::size_t j = 0; j < spec.dim; ++j) {
        double acc = spec.means(c, j);
        for (std::size_t k = 0; k <= j; ++k) acc += chol(j, k) * g[k];
        ds.features(row, j) = acc;
      }
      ds.labels[row] = int(c);
    }
  }
  return ds;
}

SplitIndices stratified_split(const std::vector<int>& labels, std::size_t num_classes,
                              double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("stratified_split: val_fraction must be in (0,1)");

  std::vector<std::vector<std::size_t>> per_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    per_class.at(std::size_t(labels[i])).push_back(i);

  Rng rng(seed);
  SplitIndices out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = per_class[c];
    if (idx.size() < 2)
      throw std::invalid_argument("stratified_split: class " + std::to_string(c) +
                                  " has fewer than 2 samples");
    rng.shuffle(idx);
    std::size_t n_val = std::size_t(std::llround(val_fraction * double(idx.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? out.val : out.train).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

ChannelStats compute_channel_stats(const Dataset& ds,
                                   const std::vector<std::size_t>& indices) {
  const std::size_t channels = ds.img_c > 0 ? ds.img_c : 1;
  const std::size_t per_channel = ds.dim() / channels;

  ChannelStats s;
  s.mean.assign(channels, 0.0);
  s.stdev.assign(channels, 0.0);
  const double count = double(indices.size()) * double(per_channel);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i : indices) {
      const double* row = ds.features.row(i) + c * per_channel;
      for (std::size_t j = 0; j < per_channel; ++j) acc += row[j];
    }
    s.mean[c] = acc / count;
    double var = 0.0;
    for (std::size_t i : indices) {
      const double* row = ds.features.row(i) + c * per_channel;
      for (std::size_t j = 0; j < per_channel; ++j) {
        const double d = row[j] - s.mean[c];
        var += d * d;
      }
    }
    s.stdev[c] = std::sqrt(var / count);
  }
  return s;
}

void apply_channel_stats(Dataset& ds, const ChannelStats& stats) {
  const std::size_t channels = ds.img_c > 0 ? ds.img_c : 1;
  const std::size_t per_channel = ds.dim() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const double m = stats.mean[c];
    const double inv = 1.0 / std::max(stats.stdev[c], 1e-12);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double* row = ds.features.row(i) + c * per_channel;
      for (std::size_t j = 0; j < per_channel; ++j) row[j] = (row[j] - m) * inv;
    }
  }
}

SplitDataset split_and_prepare(const Dataset& train, double val_fraction,
                               std::uint64_t seed) {
  const SplitIndices idx =
      stratified_split(train.labels, train.num_classes, val_fraction, seed);

  SplitDataset out;
  out.num_classes = train.num_classes;
  out.img_c = train.img_c;
  out.img_h = train.img_h;
  out.img_w = train.img_w;
  out.augment = train.augment;
  out.stats = compute_channel_stats(train, idx.train);

  auto gather = [&](const std::vector<std::size_t>& rows, Matrix& x,
                    std::vector<int>& y) {
    x = Matrix(rows.size(), train.dim());
    y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* src = train.features.row(rows[i]);
      std::copy(src, src + train.dim(), x.row(i));
      y[i] = train.labels[rows[i]];
    }
  };
  gather(idx.train, out.train_x, out.train_y);
  gather(idx.val, out.val_x, out.val_y);

  const std::size_t channels = out.img_c > 0 ? out.img_c : 1;
  const std::size_t per_channel = train.dim() / channels;
  auto normalize_rows = [&](Matrix& x) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double m = out.stats.mean[c];
      const double inv = 1.0 / std::max(out.stats.stdev[c], 1e-12);
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double* row = x.row(i) + c * per_channel;
        for (std::size_t j = 0; j < per_channel; ++j) row[j] = (row[j] - m) * inv;
      }
    }
  };
  normalize_rows(out.train_x);
  normalize_rows(out.val_x);
  return out;
}

void flip_horizontal(double* img, std::size_t c, std::size_t h, std::size_t w) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      double* row = img + (ch * h + y) * w;
      std::reverse(row, row + w);
    }
}

namespace {

// np.pad-style reflect (edge not repeated) for indices in [-pad, n+pad).
inline std::size_t reflect_index(long p, long n) {
  if (p < 0) p = -p;
  if (p >= n) p = 2 * n - 2 - p;
  return std::size_t(p);
}

}  // namespace

Matrix assemble_batch(const SplitDataset& split, const std::vector<std::size_t>& rows,
                      Rng& rng, bool augment_enabled) {
  Matrix batch(rows.size(), split.train_x.cols());
  const bool do_aug = augment_enabled && split.augment == AugmentKind::cifar;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = split.train_x.row(rows[i]);
    double* dst = batch.row(i);
    if (!do_aug) {
      std::copy(src, src + batch.cols(), dst);
      continue;
    }
    const std::size_t h = split.img_h, w = split.img_w, c = split.img_c;
    // pad-4 reflect + random crop
    const long dy = long(rng.index(9)) - 4;
    const long dx = long(rng.index(9)) - 4;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = reflect_index(long(y) + dy, long(h));
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sx = reflect_index(long(x) + dx, long(w));
          dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
        }
      }
    if (rng.uniform() < 0.5) flip_horizontal(dst, c, h, w);
  }
  return batch;
}

void write_labeled_csv(const std::string& path, const Matrix& points,
                       const std::vector<int>& labels) {
  if (points.rows() != labels.size())
    throw std::invalid_argument("write_labeled_csv: row/label count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "label";
  for (std::size_t j = 0; j < points.cols(); ++j) out << ",f" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < points.rows(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < points.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", points(i, j));
      out << ',' << buf;
    }
    out << "\n";
  }
}

LabeledCsv read_labeled_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  if (line.rfind("label", 0) != 0)
    throw FormatError(path + ": missing 'label,f0,...' header");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',')) throw FormatError(path + ": bad row");
    labels.push_back(std::stoi(cell));
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (!rows.empty() && vals.size() != rows.front().size())
      throw FormatError(path + ": ragged row " + std::to_string(rows.size() + 1));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");

  LabeledCsv out;
  out.points = Matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), out.points.row(i));
  out.labels = std::move(labels);
  return out;
}

std::uint64_t dataset_digest(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(ds.features.data(), ds.features.span().size() * sizeof(double));
  mix(ds.labels.data(), ds.labels.size() * sizeof(int));
  return h;
}

}  // namespace lace

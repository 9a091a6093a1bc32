#include "qkd/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "qkd/error.hpp"
#include "qkd/rng.hpp"

namespace qkd {

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t stride = sample_numel();
  std::vector<std::size_t> shape = inputs.shape();
  shape[0] = indices.size();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    for (std::size_t j = 0; j < stride; ++j) out[i * stride + j] = inputs[indices[i] * stride + j];
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::string& buf, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
  return v;
}

// Shared IDX header parse: returns dims, leaves `pos` at the payload.
std::vector<std::size_t> parse_idx_header(const std::string& buf, const std::string& path,
                                          std::size_t& pos) {
  if (buf.size() < 4) throw FormatError("'" + path + "': truncated IDX header at offset 0");
  if (buf[0] != 0 || buf[1] != 0) throw FormatError("'" + path + "': bad IDX magic at offset 0");
  const unsigned char type = static_cast<unsigned char>(buf[2]);
  if (type != 0x08) {
    throw FormatError("'" + path + "': unsupported IDX type byte at offset 2 (want 0x08)");
  }
  const unsigned ndim = static_cast<unsigned char>(buf[3]);
  if (ndim == 0) throw FormatError("'" + path + "': zero-dimensional IDX at offset 3");
  pos = 4;
  std::vector<std::size_t> dims(ndim);
  for (unsigned i = 0; i < ndim; ++i) {
    if (pos + 4 > buf.size()) {
      throw FormatError("'" + path + "': truncated IDX dimension at offset " + std::to_string(pos));
    }
    dims[i] = be32(buf, pos);
    pos += 4;
  }
  std::size_t total = 1;
  for (std::size_t d : dims) total *= d;
  if (pos + total != buf.size()) {
    throw FormatError("'" + path + "': payload length " + std::to_string(buf.size() - pos) +
                      " does not match dims product " + std::to_string(total) + " at offset " +
                      std::to_string(pos));
  }
  return dims;
}

}  // namespace

Tensor load_idx_images(const std::string& path) {
  const std::string buf = slurp(path);
  std::size_t pos = 0;
  std::vector<std::size_t> dims = parse_idx_header(buf, path, pos);
  Tensor out(dims);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(static_cast<unsigned char>(buf[pos + i])) / 255.0;
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const std::string buf = slurp(path);
  std::size_t pos = 0;
  std::vector<std::size_t> dims = parse_idx_header(buf, path, pos);
  if (dims.size() != 1) throw FormatError("'" + path + "': label IDX must be 1-dimensional");
  std::vector<int> labels(dims[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<int>(static_cast<unsigned char>(buf[pos + i]));
  }
  return labels;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths, int num_classes) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const std::string& path : paths) {
    const std::string buf = slurp(path);
    if (buf.size() % kRecord != 0) {
      throw FormatError("'" + path + "': length " + std::to_string(buf.size()) +
                        " is not a multiple of 3073");
    }
    const std::size_t n = buf.size() / kRecord;
    if (n == 0) std::fprintf(stderr, "warning: '%s' holds zero records\n", path.c_str());
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t base = r * kRecord;
      const int label = static_cast<unsigned char>(buf[base]);
      if (label >= num_classes) {
        throw FormatError("'" + path + "': label " + std::to_string(label) + " in record " +
                          std::to_string(r) + " exceeds class count " + std::to_string(num_classes));
      }
      labels.push_back(label);
      for (std::size_t i = 0; i < kPixels; ++i) {
        pixels.push_back(static_cast<double>(static_cast<unsigned char>(buf[base + 1 + i])) / 255.0);
      }
    }
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.labels = std::move(labels);
  if (!ds.labels.empty()) {
    ds.inputs = Tensor({ds.labels.size(), 3, 32, 32}, std::move(pixels));
  }
  return ds;
}

DatasetPair gen_synthetic(const DatasetDescriptor& desc, std::uint64_t seed) {
  if (desc.num_classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (desc.dim < 2) throw ConfigError("synthetic data needs dimension >= 2");
  const int m = desc.num_classes;
  const int d = desc.dim;
  Rng rng(Rng::derive(seed, 0xda7a));

  // Class centers in the unit box; samples are center + isotropic noise.
  std::vector<double> centers(static_cast<std::size_t>(m) * d);
  for (double& c : centers) c = rng.uniform(0.0, 1.0);

  const auto draw = [&](int count) {
    Dataset ds;
    ds.num_classes = m;
    ds.labels.resize(count);
    Tensor x({static_cast<std::size_t>(count), static_cast<std::size_t>(d)});
    for (int i = 0; i < count; ++i) {
      const int y = i % m;  // balanced classes
      ds.labels[i] = y;
      for (int j = 0; j < d; ++j) {
        x[static_cast<std::size_t>(i) * d + j] =
            centers[static_cast<std::size_t>(y) * d + j] + desc.spread * rng.normal();
      }
    }
    ds.inputs = std::move(x);
    return ds;
  };

  DatasetPair pair;
  pair.train = draw(desc.train_samples);
  pair.test = draw(desc.test_samples);
  return pair;
}

namespace {

void apply_norm(Tensor& t, Normalization norm, double a, double b) {
  switch (norm) {
    case Normalization::None:
      return;
    case Normalization::MeanStd: {
      const double inv = b > 0.0 ? 1.0 / b : 1.0;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = (t[i] - a) * inv;
      return;
    }
    case Normalization::MinMax: {
      const double inv = b > a ? 1.0 / (b - a) : 1.0;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = (t[i] - a) * inv;
      return;
    }
  }
}

}  // namespace

DatasetPair load_dataset(DatasetDescriptor& desc) {
  DatasetPair pair;
  switch (desc.kind) {
    case DatasetKind::IdxImages: {
      pair.train.inputs = load_idx_images(desc.train_images);
      pair.train.labels = load_idx_labels(desc.train_labels);
      pair.test.inputs = load_idx_images(desc.test_images);
      pair.test.labels = load_idx_labels(desc.test_labels);
      pair.train.num_classes = pair.test.num_classes = desc.num_classes;
      for (Dataset* ds : {&pair.train, &pair.test}) {
        if (ds->inputs.dim(0) != ds->labels.size()) {
          throw FormatError("image/label count mismatch in IDX dataset");
        }
        for (int y : ds->labels) {
          if (y < 0 || y >= desc.num_classes) throw FormatError("IDX label out of range");
        }
        // N x H x W becomes N x 1 x H x W so convolutions see a channel.
        if (ds->inputs.ndim() == 3) {
          std::vector<std::size_t> s = ds->inputs.shape();
          ds->inputs = Tensor({s[0], 1, s[1], s[2]}, ds->inputs.vec());
        }
      }
      break;
    }
    case DatasetKind::CifarBinary:
      pair.train = load_cifar_binary(desc.train_batches, desc.num_classes);
      pair.test = load_cifar_binary(desc.test_batches, desc.num_classes);
      break;
    case DatasetKind::SyntheticGaussianClusters:
      pair = gen_synthetic(desc, desc.data_seed);
      break;
  }

  // Constants come from the training split only.
  if (desc.norm == Normalization::MeanStd) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pair.train.inputs.size(); ++i) sum += pair.train.inputs[i];
    const double mean = sum / static_cast<double>(pair.train.inputs.size());
    double var = 0.0;
    for (std::size_t i = 0; i < pair.train.inputs.size(); ++i) {
      const double d = pair.train.inputs[i] - mean;
      var += d * d;
    }
    desc.norm_a = mean;
    desc.norm_b = std::sqrt(var / static_cast<double>(pair.train.inputs.size()));
  } else if (desc.norm == Normalization::MinMax) {
    double lo = pair.train.inputs.size() ? pair.train.inputs[0] : 0.0;
    double hi = lo;
    for (std::size_t i = 1; i < pair.train.inputs.size(); ++i) {
      lo = std::min(lo, pair.train.inputs[i]);
      hi = std::max(hi, pair.train.inputs[i]);
    }
    desc.norm_a = lo;
    desc.norm_b = hi;
  }
  apply_norm(pair.train.inputs, desc.norm, desc.norm_a, desc.norm_b);
  apply_norm(pair.test.inputs, desc.norm, desc.norm_a, desc.norm_b);
  return pair;
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::IdxImages: return "idx-images";
    case DatasetKind::CifarBinary: return "cifar-binary";
    case DatasetKind::SyntheticGaussianClusters: return "synthetic-gaussian-clusters";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "idx-images") return DatasetKind::IdxImages;
  if (s == "cifar-binary") return DatasetKind::CifarBinary;
  if (s == "synthetic-gaussian-clusters" || s == "synthetic") {
    return DatasetKind::SyntheticGaussianClusters;
  }
  throw ConfigError("unknown dataset kind '" + s + "'");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::None: return "none";
    case Normalization::MeanStd: return "mean-std";
    case Normalization::MinMax: return "min-max";
  }
  return "?";
}

Normalization parse_normalization(const std::string& s) {
  if (s == "none") return Normalization::None;
  if (s == "mean-std") return Normalization::MeanStd;
  if (s == "min-max") return Normalization::MinMax;
  throw ConfigError("unknown normalization '" + s + "'");
}

}  // namespace qkd

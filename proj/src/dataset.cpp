#include "acraft/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "acraft/rng.hpp"

namespace acraft {

namespace {

constexpr std::array<char, 4> kMagic = {'A', 'F', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 8 + 4 + 1;

DatasetError invalid(const std::string& message) {
  return DatasetError(DatasetErrorKind::invalid_parameters, message);
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

std::uint64_t bits_of(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return bits;
}

double from_bits(std::uint64_t bits) {
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void shuffle(std::vector<std::size_t>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[rng.below(i)]);
  }
}

}  // namespace

std::vector<std::size_t> Dataset::indices_of(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == c) out.push_back(i);
  }
  return out;
}

void validate_dataset(const Dataset& ds) {
  auto fail = [](const std::string& m) {
    return DatasetError(DatasetErrorKind::invariant_violation, m);
  };
  if (ds.class_count == 0) throw fail("class count must be positive");
  if (ds.features.rank() != 2) throw fail("features must be a matrix");
  if (ds.features.rows() != ds.labels.size()) throw fail("feature rows and label count differ");
  std::vector<std::size_t> counts(ds.class_count, 0);
  for (int y : ds.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= ds.class_count) {
      throw DatasetError(DatasetErrorKind::label_out_of_range,
                         "label " + std::to_string(y) + " outside class count " +
                             std::to_string(ds.class_count));
    }
    ++counts[y];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw fail("class " + std::to_string(c) + " has no samples");
  }
  for (double v : ds.features.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw fail("feature outside the unit box");
  }
}

Dataset make_synthetic(std::size_t classes, std::size_t per_class, std::size_t d,
                       double separation, std::uint64_t seed) {
  if (classes < 2) throw invalid("need at least two classes");
  if (per_class == 0) throw invalid("need at least one sample per class");
  if (d == 0) throw invalid("dimension must be positive");
  if (!std::isfinite(separation) || separation < 0.0) throw invalid("separation must be >= 0");

  Rng rng(seed);
  const double min_gap = separation * kSyntheticNoise;
  const double half_width = std::min(0.4, 0.5 * min_gap + 1e-3);

  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> best;
    double best_gap = -1.0;
    for (int attempt = 0; attempt < 256; ++attempt) {
      std::vector<double> candidate(d);
      for (double& v : candidate) v = rng.uniform(0.5 - half_width, 0.5 + half_width);
      double gap = std::numeric_limits<double>::infinity();
      for (const auto& other : centers) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) d2 += (candidate[k] - other[k]) * (candidate[k] - other[k]);
        gap = std::min(gap, std::sqrt(d2));
      }
      if (gap > best_gap) {
        best_gap = gap;
        best = std::move(candidate);
      }
      if (best_gap >= min_gap) break;
    }
    centers.push_back(std::move(best));
  }

  Dataset ds;
  ds.class_count = classes;
  ds.features = Tensor::matrix(classes * per_class, d);
  ds.labels.reserve(classes * per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++r) {
      auto row = ds.features.row(r);
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = std::clamp(centers[c][k] + kSyntheticNoise * rng.normal(), 0.0, 1.0);
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

void save_binary(const Dataset& ds, const std::filesystem::path& path, StorageType dtype) {
  validate_dataset(ds);
  std::string out;
  out.append(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, ds.size());
  put_le<std::uint64_t>(out, ds.dim());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.class_count));
  out.push_back(static_cast<char>(dtype));
  for (double v : ds.features.values()) {
    if (dtype == StorageType::f64) {
      put_le<std::uint64_t>(out, bits_of(v));
    } else {
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  }
  for (int y : ds.labels) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(y));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DatasetError(DatasetErrorKind::io_failure, "cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw DatasetError(DatasetErrorKind::io_failure, "short write to " + path.string());
}

Dataset load_binary(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DatasetError(DatasetErrorKind::missing_file, "cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  if (in.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), in.begin())) {
    throw DatasetError(DatasetErrorKind::bad_magic, path.string() + ": not an AFDS file");
  }
  if (in.size() < kHeaderSize) {
    throw DatasetError(DatasetErrorKind::truncated, path.string() + ": truncated header");
  }
  const auto version = get_le<std::uint32_t>(in, 4);
  if (version != kFormatVersion) {
    throw DatasetError(DatasetErrorKind::unsupported_version,
                       "unsupported AFDS version " + std::to_string(version));
  }
  const auto n = get_le<std::uint64_t>(in, 8);
  const auto d = get_le<std::uint64_t>(in, 16);
  const auto class_count = get_le<std::uint32_t>(in, 24);
  const auto dtype = static_cast<std::uint8_t>(in[28]);
  if (dtype > 1) throw DatasetError(DatasetErrorKind::bad_magic, "unknown dtype tag");
  if (n == 0 || d == 0) throw DatasetError(DatasetErrorKind::invariant_violation, "empty dataset");

  const std::uint64_t width = dtype == 0 ? 8 : 1;
  // Guard the multiplications before trusting header sizes.
  const std::uint64_t remaining = in.size() - kHeaderSize;
  if (n > remaining || d > remaining / n || n * d > remaining / width ||
      remaining - n * d * width < 4 * n) {
    throw DatasetError(DatasetErrorKind::truncated,
                       path.string() + ": payload shorter than header declares");
  }

  Dataset ds;
  ds.class_count = class_count;
  std::vector<double> values(n * d);
  std::size_t offset = kHeaderSize;
  for (std::uint64_t i = 0; i < n * d; ++i) {
    if (dtype == 0) {
      values[i] = from_bits(get_le<std::uint64_t>(in, offset));
      offset += 8;
    } else {
      values[i] = static_cast<double>(static_cast<unsigned char>(in[offset])) / 255.0;
      offset += 1;
    }
  }
  ds.features = Tensor({n, d}, std::move(values));
  ds.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i, offset += 4) {
    const auto y = get_le<std::uint32_t>(in, offset);
    if (y >= class_count) {
      throw DatasetError(DatasetErrorKind::label_out_of_range,
                         "label " + std::to_string(y) + " outside class count " +
                             std::to_string(class_count));
    }
    ds.labels[i] = static_cast<int>(y);
  }
  validate_dataset(ds);
  return ds;
}

void export_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw DatasetError(DatasetErrorKind::io_failure, "cannot write " + path.string());
  file << "label";
  for (std::size_t k = 0; k < ds.dim(); ++k) file << ",f" << k;
  file << '\n';
  file.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    file << ds.labels[i];
    for (double v : ds.features.row(i)) file << ',' << v;
    file << '\n';
  }
}

std::vector<std::size_t> SessionSplit::test_pool(std::size_t session) const {
  if (session > sessions.size()) throw std::out_of_range("session index beyond split");
  std::vector<std::size_t> pool = base_test;
  for (std::size_t s = 0; s < session; ++s) {
    pool.insert(pool.end(), sessions[s].test.begin(), sessions[s].test.end());
  }
  return pool;
}

std::vector<int> SessionSplit::seen_classes(std::size_t session) const {
  if (session > sessions.size()) throw std::out_of_range("session index beyond split");
  std::vector<int> seen = base_classes;
  for (std::size_t s = 0; s < session; ++s) {
    seen.insert(seen.end(), sessions[s].classes.begin(), sessions[s].classes.end());
  }
  return seen;
}

std::uint64_t SessionSplit::fingerprint() const {
  std::ostringstream text;
  auto dump = [&text](const auto& values) {
    for (auto v : values) text << v << ',';
    text << ';';
  };
  dump(base_classes);
  dump(base_train);
  dump(base_test);
  for (const auto& s : sessions) {
    dump(s.classes);
    dump(s.train);
    dump(s.test);
  }
  text << shots << ':' << ways;
  return fnv1a(text.str());
}

SessionSplit build_splits(const Dataset& ds, std::size_t base_classes, std::size_t sessions,
                          std::size_t ways, std::size_t shots, std::size_t test_per_class,
                          std::uint64_t seed) {
  if (base_classes == 0) throw invalid("need at least one base class");
  if (sessions > 0 && (ways == 0 || shots == 0)) throw invalid("ways and shots must be positive");
  if (test_per_class == 0) throw invalid("need at least one test sample per class");
  const std::size_t needed = base_classes + sessions * ways;
  if (needed > ds.class_count) {
    throw invalid("split needs " + std::to_string(needed) + " classes but dataset has " +
                  std::to_string(ds.class_count));
  }

  Rng rng(seed);
  std::vector<std::size_t> order(ds.class_count);
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  shuffle(order, rng);

  // Each class gets its own shuffled sample order; test samples come first.
  auto class_samples = [&](int c, std::size_t minimum) {
    std::vector<std::size_t> idx = ds.indices_of(c);
    if (idx.size() < minimum) {
      throw invalid("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                    " samples, needs " + std::to_string(minimum));
    }
    shuffle(idx, rng);
    return idx;
  };

  SessionSplit split;
  split.shots = shots;
  split.ways = ways;
  split.base_classes.assign(order.begin(), order.begin() + base_classes);
  std::sort(split.base_classes.begin(), split.base_classes.end());
  for (int c : split.base_classes) {
    auto idx = class_samples(c, std::max(shots, std::size_t{1}) + test_per_class);
    split.base_test.insert(split.base_test.end(), idx.begin(), idx.begin() + test_per_class);
    split.base_train.insert(split.base_train.end(), idx.begin() + test_per_class, idx.end());
  }
  for (std::size_t s = 0; s < sessions; ++s) {
    IncrementalSession session;
    const auto first = order.begin() + base_classes + s * ways;
    session.classes.assign(first, first + ways);
    std::sort(session.classes.begin(), session.classes.end());
    for (int c : session.classes) {
      auto idx = class_samples(c, shots + test_per_class);
      session.test.insert(session.test.end(), idx.begin(), idx.begin() + test_per_class);
      session.train.insert(session.train.end(), idx.begin() + test_per_class,
                           idx.begin() + test_per_class + shots);
    }
    split.sessions.push_back(std::move(session));
  }
  return split;
}

}  // namespace acraft

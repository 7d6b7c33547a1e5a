#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "acraft/tensor.hpp"

namespace acraft {

/// Labeled feature matrix with every feature inside the unit box.
struct Dataset {
  Tensor features;          // [n, d]
  std::vector<int> labels;  // n entries, each < class_count
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  /// Indices of every sample of class c, in dataset order.
  std::vector<std::size_t> indices_of(int c) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class DatasetErrorKind {
  invalid_parameters,
  missing_file,
  bad_magic,
  unsupported_version,
  truncated,
  label_out_of_range,
  invariant_violation,
  io_failure,
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

/// Checks the Dataset invariants; throws DatasetError(invariant_violation).
void validate_dataset(const Dataset& ds);

/// Per-dimension noise standard deviation of the synthetic clusters.
inline constexpr double kSyntheticNoise = 0.05;

/// Gaussian clusters in [0,1]^d. Class centers are drawn so that every pair
/// is at least `separation` noise standard deviations apart (best effort
/// when the box is too crowded); samples are clipped into the unit box.
Dataset make_synthetic(std::size_t classes, std::size_t per_class, std::size_t d,
                       double separation, std::uint64_t seed);

enum class StorageType : std::uint8_t { f64 = 0, u8 = 1 };

/// Little-endian "AFDS" container; see README for the byte layout.
void save_binary(const Dataset& ds, const std::filesystem::path& path,
                 StorageType dtype = StorageType::f64);
Dataset load_binary(const std::filesystem::path& path);

/// Header `label,f0,...,f{d-1}`, one row per sample.
void export_csv(const Dataset& ds, const std::filesystem::path& path);

struct IncrementalSession {
  std::vector<int> classes;
  std::vector<std::size_t> train;  // exactly `shots` per class, grouped by class
  std::vector<std::size_t> test;   // held-out samples of this session's classes

  friend bool operator==(const IncrementalSession&, const IncrementalSession&) = default;
};

/// Class partition of an FSCIL protocol. Test pool of session i is the union
/// of base_test and the test indices of sessions 1..i.
struct SessionSplit {
  std::vector<int> base_classes;
  std::vector<std::size_t> base_train;
  std::vector<std::size_t> base_test;
  std::vector<IncrementalSession> sessions;
  std::size_t shots = 0;
  std::size_t ways = 0;

  /// Cumulative test indices for session i (0 = base only).
  std::vector<std::size_t> test_pool(std::size_t session) const;
  /// Classes seen through session i.
  std::vector<int> seen_classes(std::size_t session) const;
  /// Content hash, used to key cached clean runs.
  std::uint64_t fingerprint() const;

  friend bool operator==(const SessionSplit&, const SessionSplit&) = default;
};

SessionSplit build_splits(const Dataset& ds, std::size_t base_classes, std::size_t sessions,
                          std::size_t ways, std::size_t shots, std::size_t test_per_class,
                          std::uint64_t seed);

}  // namespace acraft

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <vector>

#include "cmf/tensor.hpp"

namespace cmf::scm {

using Point3 = std::array<double, 3>;

inline constexpr double kMaxAngle = 4.0 * std::numbers::pi;
/// x3 = kHeightScale * v
inline constexpr double kHeightScale = 2.0;
inline constexpr double kDefaultLabelThreshold = 2.0 * std::numbers::pi;
inline constexpr int kDatasetFormatVersion = 1;

/// One draw from the warped Swiss-roll model together with its counterfactual.
struct SampleRecord {
  double u = 0.0;  // intrinsic angle in [0, 4pi]
  double v = 0.0;  // intrinsic height in [0, 1]
  int a = 0;       // sensitive attribute
  int y = 0;       // target, depends on u only
  Point3 x{};      // factual observation
  Point3 x_cf{};   // same (u, v) with a flipped

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetSplit {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> validation;
  std::vector<SampleRecord> test;
  std::uint64_t seed = 0;
  double label_threshold = kDefaultLabelThreshold;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
  /// train, then validation, then test.
  std::vector<SampleRecord> all() const;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Radius scale w = 1 + a/2, x1 = u w cos u, x2 = u w sin u, x3 = kHeightScale v.
/// Throws DomainError for u outside [0, 4pi], v outside [0, 1], or a not in {0, 1}.
Point3 structural_map(double u, double v, int a);

/// Regenerates both observations and the label of a record from (u, v, a).
SampleRecord make_record(double u, double v, int a, double label_threshold);

/// Draws n samples split 70/15/15 with a balanced within every split.
/// Throws ArgumentError when n < 10.
DatasetSplit sample_dataset(std::size_t n, std::uint64_t seed,
                            double label_threshold = kDefaultLabelThreshold);

/// Checks every record invariant and the per-split balance of a.
/// Throws FormatError describing the first violation.
void validate(const DatasetSplit& d);

/// Writes the CSV plus a `<stem>.meta.json` sidecar next to it.
void export_dataset(const DatasetSplit& d, const std::filesystem::path& csv_path);
DatasetSplit import_dataset(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

/// Row-stacked tensors for a group of records.
struct Batch {
  diff::Tensor x;     // [B x 3]
  diff::Tensor x_cf;  // [B x 3]
  diff::Tensor y;     // [B]
  std::size_t size() const { return y.size(); }
};

Batch make_batch(std::span<const SampleRecord> records);
Batch make_batch(std::span<const SampleRecord> records, std::span<const std::size_t> indices);

}  // namespace cmf::scm

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpq/matrix.hpp"

namespace mpq {

/// Contiguous run of rows without gaps.
struct Segment {
  std::vector<std::vector<double>> rows;  // each row has one value per column
  std::vector<double> timestamps;         // seconds; empty without a timestamp column
  std::size_t first_line = 0;             // 1-based CSV line of the first row
};

struct TimeSeries {
  std::vector<std::string> columns;
  std::size_t target_index = 0;
  std::vector<Segment> segments;

  std::size_t row_count() const;
};

struct IngestOptions {
  std::string target;
  /// Timestamp column; segments split where the gap exceeds 1.5x the
  /// nominal (median) period.
  std::optional<std::string> timestamp_column;
  /// Feature columns to keep; empty keeps every non-timestamp column.
  std::vector<std::string> features;
};

/// Reads a headered CSV. Rows with an empty or NaN cell end the current
/// segment. Throws Error(kParse) with line and column for non-numeric cells,
/// Error(kValidation) for unknown columns or non-increasing timestamps.
TimeSeries ingest(std::istream& in, const IngestOptions& opts);
TimeSeries ingest_file(const std::string& path, const IngestOptions& opts);

/// Seconds since the epoch for "YYYY-MM-DD[ T]hh:mm[:ss][Z]" or a plain
/// number. Throws Error(kParse).
double parse_timestamp(std::string_view text);

/// Per-column MinMax normalization to [0, 1].
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::vector<double> min, std::vector<double> max);

  bool fitted() const { return !min_.empty(); }
  std::size_t columns() const { return min_.size(); }
  const std::vector<double>& min() const { return min_; }
  const std::vector<double>& max() const { return max_; }

  /// Constant columns map to 0 and invert to their minimum.
  double transform(std::size_t column, double v) const;
  double inverse(std::size_t column, double v) const;

  friend bool operator==(const MinMaxScaler&, const MinMaxScaler&) = default;

 private:
  void require(std::size_t column) const;
  std::vector<double> min_;
  std::vector<double> max_;
};

struct WindowOptions {
  std::size_t seq_len = 12;
  double test_fraction = 0.1;
  /// Explicit test size; overrides test_fraction.
  std::optional<std::size_t> test_count;
  /// Share of the training pairs held out (at the end) for validation.
  double validation_fraction = 0.1;
};

/// Sliding-window pairs in chronological order: [0, train_count) train,
/// then test. Inputs and targets are normalized.
struct WindowedDataset {
  std::size_t seq_len = 0;
  std::vector<std::string> columns;
  std::size_t target_index = 0;
  std::vector<Matrix> windows;  // seq_len x columns
  std::vector<double> targets;
  std::size_t train_count = 0;
  std::size_t validation_count = 0;  // last pairs of the train range
  MinMaxScaler scaler;

  std::size_t input_dim() const { return columns.size(); }
  std::size_t pair_count() const { return windows.size(); }
  std::size_t test_count() const { return windows.size() - train_count; }
  std::size_t fit_count() const { return train_count - validation_count; }
};

/// Pair count of the reference air-quality corpus; its test split is fixed at 831 pairs.
inline constexpr std::size_t kReferencePairCount = 15258;
inline constexpr std::size_t kReferenceTestCount = 831;

/// Throws Error(kValidation) when no segment is longer than seq_len or a
/// split would be empty.
WindowedDataset make_windows(const TimeSeries& series, const WindowOptions& opts);

/// Windows everything with an already fitted scaler (evaluation of a saved
/// model on new data). All pairs land in the test range.
WindowedDataset make_windows(const TimeSeries& series, std::size_t seq_len,
                             const MinMaxScaler& scaler);

/// RMSE in real units of the target column.
double rmse(std::span<const double> predictions, std::span<const double> targets,
            const MinMaxScaler& scaler, std::size_t target_index);

}  // namespace mpq

#include "mpq/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>

#include "mpq/error.hpp"

namespace mpq {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cells.emplace_back(trim(cur));
  return cells;
}

bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NaN" || cell == "nan" || cell == "NA" || cell == "null";
}

std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string where(std::size_t line, std::string_view column) {
  return "line " + std::to_string(line) + ", column '" + std::string(column) + "'";
}

double median_gap(const std::vector<double>& ts) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < ts.size(); ++i) gaps.push_back(ts[i] - ts[i - 1]);
  if (gaps.empty()) return 0.0;
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
  return gaps[gaps.size() / 2];
}

}  // namespace

std::size_t TimeSeries::row_count() const {
  std::size_t total = 0;
  for (const auto& s : segments) total += s.rows.size();
  return total;
}

double parse_timestamp(std::string_view text) {
  text = trim(text);
  if (auto v = parse_number(text)) return *v;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  const std::string s(text);
  char sep = 0;
  int consumed = 0;
  const int fields = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (fields == 3 && s.size() == 10) {
    sep = 'T';
  } else if (fields < 6 || (sep != 'T' && sep != ' ')) {
    fail(ErrorKind::kParse, "unrecognized timestamp '" + s + "'");
  }
  std::string_view rest = fields >= 6 ? std::string_view(s).substr(static_cast<std::size_t>(consumed))
                                      : std::string_view();
  if (!rest.empty() && rest.front() == ':') {
    rest.remove_prefix(1);
    std::size_t len = 0;
    while (len < rest.size() && (std::isdigit(static_cast<unsigned char>(rest[len])) || rest[len] == '.')) ++len;
    const auto v = parse_number(rest.substr(0, len));
    if (!v) fail(ErrorKind::kParse, "unrecognized timestamp '" + s + "'");
    sec = *v;
    rest.remove_prefix(len);
  }
  if (rest == "Z" || rest == "+00:00") rest = {};
  if (!rest.empty()) fail(ErrorKind::kParse, "unsupported timestamp suffix in '" + s + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec >= 61.0) {
    fail(ErrorKind::kParse, "invalid date in timestamp '" + s + "'");
  }
  const auto days = sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
}

TimeSeries ingest(std::istream& in, const IngestOptions& opts) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) fail(ErrorKind::kParse, "CSV has no header row");
  const auto header = split_csv(line);

  const auto find = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  std::optional<std::size_t> ts_col;
  if (opts.timestamp_column) {
    ts_col = find(*opts.timestamp_column);
    if (!ts_col) fail(ErrorKind::kValidation, "unknown timestamp column '" + *opts.timestamp_column + "'");
  }
  TimeSeries series;
  std::vector<std::size_t> source;
  if (opts.features.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (ts_col && i == *ts_col) continue;
      series.columns.push_back(header[i]);
      source.push_back(i);
    }
  } else {
    for (const auto& f : opts.features) {
      const auto idx = find(f);
      if (!idx) fail(ErrorKind::kValidation, "unknown feature column '" + f + "'");
      series.columns.push_back(f);
      source.push_back(*idx);
    }
  }
  const auto target = std::find(series.columns.begin(), series.columns.end(), opts.target);
  if (opts.target.empty() || target == series.columns.end()) {
    fail(ErrorKind::kValidation, "unknown target column '" + opts.target + "'");
  }
  series.target_index = static_cast<std::size_t>(target - series.columns.begin());

  Segment cur;
  const auto flush = [&] {
    if (!cur.rows.empty()) series.segments.push_back(std::move(cur));
    cur = Segment{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " cells, found " +
                                  std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(source.size());
    bool missing = false;
    for (std::size_t k = 0; k < source.size(); ++k) {
      const auto& cell = cells[source[k]];
      if (is_missing(cell)) {
        missing = true;
        break;
      }
      const auto v = parse_number(cell);
      if (!v) fail(ErrorKind::kParse, where(line_no, header[source[k]]) + ": non-numeric value '" + cell + "'");
      row.push_back(*v);
    }
    std::optional<double> ts;
    if (ts_col && !missing) {
      if (is_missing(cells[*ts_col])) {
        missing = true;
      } else {
        try {
          ts = parse_timestamp(cells[*ts_col]);
        } catch (const Error& e) {
          fail(ErrorKind::kParse, where(line_no, header[*ts_col]) + ": " + e.what());
        }
      }
    }
    if (missing) {
      flush();
      continue;
    }
    if (cur.rows.empty()) cur.first_line = line_no;
    cur.rows.push_back(std::move(row));
    if (ts) cur.timestamps.push_back(*ts);
  }
  flush();
  if (series.segments.empty()) fail(ErrorKind::kValidation, "CSV contains no complete rows");

  if (ts_col) {
    // Nominal period is the median step over the whole file.
    std::vector<double> all;
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& s : series.segments) {
      for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
        if (!(s.timestamps[i] > last)) {
          fail(ErrorKind::kValidation, "timestamps must be strictly increasing (line " +
                                           std::to_string(s.first_line + i) + ")");
        }
        last = s.timestamps[i];
      }
      all.insert(all.end(), s.timestamps.begin(), s.timestamps.end());
    }
    const double limit = 1.5 * median_gap(all);
    std::vector<Segment> split;
    for (auto& s : series.segments) {
      Segment piece;
      piece.first_line = s.first_line;
      for (std::size_t i = 0; i < s.rows.size(); ++i) {
        if (i > 0 && limit > 0 && s.timestamps[i] - s.timestamps[i - 1] > limit) {
          split.push_back(std::move(piece));
          piece = Segment{};
          piece.first_line = s.first_line + i;
        }
        piece.rows.push_back(std::move(s.rows[i]));
        piece.timestamps.push_back(s.timestamps[i]);
      }
      split.push_back(std::move(piece));
    }
    series.segments = std::move(split);
  }
  return series;
}

TimeSeries ingest_file(const std::string& path, const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return ingest(in, opts);
}

MinMaxScaler::MinMaxScaler(std::vector<double> min, std::vector<double> max)
    : min_(std::move(min)), max_(std::move(max)) {
  if (min_.size() != max_.size()) fail(ErrorKind::kValidation, "scaler min/max sizes differ");
  for (std::size_t i = 0; i < min_.size(); ++i) {
    if (!(min_[i] <= max_[i])) fail(ErrorKind::kValidation, "scaler min exceeds max");
  }
}

void MinMaxScaler::require(std::size_t column) const {
  if (!fitted()) fail(ErrorKind::kValidation, "scaler is not fitted");
  if (column >= min_.size()) fail(ErrorKind::kValidation, "scaler column out of range");
}

double MinMaxScaler::transform(std::size_t column, double v) const {
  require(column);
  const double range = max_[column] - min_[column];
  return range == 0.0 ? 0.0 : (v - min_[column]) / range;
}

double MinMaxScaler::inverse(std::size_t column, double v) const {
  require(column);
  const double range = max_[column] - min_[column];
  return range == 0.0 ? min_[column] : v * range + min_[column];
}

namespace {

struct PairRef {
  std::size_t segment;
  std::size_t t;  // index of the target row
};

std::vector<PairRef> enumerate_pairs(const TimeSeries& series, std::size_t n) {
  std::vector<PairRef> pairs;
  for (std::size_t s = 0; s < series.segments.size(); ++s) {
    for (std::size_t t = n; t < series.segments[s].rows.size(); ++t) pairs.push_back({s, t});
  }
  if (pairs.empty()) {
    fail(ErrorKind::kValidation, "no segment is longer than seq_len " + std::to_string(n));
  }
  return pairs;
}

void fill_pairs(const TimeSeries& series, const std::vector<PairRef>& pairs, WindowedDataset& ds) {
  const std::size_t n = ds.seq_len;
  const std::size_t m = ds.columns.size();
  ds.windows.reserve(pairs.size());
  ds.targets.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& rows = series.segments[p.segment].rows;
    Matrix w(n, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c) w(i, c) = ds.scaler.transform(c, rows[p.t - n + i][c]);
    ds.windows.push_back(std::move(w));
    ds.targets.push_back(ds.scaler.transform(ds.target_index, rows[p.t][ds.target_index]));
  }
}

}  // namespace

WindowedDataset make_windows(const TimeSeries& series, const WindowOptions& opts) {
  if (opts.seq_len == 0) fail(ErrorKind::kValidation, "seq_len must be positive");
  if (!(opts.test_fraction >= 0.0 && opts.test_fraction < 1.0)) {
    fail(ErrorKind::kValidation, "test fraction must be in [0, 1)");
  }
  if (!(opts.validation_fraction >= 0.0 && opts.validation_fraction < 1.0)) {
    fail(ErrorKind::kValidation, "validation fraction must be in [0, 1)");
  }
  const auto pairs = enumerate_pairs(series, opts.seq_len);
  const std::size_t total = pairs.size();
  std::size_t test = 0;
  if (opts.test_count) {
    test = *opts.test_count;
  } else if (total == kReferencePairCount) {
    test = kReferenceTestCount;
  } else {
    test = static_cast<std::size_t>(std::llround(opts.test_fraction * static_cast<double>(total)));
  }
  if (test >= total) fail(ErrorKind::kValidation, "test split leaves no training pairs");

  WindowedDataset ds;
  ds.seq_len = opts.seq_len;
  ds.columns = series.columns;
  ds.target_index = series.target_index;
  ds.train_count = total - test;
  ds.validation_count = static_cast<std::size_t>(
      std::llround(opts.validation_fraction * static_cast<double>(ds.train_count)));
  if (ds.validation_count >= ds.train_count) ds.validation_count = ds.train_count - 1;

  // Fit on every row some training pair touches.
  const std::size_t m = series.columns.size();
  std::vector<double> lo(m, std::numeric_limits<double>::infinity());
  std::vector<double> hi(m, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> last_row(series.segments.size(), 0);
  std::vector<bool> used(series.segments.size(), false);
  for (std::size_t i = 0; i < ds.train_count; ++i) {
    used[pairs[i].segment] = true;
    last_row[pairs[i].segment] = pairs[i].t;
  }
  for (std::size_t s = 0; s < series.segments.size(); ++s) {
    if (!used[s]) continue;
    for (std::size_t r = 0; r <= last_row[s]; ++r) {
      const auto& row = series.segments[s].rows[r];
      for (std::size_t c = 0; c < m; ++c) {
        lo[c] = std::min(lo[c], row[c]);
        hi[c] = std::max(hi[c], row[c]);
      }
    }
  }
  ds.scaler = MinMaxScaler(std::move(lo), std::move(hi));
  fill_pairs(series, pairs, ds);
  return ds;
}

WindowedDataset make_windows(const TimeSeries& series, std::size_t seq_len,
                             const MinMaxScaler& scaler) {
  if (scaler.columns() != series.columns.size()) {
    fail(ErrorKind::kValidation, "scaler has " + std::to_string(scaler.columns()) +
                                     " columns but the data has " +
                                     std::to_string(series.columns.size()));
  }
  const auto pairs = enumerate_pairs(series, seq_len);
  WindowedDataset ds;
  ds.seq_len = seq_len;
  ds.columns = series.columns;
  ds.target_index = series.target_index;
  ds.scaler = scaler;
  fill_pairs(series, pairs, ds);
  return ds;
}

double rmse(std::span<const double> predictions, std::span<const double> targets,
            const MinMaxScaler& scaler, std::size_t target_index) {
  if (predictions.size() != targets.size()) {
    fail(ErrorKind::kValidation, "prediction and target counts differ");
  }
  if (predictions.empty()) fail(ErrorKind::kValidation, "cannot compute RMSE of nothing");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = scaler.inverse(target_index, predictions[i]) - scaler.inverse(target_index, targets[i]);
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(predictions.size()));
}

}  // namespace mpq

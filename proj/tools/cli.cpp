#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpq/bitwidth_search.hpp"
#include "mpq/dataset.hpp"
#include "mpq/error.hpp"
#include "mpq/knowledge_db.hpp"
#include "mpq/model_io.hpp"
#include "mpq/quantized_model.hpp"
#include "mpq/resource_estimator.hpp"
#include "mpq/trainer.hpp"

#ifndef MPQ_VERSION
#define MPQ_VERSION "0.0.0"
#endif

namespace mpq::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct Globals {
  bool json = false;
  std::size_t threads = 0;  // 0 = per-command default
  std::uint64_t seed = 42;
};

struct DataFlags {
  std::string path;
  std::string target;
  std::string timestamp;
  std::vector<std::string> features;
  double test_fraction = 0.1;
};

struct TrainFlags {
  std::size_t n = 12;
  std::size_t d_model = 64;
  std::string m = "auto";
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 256;
  double lr = 1e-3;
};

struct ThresholdFlags {
  std::string luts = "100";
  std::string dram = "100";
  std::string bram = "100";
  std::string dsps = "100";
};

void add_data_flags(CLI::App* app, DataFlags& f, bool required) {
  app->add_option("--data", f.path, "CSV time series")->required(required);
  app->add_option("--target", f.target, "Target column")->required(required);
  app->add_option("--timestamp", f.timestamp, "Timestamp column (ISO-8601 or seconds)");
  app->add_option("--features", f.features, "Feature columns (default: all)")->delimiter(',');
  app->add_option("--test-fraction", f.test_fraction, "Test share unless the series has the reference corpus size")
      ->check(CLI::Range(0.0, 0.99));
}

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--n", f.n, "Sequence length")->check(CLI::PositiveNumber);
  app->add_option("--d-model", f.d_model, "Model width")->check(CLI::PositiveNumber);
  app->add_option("--m", f.m, "Input dimension or 'auto'");
  app->add_option("--epochs", f.epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  app->add_option("--patience", f.patience, "Early-stopping patience")->check(CLI::PositiveNumber);
  app->add_option("--batch-size", f.batch_size, "Batch size")->check(CLI::PositiveNumber);
  app->add_option("--lr", f.lr, "Initial learning rate")->check(CLI::PositiveNumber);
}

void add_threshold_flags(CLI::App* app, ThresholdFlags& t) {
  app->add_option("--t-luts", t.luts, "LUT threshold (%)");
  app->add_option("--t-dram", t.dram, "DRAM threshold (%)");
  app->add_option("--t-bram", t.bram, "BRAM threshold (%)");
  app->add_option("--t-dsps", t.dsps, "DSP threshold (%)");
}

Thresholds parse_thresholds(const ThresholdFlags& f) {
  const auto one = [](const std::string& s, const char* name) {
    try {
      return Tenths::parse(s);
    } catch (const Error& e) {
      fail(ErrorKind::kUsage, std::string("--t-") + name + ": " + e.what());
    }
  };
  Thresholds t;
  t.luts = one(f.luts, "luts");
  t.dram = one(f.dram, "dram");
  t.bram = one(f.bram, "bram");
  t.dsps = one(f.dsps, "dsps");
  try {
    t.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kUsage, e.what());
  }
  return t;
}

BitwidthCombination parse_combo_flag(const std::string& text, const char* flag) {
  try {
    return BitwidthCombination::parse(text);
  } catch (const Error& e) {
    fail(ErrorKind::kUsage, std::string(flag) + ": " + e.what());
  }
}

OverheadPolicy parse_policy(const std::string& s) {
  if (s == "max") return OverheadPolicy::kMaxBitwidth;
  if (s == "mode") return OverheadPolicy::kModeBitwidth;
  if (s == "per-resource") return OverheadPolicy::kPerResourceMax;
  fail(ErrorKind::kUsage, "--policy must be max, mode or per-resource");
}

KnowledgeDatabase open_kb(const std::string& path) {
  return load_database(path.empty() ? bundled_database_path() : fs::path(path));
}

ordered_json estimate_json(const ResourceVector& v) {
  ordered_json j;
  for (auto r : kAllResources) j[std::string(name_of(r))] = v[r].to_double();
  return j;
}

ordered_json combo_json(const BitwidthCombination& c) {
  ordered_json j = ordered_json::array();
  for (int b : c.bits()) j.push_back(b);
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

TimeSeries load_series(const DataFlags& f) {
  IngestOptions opts;
  opts.target = f.target;
  if (!f.timestamp.empty()) opts.timestamp_column = f.timestamp;
  opts.features = f.features;
  return ingest_file(f.path, opts);
}

WindowedDataset load_dataset(const DataFlags& f, std::size_t n) {
  WindowOptions w;
  w.seq_len = n;
  w.test_fraction = f.test_fraction;
  return make_windows(load_series(f), w);
}

TrainData split(const WindowedDataset& ds) {
  TrainData d;
  const auto it = ds.windows.begin();
  const auto fit = static_cast<std::ptrdiff_t>(ds.fit_count());
  const auto train = static_cast<std::ptrdiff_t>(ds.train_count);
  d.fit_windows.assign(it, it + fit);
  d.fit_targets.assign(ds.targets.begin(), ds.targets.begin() + fit);
  d.val_windows.assign(it + fit, it + train);
  d.val_targets.assign(ds.targets.begin() + fit, ds.targets.begin() + train);
  return d;
}

std::vector<Matrix> test_windows(const WindowedDataset& ds) {
  return {ds.windows.begin() + static_cast<std::ptrdiff_t>(ds.train_count), ds.windows.end()};
}
std::vector<double> test_targets(const WindowedDataset& ds) {
  return {ds.targets.begin() + static_cast<std::ptrdiff_t>(ds.train_count), ds.targets.end()};
}

ModelConfig model_config(const TrainFlags& f, const WindowedDataset& ds) {
  ModelConfig c;
  c.seq_len = f.n;
  c.d_model = f.d_model;
  c.input_dim = ds.input_dim();
  if (f.m != "auto") {
    std::size_t m = 0;
    try {
      m = std::stoul(f.m);
    } catch (const std::exception&) {
      fail(ErrorKind::kUsage, "--m must be a positive integer or 'auto'");
    }
    if (m != ds.input_dim()) {
      fail(ErrorKind::kValidation, "--m " + f.m + " does not match the " +
                                       std::to_string(ds.input_dim()) + " data columns");
    }
  }
  return c;
}

TrainConfig train_config(const TrainFlags& f, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.patience = std::min(f.patience, f.epochs);
  cfg.batch_size = f.batch_size;
  cfg.lr = f.lr;
  cfg.seed = seed;
  return cfg;
}

ordered_json report_json(const TrainReport& r) {
  ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  j["stop_reason"] = r.stop_reason;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
  }
  j["epochs"] = std::move(epochs);
  return j;
}

Preprocessing preprocessing_of(const WindowedDataset& ds) {
  return Preprocessing{ds.columns, ds.target_index, ds.scaler};
}

std::vector<double> predict_quantized(const QuantizedModel& qm, const std::vector<Matrix>& windows,
                                      std::size_t threads) {
  const Matrix y = forward_integer(qm, quantize_input(qm, stack_windows(windows)), threads);
  std::vector<double> out(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) out[i] = y(i, 0);
  return out;
}

std::vector<double> predict_any(const ModelFile& file, const std::vector<Matrix>& windows,
                                std::size_t threads) {
  if (const auto* qm = std::get_if<QuantizedModel>(&file.model)) return predict_quantized(*qm, windows, threads);
  return predict(std::get<FloatModel>(file.model), windows);
}

// Windows `data` with the scaler stored in the model; the test split follows
// the same rule used at training time.
WindowedDataset dataset_for_model(const ModelFile& file, const DataFlags& f) {
  if (!file.preprocessing) fail(ErrorKind::kValidation, "model file has no preprocessing section");
  const auto& pre = *file.preprocessing;
  auto series = load_series(f);
  if (series.columns != pre.columns) {
    fail(ErrorKind::kValidation, "data columns do not match the columns the model was trained on");
  }
  const std::size_t n = file.config().seq_len;
  WindowOptions w;
  w.seq_len = n;
  w.test_fraction = f.test_fraction;
  const auto split_ds = make_windows(series, w);
  auto ds = make_windows(series, n, pre.scaler);
  ds.train_count = split_ds.train_count;
  ds.validation_count = split_ds.validation_count;
  return ds;
}

std::string run_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string short_hash(const std::vector<std::string>& args) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& a : args) {
    for (unsigned char c : a) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffu));
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_kb_build(const std::string& reports, const std::string& out_path, const Globals& g,
                 std::ostream& out) {
  const auto db = aggregate(load_reports(reports));
  save_database(db, out_path);
  std::size_t count = 0;
  for (const auto& [n, per_b] : db.metadata().report_counts)
    for (const auto& [b, c] : per_b) count += static_cast<std::size_t>(c);
  if (g.json) {
    ordered_json j;
    j["out"] = out_path;
    j["seq_lens"] = db.seq_lens();
    j["reports"] = count;
    out << j.dump(2) << "\n";
  } else {
    out << "aggregated " << count << " reports into " << out_path << "\n";
  }
  return 0;
}

int cmd_kb_validate(const std::string& path, const Globals& g, std::ostream& out) {
  const auto db = open_kb(path);
  if (g.json) {
    ordered_json j;
    j["valid"] = true;
    j["seq_lens"] = db.seq_lens();
    j["entries"] = db.seq_lens().size() * KnowledgeDatabase::kCellsPerSeqLen;
    out << j.dump(2) << "\n";
  } else {
    out << "ok: " << db.seq_lens().size() * KnowledgeDatabase::kCellsPerSeqLen << " entries for n in {";
    const auto ns = db.seq_lens();
    for (std::size_t i = 0; i < ns.size(); ++i) out << (i ? "," : "") << ns[i];
    out << "}\n";
  }
  return 0;
}

int cmd_kb_show(const std::string& path, int n, const std::string& component, const Globals& g,
                std::ostream& out) {
  std::optional<ComponentId> only;
  if (!component.empty()) {
    only = parse_component(component);
    if (!only) fail(ErrorKind::kUsage, "unknown component '" + component + "'");
  }
  const auto db = open_kb(path);
  const auto& table = db.table_for(n);
  if (g.json) {
    ordered_json j = ordered_json::object();
    for (std::size_t ci = 0; ci < kComponentCount; ++ci) {
      const auto c = component_at(ci);
      if (only && c != *only) continue;
      ordered_json per_res;
      for (auto r : kAllResources) {
        ordered_json per_b;
        for (std::size_t s = 0; s < kBitwidths.size(); ++s)
          per_b[std::to_string(kBitwidths[s])] = KnowledgeDatabase::cell(table, c, r, s).to_double();
        per_res[std::string(name_of(r))] = std::move(per_b);
      }
      j[std::string(name_of(c))] = std::move(per_res);
    }
    out << j.dump(2) << "\n";
    return 0;
  }
  out << std::left << std::setw(17) << "component";
  for (auto r : kAllResources)
    for (int b : kBitwidths) out << std::right << std::setw(8) << (std::string(name_of(r)) + "@" + std::to_string(b));
  out << "\n";
  for (std::size_t ci = 0; ci < kComponentCount; ++ci) {
    const auto c = component_at(ci);
    if (only && c != *only) continue;
    out << std::left << std::setw(17) << name_of(c);
    for (auto r : kAllResources)
      for (std::size_t s = 0; s < kBitwidths.size(); ++s)
        out << std::right << std::setw(8) << KnowledgeDatabase::cell(table, c, r, s).to_string();
    out << "\n";
  }
  return 0;
}

int cmd_estimate(const std::string& kb, int n, const std::string& combo_text, bool overhead,
                 const std::string& policy, const Globals& g, std::ostream& out) {
  const auto combo = parse_combo_flag(combo_text, "--combo");
  EstimateOptions opts{overhead, parse_policy(policy)};
  const auto db = open_kb(kb);
  const auto v = estimate(db, n, combo, opts);
  if (g.json) {
    out << estimate_json(v).dump(2) << "\n";
    return 0;
  }
  const char* labels[] = {"LUTs", "DRAM", "BRAM", "DSPs"};
  for (std::size_t i = 0; i < kResourceCount; ++i) {
    out << std::left << std::setw(6) << labels[i] << std::right << std::setw(7) << v.values[i].to_string() << "\n";
  }
  return 0;
}

ordered_json search_json(const SearchResult& r) {
  ordered_json j;
  j["total"] = r.total_count;
  j["passed"] = r.filtered_count;
  j["reduction_pct"] = r.reduction_tenths().to_double();
  ordered_json sel = ordered_json::array();
  for (const auto& c : r.selected) {
    sel.push_back({{"combo", combo_json(c.combo)}, {"score", c.score}, {"estimate", estimate_json(c.estimate)}});
  }
  j["selected"] = std::move(sel);
  return j;
}

struct SearchFlags {
  std::string kb;
  int n = 12;
  ThresholdFlags thresholds;
  std::size_t top = 5;
  std::string combos;
  bool overhead = false;
  std::string policy = "max";
  std::string out;
  std::string histogram;
  std::size_t bins = 20;
};

int cmd_search(const SearchFlags& f, const Globals& g, std::ostream& out, std::ostream& err) {
  if (f.top == 0) fail(ErrorKind::kUsage, "--top must be at least 1");
  const auto thresholds = parse_thresholds(f.thresholds);
  std::optional<ResourceKind> hist;
  if (!f.histogram.empty()) {
    hist = parse_resource(f.histogram);
    if (!hist) fail(ErrorKind::kUsage, "--histogram expects luts, dram, bram or dsps");
    if (f.bins == 0) fail(ErrorKind::kUsage, "--bins must be positive");
  }
  SearchOptions opts;
  opts.estimate = EstimateOptions{f.overhead, parse_policy(f.policy)};
  opts.threads = g.threads;  // 0 = hardware concurrency
  const auto db = open_kb(f.kb);
  const auto candidates = f.combos.empty() ? enumerate_all() : load_candidates(f.combos);

  const auto start = std::chrono::steady_clock::now();
  auto filtered = filter(db, f.n, candidates, thresholds, opts);
  if (hist) {
    out << "lower,upper,count\n";
    for (const auto& b : histogram(filtered, *hist, f.bins)) {
      out << fixed1(b.lower) << "," << fixed1(b.upper) << "," << b.count << "\n";
    }
    return 0;
  }
  auto result = select_top(std::move(filtered), f.top, candidates.size());
  result.elapsed = std::chrono::steady_clock::now() - start;
  const auto doc = search_json(result);
  if (!f.out.empty()) write_text(f.out, doc.dump(2) + "\n");
  if (g.json) {
    out << doc.dump(2) << "\n";
    return 0;
  }
  out << "total " << result.total_count << ", passed " << result.filtered_count << ", reduction "
      << result.reduction_tenths().to_string() << "%\n";
  out << std::left << std::setw(6) << "rank" << std::setw(22) << "combo" << std::right << std::setw(6)
      << "score" << std::setw(8) << "luts" << std::setw(8) << "dram" << std::setw(8) << "bram"
      << std::setw(8) << "dsps" << "\n";
  for (std::size_t i = 0; i < result.selected.size(); ++i) {
    const auto& c = result.selected[i];
    out << std::left << std::setw(6) << i + 1 << std::setw(22) << c.combo.to_string() << std::right
        << std::setw(6) << c.score;
    for (auto r : kAllResources) out << std::setw(8) << c.estimate[r].to_string();
    out << "\n";
  }
  err << "search took " << fmt(std::chrono::duration<double>(result.elapsed).count(), 3) << " s\n";
  return 0;
}

struct TrainCmd {
  DataFlags data;
  TrainFlags train;
  std::string qat;
  std::string out;
  std::string report;
};

int cmd_train(const TrainCmd& f, const Globals& g, std::ostream& out, std::ostream& err) {
  if (f.out.empty()) fail(ErrorKind::kUsage, "--out is required");
  std::optional<BitwidthCombination> qat;
  if (!f.qat.empty()) qat = parse_combo_flag(f.qat, "--qat");
  const auto ds = load_dataset(f.data, f.train.n);
  const auto config = model_config(f.train, ds);
  auto cfg = train_config(f.train, g.seed);
  cfg.qat = qat;
  auto [model, report] = train(init_model(config, g.seed), split(ds), cfg);

  const auto tw = test_windows(ds);
  const double test_rmse = rmse(predict(model, tw), test_targets(ds), ds.scaler, ds.target_index);
  ModelFile file{model, preprocessing_of(ds), qat};
  save_model(f.out, file);
  auto rj = report_json(report);
  rj["test_rmse"] = test_rmse;
  rj["pairs"] = {{"fit", ds.fit_count()}, {"validation", ds.validation_count}, {"test", ds.test_count()}};
  if (!f.report.empty()) write_text(f.report, rj.dump(2) + "\n");
  if (g.json) {
    ordered_json j;
    j["model"] = f.out;
    j["best_epoch"] = report.best_epoch;
    j["epochs_run"] = report.epochs.size();
    j["stop_reason"] = report.stop_reason;
    j["best_val_loss"] = report.best_val_loss;
    j["test_rmse"] = test_rmse;
    out << j.dump(2) << "\n";
  } else {
    for (const auto& e : report.epochs) {
      err << "epoch " << e.epoch << "  train " << fmt(e.train_loss) << "  val " << fmt(e.val_loss)
          << "  lr " << fmt(e.lr) << "\n";
    }
    out << "saved " << f.out << " (best epoch " << report.best_epoch << ", " << report.stop_reason
        << ", test RMSE " << fmt(test_rmse) << ")\n";
  }
  return 0;
}

struct QuantizeCmd {
  std::string model;
  std::string combo;
  DataFlags data;
  std::string out;
};

QuantizedModel quantize_for(const FloatModel& fm, const std::optional<BitwidthCombination>& qat_combo,
                            const BitwidthCombination& combo, const std::vector<Matrix>& calibration) {
  if (fm.qat_ranges && qat_combo && *qat_combo == combo) return quantize_model(fm, combo, *fm.qat_ranges);
  if (calibration.empty()) {
    fail(ErrorKind::kUsage, "calibration data (--data, --target) is needed unless the model was QAT-trained for this combination");
  }
  return quantize_model(fm, combo, calibration);
}

int cmd_quantize(const QuantizeCmd& f, const Globals& g, std::ostream& out) {
  if (f.out.empty()) fail(ErrorKind::kUsage, "--out is required");
  if (f.data.path.empty() != f.data.target.empty()) fail(ErrorKind::kUsage, "--data and --target go together");
  const auto file = load_model(f.model);
  if (file.quantized()) fail(ErrorKind::kValidation, "model is already quantized");
  std::optional<BitwidthCombination> combo;
  if (!f.combo.empty()) combo = parse_combo_flag(f.combo, "--combo");
  if (!combo) combo = file.qat_combo;
  if (!combo) fail(ErrorKind::kUsage, "--combo is required for a model without a QAT combination");
  const auto& fm = std::get<FloatModel>(file.model);

  std::vector<Matrix> calibration;
  if (!f.data.path.empty()) {
    const auto ds = dataset_for_model(file, f.data);
    calibration.assign(ds.windows.begin(), ds.windows.begin() + static_cast<std::ptrdiff_t>(ds.train_count));
  }
  ModelFile qfile{quantize_for(fm, file.qat_combo, *combo, calibration), file.preprocessing, std::nullopt};
  save_model(f.out, qfile);
  if (g.json) {
    out << ordered_json{{"model", f.out}, {"combo", combo_json(*combo)}}.dump(2) << "\n";
  } else {
    out << "saved " << f.out << " at " << combo->to_string() << "\n";
  }
  return 0;
}

struct EvalCmd {
  std::string model;
  DataFlags data;
  std::string split = "test";
};

int cmd_eval(const EvalCmd& f, const Globals& g, std::ostream& out) {
  if (f.split != "test" && f.split != "all") fail(ErrorKind::kUsage, "--split must be test or all");
  const auto file = load_model(f.model);
  const auto ds = dataset_for_model(file, f.data);
  const std::size_t begin = f.split == "test" ? ds.train_count : 0;
  const std::vector<Matrix> windows(ds.windows.begin() + static_cast<std::ptrdiff_t>(begin), ds.windows.end());
  const std::vector<double> targets(ds.targets.begin() + static_cast<std::ptrdiff_t>(begin), ds.targets.end());
  const auto threads = g.threads == 0 ? 1 : g.threads;
  const double value = rmse(predict_any(file, windows, threads), targets, ds.scaler, ds.target_index);
  if (g.json) {
    ordered_json j;
    j["rmse"] = value;
    j["pairs"] = windows.size();
    out << j.dump(2) << "\n";
  } else {
    out << "rmse " << fmt(value) << " over " << windows.size() << " pairs\n";
  }
  return 0;
}

int cmd_infer(const EvalCmd& f, const Globals& g, std::ostream& out) {
  const auto file = load_model(f.model);
  const auto ds = dataset_for_model(file, f.data);
  const auto threads = g.threads == 0 ? 1 : g.threads;
  const auto pred = predict_any(file, ds.windows, threads);
  if (g.json) {
    ordered_json arr = ordered_json::array();
    for (std::size_t i = 0; i < pred.size(); ++i) {
      arr.push_back({{"prediction", ds.scaler.inverse(ds.target_index, pred[i])},
                     {"target", ds.scaler.inverse(ds.target_index, ds.targets[i])}});
    }
    out << ordered_json{{"predictions", arr}}.dump(2) << "\n";
  } else {
    out << "prediction,target\n";
    for (std::size_t i = 0; i < pred.size(); ++i) {
      out << fmt(ds.scaler.inverse(ds.target_index, pred[i]), 8) << ","
          << fmt(ds.scaler.inverse(ds.target_index, ds.targets[i]), 8) << "\n";
    }
  }
  return 0;
}

struct PipelineCmd {
  std::string kb;
  DataFlags data;
  TrainFlags train;
  ThresholdFlags thresholds;
  std::size_t top = 5;
  bool overhead = false;
  std::string run_dir;
};

// Rethrows with the stage name prefixed, keeping the error kind.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + name + "': " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kInternal, "stage '" + name + "': " + e.what());
  }
}

int cmd_pipeline(const PipelineCmd& f, const Globals& g, const std::vector<std::string>& args,
                 std::ostream& out, std::ostream& err) {
  if (f.top == 0) fail(ErrorKind::kUsage, "--top must be at least 1");
  const auto thresholds = parse_thresholds(f.thresholds);
  const fs::path dir = f.run_dir.empty() ? fs::path("runs") / (run_stamp() + "-" + short_hash(args))
                                         : fs::path(f.run_dir);
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["version"] = MPQ_VERSION;
  manifest["kb_schema"] = kDatabaseVersion;
  manifest["model_schema"] = kModelFileVersion;
  manifest["args"] = args;
  manifest["inputs"] = {{"kb", f.kb.empty() ? bundled_database_path().string() : f.kb}, {"data", f.data.path}};
  manifest["seed"] = g.seed;
  manifest["outputs"] = ordered_json::array();
  manifest["status"] = "running";
  const auto flush_manifest = [&] { write_text(dir / "manifest.json", manifest.dump(2) + "\n"); };
  flush_manifest();

  ordered_json report;
  try {
    SearchOptions sopts;
    sopts.estimate.include_overhead = f.overhead;
    sopts.threads = g.threads;
    const auto db = stage("search", [&] { return open_kb(f.kb); });
    const auto result = stage("search", [&] {
      return search(db, static_cast<int>(f.train.n), thresholds, f.top, nullptr, sopts);
    });
    report["n"] = f.train.n;
    report["thresholds"] = {{"luts", thresholds.luts.to_double()}, {"dram", thresholds.dram.to_double()},
                            {"bram", thresholds.bram.to_double()}, {"dsps", thresholds.dsps.to_double()}};
    auto sj = search_json(result);
    sj.erase("selected");
    report["search"] = sj;
    report["candidates"] = ordered_json::array();
    err << "search: " << result.filtered_count << "/" << result.total_count << " pass, "
        << result.selected.size() << " selected\n";

    if (!result.selected.empty()) {
      const auto ds = stage("data", [&] { return load_dataset(f.data, f.train.n); });
      const auto config = stage("data", [&] { return model_config(f.train, ds); });
      const auto data = split(ds);
      const auto tw = test_windows(ds);
      const auto tt = test_targets(ds);
      const auto cfg = train_config(f.train, g.seed);
      const auto threads = g.threads == 0 ? 1 : g.threads;

      const auto [float_model, float_report] =
          stage("train[float]", [&] { return train(init_model(config, g.seed), data, cfg); });
      const double float_rmse = rmse(predict(float_model, tw), tt, ds.scaler, ds.target_index);
      stage("train[float]", [&] {
        save_model((dir / "float.json").string(), ModelFile{float_model, preprocessing_of(ds), std::nullopt});
        return 0;
      });
      manifest["outputs"].push_back("float.json");
      report["float"] = {{"rmse", float_rmse}, {"best_epoch", float_report.best_epoch},
                         {"epochs_run", float_report.epochs.size()}, {"model", "float.json"}};
      err << "float: test RMSE " << fmt(float_rmse) << "\n";

      for (std::size_t i = 0; i < result.selected.size(); ++i) {
        const auto& cand = result.selected[i];
        const std::string tag = "candidate-" + std::to_string(i + 1);
        auto qcfg = cfg;
        qcfg.qat = cand.combo;
        const auto [qat_model, qat_report] = stage("qat[" + cand.combo.to_string() + "]", [&] {
          return train_qat(init_model(config, g.seed), data, qcfg);
        });
        const auto qm = stage("quantize[" + cand.combo.to_string() + "]", [&] {
          return quantize_model(qat_model, cand.combo, *qat_model.qat_ranges);
        });
        const double q_rmse = stage("eval[" + cand.combo.to_string() + "]", [&] {
          return rmse(predict_quantized(qm, tw, threads), tt, ds.scaler, ds.target_index);
        });
        stage("save[" + cand.combo.to_string() + "]", [&] {
          save_model((dir / (tag + ".json")).string(), ModelFile{qm, preprocessing_of(ds), std::nullopt});
          return 0;
        });
        manifest["outputs"].push_back(tag + ".json");
        ordered_json c;
        c["search_rank"] = i + 1;
        c["combo"] = combo_json(cand.combo);
        c["score"] = cand.score;
        c["estimate"] = estimate_json(cand.estimate);
        c["rmse"] = q_rmse;
        c["rmse_ratio"] = float_rmse > 0 ? q_rmse / float_rmse : 0.0;
        c["best_epoch"] = qat_report.best_epoch;
        c["model"] = tag + ".json";
        report["candidates"].push_back(std::move(c));
        err << tag << " " << cand.combo.to_string() << ": integer RMSE " << fmt(q_rmse) << "\n";
      }
      // Rank by measured error; ties keep search order.
      auto& cands = report["candidates"];
      std::stable_sort(cands.begin(), cands.end(), [](const ordered_json& a, const ordered_json& b) {
        return a["rmse"].get<double>() < b["rmse"].get<double>();
      });
      for (std::size_t i = 0; i < cands.size(); ++i) cands[i]["rank"] = i + 1;
    }
  } catch (const Error&) {
    manifest["status"] = "failed";
    flush_manifest();
    throw;
  }
  write_text(dir / "report.json", report.dump(2) + "\n");
  manifest["outputs"].push_back("report.json");
  manifest["status"] = "ok";
  flush_manifest();

  if (g.json) {
    ordered_json j = report;
    j["run_dir"] = dir.string();
    out << j.dump(2) << "\n";
  } else {
    const auto& s = report["search"];
    out << "run " << dir.string() << "\n";
    out << "search: " << s["passed"].get<std::size_t>() << "/" << s["total"].get<std::size_t>()
        << " passed, reduction " << fixed1(s["reduction_pct"].get<double>()) << "%\n";
    if (report.contains("float")) out << "float RMSE " << fmt(report["float"]["rmse"].get<double>()) << "\n";
    for (const auto& c : report["candidates"]) {
      out << "#" << c["rank"].get<std::size_t>() << " ";
      for (std::size_t k = 0; k < c["combo"].size(); ++k) out << (k ? "," : "") << c["combo"][k].get<int>();
      out << "  score " << c["score"].get<int>() << "  luts " << fixed1(c["estimate"]["luts"].get<double>())
          << "  RMSE " << fmt(c["rmse"].get<double>()) << "\n";
    }
  }
  return 0;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kInternal:
      return 3;
    default:
      return 2;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Resource-aware mixed-precision quantization toolkit", "mpq"};
  app.require_subcommand(1);
  Globals g;
  bool version = false;
  app.add_flag("--json", g.json, "Machine-readable JSON on stdout");
  app.add_option("--threads", g.threads, "Worker threads (default: all cores for search, 1 otherwise)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_flag("--version", version, "Print versions and exit");
  app.set_version_flag();

  auto* kb = app.add_subcommand("kb", "Knowledge database tools");
  kb->require_subcommand(1);
  std::string kb_reports, kb_out, kb_file, kb_component;
  int kb_n = 12;
  auto* kb_build = kb->add_subcommand("build", "Aggregate synthesis reports");
  kb_build->add_option("--reports", kb_reports, "Directory of report CSVs")->required();
  kb_build->add_option("--out", kb_out, "Database JSON to write")->required();
  auto* kb_validate = kb->add_subcommand("validate", "Check a database for completeness");
  kb_validate->add_option("file", kb_file, "Database JSON (default: bundled)");
  auto* kb_show = kb->add_subcommand("show", "Print the table for one sequence length");
  kb_show->add_option("file", kb_file, "Database JSON (default: bundled)");
  kb_show->add_option("--n", kb_n, "Sequence length")->required();
  kb_show->add_option("--component", kb_component, "Only this component");

  std::string est_kb, est_combo, est_policy = "max";
  int est_n = 12;
  bool est_overhead = false;
  auto* est = app.add_subcommand("estimate", "Estimate utilization of a combination");
  est->add_option("--kb", est_kb, "Database JSON (default: bundled)");
  est->add_option("--n", est_n, "Sequence length")->required();
  est->add_option("--combo", est_combo, "Ten bitwidths, e.g. 8,8,6,8,6,4,8,8,8,8")->required();
  est->add_flag("--overhead", est_overhead, "Include overhead components");
  est->add_option("--policy", est_policy, "Overhead column: max, mode or per-resource");
  est->add_flag("--json", g.json, "JSON output");

  SearchFlags sf;
  auto* srch = app.add_subcommand("search", "Threshold filter and score ranking");
  srch->add_option("--kb", sf.kb, "Database JSON (default: bundled)");
  srch->add_option("--n", sf.n, "Sequence length")->required();
  add_threshold_flags(srch, sf.thresholds);
  srch->add_option("--top", sf.top, "Candidates to keep");
  srch->add_option("--combos", sf.combos, "Candidate list instead of the full sweep");
  srch->add_flag("--overhead", sf.overhead, "Include overhead components");
  srch->add_option("--policy", sf.policy, "Overhead column: max, mode or per-resource");
  srch->add_option("--out", sf.out, "Also write the JSON result here");
  srch->add_option("--histogram", sf.histogram, "Emit a CSV histogram of this resource");
  srch->add_option("--bins", sf.bins, "Histogram bins");
  srch->add_flag("--json", g.json, "JSON output");

  TrainCmd tf;
  auto* trn = app.add_subcommand("train", "Train a float or QAT model");
  add_data_flags(trn, tf.data, true);
  add_train_flags(trn, tf.train);
  trn->add_option("--qat", tf.qat, "Quantization-aware training at this combination");
  trn->add_option("--out", tf.out, "Model JSON to write")->required();
  trn->add_option("--report", tf.report, "Training report JSON");
  trn->add_option("--seed", g.seed, "Random seed");
  trn->add_flag("--json", g.json, "JSON output");

  QuantizeCmd qf;
  auto* qnt = app.add_subcommand("quantize", "Quantize a float model");
  qnt->add_option("--model", qf.model, "Float model JSON")->required();
  qnt->add_option("--combo", qf.combo, "Bitwidth combination (default: the QAT one)");
  add_data_flags(qnt, qf.data, false);
  qnt->add_option("--out", qf.out, "Quantized model JSON")->required();
  qnt->add_flag("--json", g.json, "JSON output");

  EvalCmd ef;
  auto* evl = app.add_subcommand("eval", "RMSE of a model on a CSV");
  evl->add_option("--model", ef.model, "Model JSON")->required();
  add_data_flags(evl, ef.data, true);
  evl->add_option("--split", ef.split, "test or all");
  evl->add_flag("--json", g.json, "JSON output");

  EvalCmd inf_f;
  auto* inf = app.add_subcommand("infer", "Predictions for every window of a CSV");
  inf->add_option("--model", inf_f.model, "Model JSON")->required();
  add_data_flags(inf, inf_f.data, true);
  inf->add_flag("--json", g.json, "JSON output");

  PipelineCmd pf;
  auto* pipe = app.add_subcommand("pipeline", "Search, QAT, quantize and evaluate");
  pipe->add_option("--kb", pf.kb, "Database JSON (default: bundled)");
  add_data_flags(pipe, pf.data, true);
  add_train_flags(pipe, pf.train);
  add_threshold_flags(pipe, pf.thresholds);
  pipe->add_option("--top", pf.top, "Candidates to validate");
  pipe->add_flag("--overhead", pf.overhead, "Include overhead components in the search");
  pipe->add_option("--run-dir", pf.run_dir, "Output directory (default: runs/<stamp>-<hash>)");
  pipe->add_option("--seed", g.seed, "Random seed");
  pipe->add_flag("--json", g.json, "JSON output");

  for (auto* sub : {est, srch, trn, qnt, evl, inf, pipe}) sub->add_option("--threads", g.threads, "Worker threads");

  if (std::find(args.begin(), args.end(), "--version") != args.end()) {
    out << "mpq " << MPQ_VERSION << " (kb schema " << kDatabaseVersion << ", model schema "
        << kModelFileVersion << ")\n";
    return 0;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (kb_build->parsed()) return cmd_kb_build(kb_reports, kb_out, g, out);
    if (kb_validate->parsed()) return cmd_kb_validate(kb_file, g, out);
    if (kb_show->parsed()) return cmd_kb_show(kb_file, kb_n, kb_component, g, out);
    if (est->parsed()) return cmd_estimate(est_kb, est_n, est_combo, est_overhead, est_policy, g, out);
    if (srch->parsed()) return cmd_search(sf, g, out, err);
    if (trn->parsed()) return cmd_train(tf, g, out, err);
    if (qnt->parsed()) return cmd_quantize(qf, g, out);
    if (evl->parsed()) return cmd_eval(ef, g, out);
    if (inf->parsed()) return cmd_infer(inf_f, g, out);
    if (pipe->parsed()) return cmd_pipeline(pf, g, args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
  err << app.help();
  return 1;
}

}  // namespace mpq::cli

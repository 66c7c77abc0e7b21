#include "mpq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mpq/backward.hpp"
#include "mpq/error.hpp"

namespace mpq {
namespace {

std::vector<Matrix*> trainable(FloatModel& m) {
  std::vector<Matrix*> out;
  m.for_each_tensor([&](std::string_view, Matrix& t, FloatModel::Role role) {
    if (role == FloatModel::Role::kTrainable) out.push_back(&t);
  });
  return out;
}

class Adam {
 public:
  Adam(const std::vector<Matrix*>& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix*>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& g = *grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = cfg_.adam_beta1 * m[k] + (1.0 - cfg_.adam_beta1) * g[k];
        v[k] = cfg_.adam_beta2 * v[k] + (1.0 - cfg_.adam_beta2) * g[k] * g[k];
        p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t t_ = 0;
};

void update_running(BatchNormParams& bn, const BatchNormCache& bc, std::size_t rows) {
  const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  for (std::size_t c = 0; c < bn.running_mean.size(); ++c) {
    bn.running_mean[c] = (1.0 - kBatchNormMomentum) * bn.running_mean[c] + kBatchNormMomentum * bc.batch_mean[c];
    bn.running_var[c] =
        (1.0 - kBatchNormMomentum) * bn.running_var[c] + kBatchNormMomentum * bc.batch_var[c] * unbias;
  }
}

// Exponential moving average of per-junction ranges.
class RangeTracker {
 public:
  RangeTracker(const CascadePlan& plan, double decay) : plan_(plan), decay_(decay) {}

  std::optional<QuantParams> observe(Junction j, const Matrix& m) {
    const auto [lo_it, hi_it] = std::minmax_element(m.values().begin(), m.values().end());
    auto& r = ranges_[index_of(j)];
    if (!r) {
      r = std::make_pair(*lo_it, *hi_it);
    } else {
      r->first = decay_ * r->first + (1.0 - decay_) * *lo_it;
      r->second = decay_ * r->second + (1.0 - decay_) * *hi_it;
    }
    return params(j);
  }

  std::optional<QuantParams> params(Junction j) const {
    const auto& r = ranges_[index_of(j)];
    if (!r) return std::nullopt;
    return calibrate_range(r->first, r->second, junction_bitwidth(plan_, j), junction_is_signed(j));
  }

  const ActivationRanges& ranges() const { return ranges_; }

 private:
  const CascadePlan& plan_;
  double decay_;
  ActivationRanges ranges_;
};

Matrix batch_targets(const std::vector<double>& targets, const std::vector<std::size_t>& idx,
                     std::size_t begin, std::size_t end) {
  Matrix t(end - begin, 1);
  for (std::size_t i = begin; i < end; ++i) t(i - begin, 0) = targets[idx[i]];
  return t;
}

void check_data(const FloatModel& model, const std::vector<Matrix>& windows,
                const std::vector<double>& targets, std::string_view what) {
  if (windows.size() != targets.size()) {
    fail(ErrorKind::kValidation, std::string(what) + " windows and targets differ in count");
  }
  for (const auto& w : windows) {
    if (w.rows() != model.config.seq_len || w.cols() != model.config.input_dim) {
      fail(ErrorKind::kValidation, std::string(what) + " window shape " + std::to_string(w.rows()) +
                                       "x" + std::to_string(w.cols()) + " does not match the model");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0 || patience == 0 || batch_size == 0 || lr_halving_period == 0) {
    fail(ErrorKind::kValidation, "epochs, patience, batch size and halving period must be positive");
  }
  if (patience > epochs) fail(ErrorKind::kValidation, "patience exceeds epochs");
  if (!(lr > 0) || !(adam_eps > 0)) fail(ErrorKind::kValidation, "lr and eps must be positive");
  if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1)) {
    fail(ErrorKind::kValidation, "Adam betas must lie in (0, 1)");
  }
  if (!(ema_decay > 0 && ema_decay < 1)) fail(ErrorKind::kValidation, "EMA decay must lie in (0, 1)");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return std::ldexp(lr, -static_cast<int>(epoch / lr_halving_period));
}

std::vector<double> predict(const FloatModel& model, const std::vector<Matrix>& windows,
                            std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(windows.size());
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(windows.size(), start + batch_size);
    std::vector<Matrix> chunk(windows.begin() + static_cast<std::ptrdiff_t>(start),
                              windows.begin() + static_cast<std::ptrdiff_t>(end));
    const auto r = forward_float(model, stack_windows(chunk), ForwardMode::kEval);
    for (std::size_t i = 0; i < r.y.rows(); ++i) out.push_back(r.y(i, 0));
  }
  return out;
}

double evaluate_mse(const FloatModel& model, const std::vector<Matrix>& windows,
                    const std::vector<double>& targets, const CascadePlan* plan) {
  if (windows.empty()) return 0.0;
  std::optional<Calibration> calibration;
  if (plan != nullptr && model.qat_ranges) calibration = calibration_from_ranges(*model.qat_ranges, *plan);
  double sum = 0.0;
  constexpr std::size_t kBatch = 256;
  for (std::size_t start = 0; start < windows.size(); start += kBatch) {
    const std::size_t end = std::min(windows.size(), start + kBatch);
    std::vector<Matrix> chunk(windows.begin() + static_cast<std::ptrdiff_t>(start),
                              windows.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix x = stack_windows(chunk);
    const Matrix y = calibration ? forward_fake_quant(model, *plan, *calibration, x).y
                                 : forward_float(model, x, ForwardMode::kEval).y;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double e = y(i, 0) - targets[start + i];
      sum += e * e;
    }
  }
  return sum / static_cast<double>(windows.size());
}

std::pair<FloatModel, TrainReport> train(FloatModel model, const TrainData& data,
                                         const TrainConfig& cfg) {
  cfg.validate();
  check_data(model, data.fit_windows, data.fit_targets, "training");
  check_data(model, data.val_windows, data.val_targets, "validation");
  if (data.fit_windows.empty()) fail(ErrorKind::kValidation, "no training pairs");
  if (model.config.output_dim != 1) fail(ErrorKind::kValidation, "training expects output_dim 1");

  std::optional<CascadePlan> plan;
  if (cfg.qat) plan = plan_cascade(*cfg.qat);
  std::optional<RangeTracker> tracker;
  if (plan) tracker.emplace(*plan, cfg.ema_decay);
  FakeQuantOptions train_opts;
  if (plan) {
    train_opts.plan = &*plan;
    train_opts.hook = [&](Junction j, const Matrix& m) { return tracker->observe(j, m); };
  }

  const auto params = trainable(model);
  Adam adam(params, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.fit_windows.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  FloatModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  // Without a validation split, training loss drives early stopping.
  const bool has_val = !data.val_windows.empty();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Matrix> chunk;
      chunk.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) chunk.push_back(data.fit_windows[order[i]]);
      const Matrix t = batch_targets(data.fit_targets, order, start, end);
      auto fwd = forward_with(model, stack_windows(chunk), ForwardMode::kTrain, train_opts);

      const double count = static_cast<double>(end - start);
      Matrix dy(end - start, 1);
      double loss = 0.0;
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        const double e = fwd.y(i, 0) - t(i, 0);
        loss += e * e;
        dy(i, 0) = 2.0 * e / count;
      }
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_index
            << " (lr " << lr << ")";
        fail(ErrorKind::kNumeric, msg.str());
      }
      loss_sum += loss;

      FloatModel grad = backward(model, fwd.cache, dy);
      adam.step(params, trainable(grad), lr);
      update_running(model.bn_mha, fwd.cache.bn_mha, fwd.cache.a_pre.rows());
      update_running(model.bn_ffn, fwd.cache.bn_ffn, fwd.cache.f_pre.rows());
    }
    if (tracker) model.qat_ranges = tracker->ranges();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = has_val ? evaluate_mse(model, data.val_windows, data.val_targets,
                                          plan ? &*plan : nullptr)
                           : rec.train_loss;
    if (!std::isfinite(rec.val_loss)) {
      fail(ErrorKind::kNumeric, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    report.epochs.push_back(rec);
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = model;
      report.best_epoch = epoch;
    } else if (epoch - report.best_epoch >= cfg.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  report.best_val_loss = best_val;
  return {std::move(best), std::move(report)};
}

std::pair<FloatModel, TrainReport> train_qat(FloatModel model, const TrainData& data,
                                             const TrainConfig& cfg) {
  if (!cfg.qat) fail(ErrorKind::kUsage, "quantization-aware training needs a bitwidth combination");
  return train(std::move(model), data, cfg);
}

}  // namespace mpq

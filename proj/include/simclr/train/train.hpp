#pragma once

#include "simclr/augment/policy.hpp"
#include "simclr/contrastive/losses.hpp"
#include "simclr/data/dataset.hpp"
#include "simclr/model/model.hpp"
#include "simclr/optim/optim.hpp"
#include "simclr/tensorgrad/serialize.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace simclr::train {

enum class TrainMode { contrastive, supervised };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);
std::string to_string(tg::BnScope scope);
tg::BnScope parse_bn_scope(const std::string& name);

/// Defaults follow the large-batch ImageNet recipe: batch 4096, 100 epochs,
/// 10 warmup epochs, LARS with lr 0.3 * BS / 256, weight decay 1e-6.
struct TrainConfig {
  Index batch_size = 4096;
  std::int64_t epochs = 100;
  double warmup_epochs = 10;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  optim::LrScaling lr_scaling = optim::LrScaling::linear;
  std::optional<double> base_lr;  // overrides the scaling rule
  bool lars_exclude_bn_and_bias = true;
  double lars_trust_coefficient = 1.0;
  int shards = 1;
  tg::BnScope bn_scope = tg::BnScope::global;
  bool positives_same_shard = true;
  contrastive::LossConfig loss;
  augment::AugmentationPolicy policy = augment::default_policy();
  model::EncoderConfig encoder;
  model::HeadConfig head;
  TrainMode mode = TrainMode::contrastive;
  std::uint64_t seed = 0;
  bool record_wall_time = false;

  double resolved_base_lr() const;
  /// Throws ContractError; dataset_size 0 skips the size checks.
  void validate(Index dataset_size = 0) const;
};

struct StepMetrics {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0;
  double loss = 0;
  double contrastive_acc = 0;  // supervised mode: training top-1
  double entropy = 0;          // supervised mode: predictive entropy
  double wall_ms = 0;
};

/// Count-weighted moments of the concatenated shards.
template <typename Scalar>
tg::ChannelMoments<Scalar> global_bn_moments(std::span<const tg::ShardMoments<Scalar>> shards) {
  if (shards.empty()) throw ContractError("global_bn_moments: no shard statistics");
  return tg::pooled_moments<Scalar>(shards);
}

/// Shard id of each of the 2N interleaved rows. Items are split into
/// contiguous groups of N / shards. With positives_same_shard false the second
/// view of an item goes to the next shard.
std::vector<int> shard_map(Index items, int shards, bool positives_same_shard);

/// Epoch order of dataset indices, seeded by (seed, epoch).
std::vector<Index> epoch_permutation(Index size, std::uint64_t seed, std::int64_t epoch);

/// Columns: step,epoch,lr,loss,contrastive_acc,entropy,wall_ms. wall_ms is 0
/// unless the config records wall time, so reruns produce identical files.
std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& rows);

/// Architecture keys stored in checkpoints so models can be rebuilt.
void put_architecture(tg::TensorArchive& ar, const model::EncoderConfig& enc, const model::HeadConfig& head);
std::pair<model::EncoderConfig, model::HeadConfig> get_architecture(const tg::TensorArchive& ar);

/// Thrown when the loss turns non-finite; carries the offending step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, StepMetrics record) : NumericError(what), record_(record) {}
  const StepMetrics& record() const { return record_; }

 private:
  StepMetrics record_;
};

template <typename Scalar>
class Trainer {
 public:
  Trainer(TrainConfig config, const data::LabeledImages& data)
      : config_(std::move(config)), data_(&data) {
    config_.validate(data.size());
    data.validate();
    model_ = std::make_unique<model::SimClrModel<Scalar>>(config_.encoder, config_.head, config_.seed);
    if (config_.mode == TrainMode::supervised) {
      if (data.classes < 2) throw ContractError("supervised training needs at least 2 classes");
      std::mt19937_64 rng(config_.seed ^ 0x5c1a551f1e5ull);
      const Index d = model_->encoder().representation_dim();
      classifier_.push_back({"classifier.weight", model::detail::he_normal<Scalar>({data.classes, d}, d, rng),
                             tg::ParamKind::weight});
      classifier_.push_back(
          {"classifier.bias", tg::Tensor<Scalar>::zeros({data.classes}, true), tg::ParamKind::bias});
    }
    schedule_.base_lr = config_.resolved_base_lr();
    schedule_.warmup_epochs = config_.warmup_epochs;
    schedule_.total_epochs = std::max<std::int64_t>(1, config_.epochs);
    schedule_.steps_per_epoch = steps_per_epoch();
  }

  const TrainConfig& config() const { return config_; }
  model::SimClrModel<Scalar>& model() { return *model_; }
  const model::SimClrModel<Scalar>& model() const { return *model_; }
  std::int64_t epoch() const { return epoch_; }
  std::int64_t step() const { return opt_.step; }
  const optim::ScheduleConfig& schedule() const { return schedule_; }
  /// Label classifier on h; empty in contrastive mode.
  const tg::ParameterList<Scalar>& classifier() const { return classifier_; }
  Index steps_per_epoch() const { return data_->size() / config_.batch_size; }
  bool finished() const { return epoch_ >= config_.epochs; }

  /// Parameters the optimizer updates: the encoder, then the projection head
  /// (contrastive) or the label classifier (supervised).
  tg::ParameterList<Scalar> trainable() const {
    tg::ParameterList<Scalar> ps = model_->encoder().parameters();
    const auto& extra = config_.mode == TrainMode::contrastive ? model_->head().parameters() : classifier_;
    ps.insert(ps.end(), extra.begin(), extra.end());
    return ps;
  }

  /// One pass over the data in the epoch's permuted order, last partial batch
  /// dropped. Step records are appended to `out` as they complete.
  void train_epoch(std::vector<StepMetrics>& out) {
    if (finished()) throw StateError("train_epoch: schedule already complete");
    const auto order = epoch_permutation(data_->size(), config_.seed, epoch_);
    const Index n = config_.batch_size;
    auto params = trainable();
    for (Index b = 0; b + n <= data_->size(); b += n) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Index> idx(order.begin() + b, order.begin() + b + n);
      StepMetrics m = train_step(params, idx);
      if (config_.record_wall_time) {
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      out.push_back(m);
    }
    ++epoch_;
  }

  std::vector<StepMetrics> train_epoch() {
    std::vector<StepMetrics> out;
    train_epoch(out);
    return out;
  }

  /// The batch rows forward pass used for training, exposed for checks on
  /// BN scope. Returns h for the interleaved views.
  tg::Tensor<Scalar> forward_h(const augment::ImageBatch& first, const augment::ImageBatch& second,
                               bool update_running = false) {
    tg::Tape<Scalar> tape;
    tape.set_enabled(false);
    auto ctx = train_context(first.count);
    ctx.update_running = update_running;
    return model::encode_pair(tape, *model_, first, second, ctx).h;
  }

  tg::TensorArchive to_archive(const std::string& config_digest = {}) const {
    tg::TensorArchive ar;
    ar.set_meta("kind", "simclr-checkpoint");
    ar.set_meta("mode", to_string(config_.mode));
    ar.set_meta("epoch", std::to_string(epoch_));
    ar.set_meta("step", std::to_string(opt_.step));
    ar.set_meta("config_digest", config_digest);
    put_architecture(ar, config_.encoder, config_.head);
    for (const auto& p : model_->parameters()) ar.put<Scalar>("param/" + p.name, p.tensor);
    for (const auto& p : classifier_) ar.put<Scalar>("param/" + p.name, p.tensor);
    const auto& bn = model_->encoder().bn_buffers();
    for (std::size_t i = 0; i < bn.size(); ++i) {
      const tg::Shape s{bn[i].running_mean.size()};
      ar.put<Scalar>("bn/" + std::to_string(i) + "/mean", s, bn[i].running_mean);
      ar.put<Scalar>("bn/" + std::to_string(i) + "/var", s, bn[i].running_var);
      ar.set_meta("bn/" + std::to_string(i) + "/accumulated", bn[i].accumulated ? "1" : "0");
    }
    ar.set_meta("opt/buffers", std::to_string(opt_.buffers.size()));
    for (std::size_t i = 0; i < opt_.buffers.size(); ++i) {
      ar.put<Scalar>("opt/" + std::to_string(i), tg::Shape{opt_.buffers[i].size()}, opt_.buffers[i]);
    }
    return ar;
  }

  void save(const std::filesystem::path& path, const std::string& config_digest = {}) const {
    to_archive(config_digest).save(path);
  }

  /// Restores parameters, BN statistics, optimizer buffers and the schedule
  /// position. The architecture must match this trainer's config.
  void restore(const tg::TensorArchive& ar) {
    if (!ar.has_meta("kind") || ar.meta("kind") != "simclr-checkpoint") {
      throw FormatError("checkpoint: not a training checkpoint");
    }
    if (ar.meta("mode") != to_string(config_.mode)) throw FormatError("checkpoint: training mode differs");
    for (auto& p : model_->parameters()) p.tensor.value() = ar.get<Scalar>("param/" + p.name, p.tensor.shape());
    for (auto& p : classifier_) p.tensor.value() = ar.get<Scalar>("param/" + p.name, p.tensor.shape());
    auto& bn = model_->encoder().bn_buffers();
    for (std::size_t i = 0; i < bn.size(); ++i) {
      const tg::Shape s{bn[i].running_mean.size()};
      bn[i].running_mean = ar.get<Scalar>("bn/" + std::to_string(i) + "/mean", s);
      bn[i].running_var = ar.get<Scalar>("bn/" + std::to_string(i) + "/var", s);
      bn[i].accumulated = ar.meta("bn/" + std::to_string(i) + "/accumulated") == "1";
    }
    const auto count = std::stoul(ar.meta("opt/buffers"));
    const auto params = trainable();
    if (count != 0 && count != params.size()) throw FormatError("checkpoint: optimizer buffer count mismatch");
    opt_.buffers.clear();
    for (std::size_t i = 0; i < count; ++i) {
      opt_.buffers.push_back(ar.get<Scalar>("opt/" + std::to_string(i), tg::Shape{params[i].tensor.numel()}));
    }
    opt_.step = std::stoll(ar.meta("step"));
    epoch_ = std::stoll(ar.meta("epoch"));
  }

 private:
  model::ForwardContext<Scalar> train_context(Index items) const {
    model::ForwardContext<Scalar> ctx;
    ctx.mode = tg::BnMode::train;
    ctx.scope = config_.bn_scope;
    if (config_.shards > 1) {
      ctx.shard_of_row = config_.mode == TrainMode::contrastive
                             ? shard_map(items, config_.shards, config_.positives_same_shard)
                             : single_view_shards(items);
      ctx.aggregate = [](std::span<const tg::ShardMoments<Scalar>> s) { return global_bn_moments<Scalar>(s); };
    }
    return ctx;
  }

  std::vector<int> single_view_shards(Index items) const {
    std::vector<int> m(static_cast<std::size_t>(items));
    const Index per = items / config_.shards;
    for (Index k = 0; k < items; ++k) m[static_cast<std::size_t>(k)] = static_cast<int>(k / per);
    return m;
  }

  StepMetrics train_step(tg::ParameterList<Scalar>& params, const std::vector<Index>& idx) {
    StepMetrics m;
    m.step = opt_.step;
    m.epoch = epoch_;
    m.lr = optim::lr_at(opt_.step, schedule_);
    const auto batch = data_->images.select(idx);
    std::vector<std::int64_t> ids(idx.begin(), idx.end());
    tg::zero_grads(params);
    tg::Tape<Scalar> tape;
    tg::Tensor<Scalar> loss;
    const auto epoch_key = static_cast<std::uint64_t>(epoch_);
    if (config_.mode == TrainMode::contrastive) {
      auto [first, second] = augment::make_view_pair(batch, ids, config_.policy, epoch_key);
      auto out = model::encode_pair(tape, *model_, first, second, train_context(batch.count));
      contrastive::ContrastiveMetrics cm;
      loss = contrastive::contrastive_loss(tape, out.z, config_.loss, &cm);
      m.contrastive_acc = cm.accuracy;
      m.entropy = cm.entropy;
    } else {
      const auto view = augment::make_single_view(batch, ids, config_.policy, epoch_key);
      const auto x = model::to_tensor<Scalar>(view);
      const auto h = model_->encoder().forward(tape, x, train_context(batch.count));
      const auto logits = tg::dense(tape, h, classifier_[0].tensor, classifier_[1].tensor);
      std::vector<int> labels;
      for (Index i : idx) labels.push_back(data_->labels[static_cast<std::size_t>(i)]);
      loss = tg::softmax_cross_entropy(tape, logits, std::span<const int>(labels));
      supervised_metrics(logits, labels, m);
    }
    m.loss = static_cast<double>(loss.item());
    if (!std::isfinite(m.loss)) {
      throw TrainingAborted("training aborted: non-finite loss at step " + std::to_string(m.step) + " (epoch " +
                                std::to_string(m.epoch) + ", lr " + std::to_string(m.lr) + ")",
                            m);
    }
    tape.backward(loss);
    optim::LarsConfig lars{config_.momentum, config_.weight_decay, config_.lars_trust_coefficient,
                           config_.lars_exclude_bn_and_bias};
    optim::lars_step(params, opt_, m.lr, lars);
    return m;
  }

  static void supervised_metrics(const tg::Tensor<Scalar>& logits, const std::vector<int>& labels, StepMetrics& m) {
    const auto L = logits.rows_view();
    double correct = 0, entropy = 0;
    for (Index i = 0; i < L.rows(); ++i) {
      Index arg = 0;
      L.row(i).maxCoeff(&arg);
      correct += arg == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double mx = static_cast<double>(L.row(i).maxCoeff());
      double z = 0;
      for (Index j = 0; j < L.cols(); ++j) z += std::exp(static_cast<double>(L(i, j)) - mx);
      for (Index j = 0; j < L.cols(); ++j) {
        const double lp = static_cast<double>(L(i, j)) - mx - std::log(z);
        entropy -= std::exp(lp) * lp;
      }
    }
    m.contrastive_acc = correct / static_cast<double>(L.rows());
    m.entropy = entropy / static_cast<double>(L.rows());
  }

  TrainConfig config_;
  const data::LabeledImages* data_;
  std::unique_ptr<model::SimClrModel<Scalar>> model_;
  tg::ParameterList<Scalar> classifier_;
  optim::OptimizerState<Scalar> opt_;
  optim::ScheduleConfig schedule_;
  std::int64_t epoch_ = 0;
};

struct RunFiles {
  std::filesystem::path checkpoint;  // written after every epoch
  std::filesystem::path metrics;     // CSV, rewritten after every epoch
  std::string config_digest;
  bool resume = false;  // continue from an existing checkpoint
};

/// Called after each completed epoch with the epoch index and its step rows.
using EpochCallback = std::function<void(std::int64_t epoch, std::span<const StepMetrics> rows)>;

template <typename Scalar>
struct PretrainResult {
  std::unique_ptr<Trainer<Scalar>> trainer;
  std::vector<StepMetrics> metrics;
};

/// Reads the rows of a metrics CSV written by write_metrics_csv.
std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path);

/// Full schedule with a checkpoint and metrics file after each epoch. With
/// epochs = 0 the initial checkpoint is written and the metrics are empty.
template <typename Scalar>
PretrainResult<Scalar> run_pretraining(const TrainConfig& config, const data::LabeledImages& data,
                                       const RunFiles& files = {}, const EpochCallback& on_epoch = {}) {
  PretrainResult<Scalar> r;
  r.trainer = std::make_unique<Trainer<Scalar>>(config, data);
  if (files.resume) {
    if (files.checkpoint.empty() || !std::filesystem::exists(files.checkpoint)) {
      throw StateError("resume requested but no checkpoint exists");
    }
    const auto ar = tg::TensorArchive::load(files.checkpoint);
    if (!files.config_digest.empty() && ar.meta("config_digest") != files.config_digest) {
      throw StateError("resume: checkpoint was written by a different config");
    }
    r.trainer->restore(ar);
    if (!files.metrics.empty() && std::filesystem::exists(files.metrics)) r.metrics = read_metrics_csv(files.metrics);
    const auto done = static_cast<std::size_t>(r.trainer->step());
    if (r.metrics.size() > done) r.metrics.resize(done);
  }
  auto persist = [&] {
    if (!files.checkpoint.empty()) r.trainer->save(files.checkpoint, files.config_digest);
    if (!files.metrics.empty()) write_metrics_csv(files.metrics, r.metrics);
  };
  if (config.epochs == 0) persist();
  while (!r.trainer->finished()) {
    const std::size_t first = r.metrics.size();
    try {
      r.trainer->train_epoch(r.metrics);
    } catch (const TrainingAborted& e) {
      r.metrics.push_back(e.record());
      if (!files.metrics.empty()) write_metrics_csv(files.metrics, r.metrics);
      throw;
    }
    persist();
    if (on_epoch) {
      on_epoch(r.trainer->epoch() - 1, std::span<const StepMetrics>(r.metrics).subspan(first));
    }
  }
  return r;
}

}  // namespace simclr::train

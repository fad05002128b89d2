#pragma once

#include "simclr/data/dataset.hpp"
#include "simclr/model/model.hpp"
#include "simclr/optim/optim.hpp"
#include "simclr/tensorgrad/serialize.hpp"
#include "simclr/train/train.hpp"
#include "simclr/util/digest.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace simclr::eval {

/// Features are always analysed in double precision, one row per item.
using FeatureMatrix = tg::Matrix<double>;

// Model access ---------------------------------------------------------------

/// Rebuilds a model from a training checkpoint (parameters and BN statistics).
template <typename Scalar>
std::unique_ptr<model::SimClrModel<Scalar>> model_from_archive(const tg::TensorArchive& ar) {
  const auto [enc, head] = train::get_architecture(ar);
  auto m = std::make_unique<model::SimClrModel<Scalar>>(enc, head, 0);
  for (auto& p : m->parameters()) p.tensor.value() = ar.get<Scalar>("param/" + p.name, p.tensor.shape());
  auto& bn = m->encoder().bn_buffers();
  for (std::size_t i = 0; i < bn.size(); ++i) {
    const tg::Shape s{bn[i].running_mean.size()};
    bn[i].running_mean = ar.get<Scalar>("bn/" + std::to_string(i) + "/mean", s);
    bn[i].running_var = ar.get<Scalar>("bn/" + std::to_string(i) + "/var", s);
    bn[i].accumulated = ar.meta("bn/" + std::to_string(i) + "/accumulated") == "1";
  }
  return m;
}

/// FNV-1a over parameter names and values.
template <typename Scalar>
std::uint64_t parameter_digest(const tg::ParameterList<Scalar>& params) {
  std::uint64_t h = fnv1a(std::string_view("params"));
  for (const auto& p : params) {
    h = fnv1a(std::string_view(p.name), h);
    const auto& v = p.tensor.value();
    h = fnv1a_values<Scalar>(std::span<const Scalar>(v.data(), static_cast<std::size_t>(v.size())), h);
  }
  return h;
}

/// Replaces the running BN statistics by the exact average of train-mode batch
/// moments over `images`. Used for encoders that never trained.
template <typename Scalar>
void recalibrate_bn(model::Encoder<Scalar>& encoder, const augment::ImageBatch& images, Index chunk = 256) {
  if (images.count == 0) throw ContractError("recalibrate_bn: no images");
  for (auto& b : encoder.bn_buffers()) b.accumulated = false;
  Index k = 0;
  for (Index start = 0; start < images.count; start += chunk, ++k) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min(images.count, start + chunk); ++i) idx.push_back(i);
    tg::Tape<Scalar> tape;
    tape.set_enabled(false);
    model::ForwardContext<Scalar> ctx;
    ctx.mode = tg::BnMode::train;
    ctx.update_running = true;
    ctx.bn_momentum = static_cast<Scalar>(k) / static_cast<Scalar>(k + 1);
    encoder.forward(tape, model::to_tensor<Scalar>(images.select(idx)), ctx);
  }
}

/// Frozen representation h, BN in eval mode, no augmentation.
template <typename Scalar>
FeatureMatrix extract_features(model::Encoder<Scalar>& encoder, const augment::ImageBatch& images, Index chunk = 256) {
  FeatureMatrix out(images.count, encoder.representation_dim());
  for (Index start = 0; start < images.count; start += chunk) {
    const Index n = std::min(chunk, images.count - start);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    tg::Tape<Scalar> tape;
    tape.set_enabled(false);
    model::ForwardContext<Scalar> ctx;
    ctx.mode = tg::BnMode::eval;
    ctx.update_running = false;
    const auto h = encoder.forward(tape, model::to_tensor<Scalar>(images.select(idx)), ctx);
    out.middleRows(start, n) = h.rows_view().template cast<double>();
  }
  return out;
}

/// z = g(h) for precomputed h.
template <typename Scalar>
FeatureMatrix project_features(model::ProjectionHead<Scalar>& head, const FeatureMatrix& h) {
  tg::Tape<Scalar> tape;
  tape.set_enabled(false);
  const tg::Matrix<Scalar> hs = h.cast<Scalar>();
  const auto z = head.forward(tape, tg::Tensor<Scalar>::from_matrix(hs));
  return z.rows_view().template cast<double>();
}

/// Raw pixels, one flattened image per row.
FeatureMatrix pixel_features(const augment::ImageBatch& images);

// Linear evaluation ----------------------------------------------------------

/// Per-column affine map to zero mean and unit variance, fitted on training
/// features. Constant columns keep scale 1.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_std;

  static Standardizer fit(const FeatureMatrix& x);
  FeatureMatrix apply(const FeatureMatrix& x) const;
};

struct LinearEvalConfig {
  int epochs = 90;
  Index batch_size = 256;
  std::optional<double> lr;  // default 0.1 * batch_size / 256
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool standardize = true;
  std::uint64_t seed = 0;

  double resolved_lr() const { return lr ? *lr : optim::linear_scaled_lr(batch_size, optim::kLinearEvalCoef); }
  void validate() const;
};

/// Multinomial logistic regression: logits = W x + b.
struct LinearClassifier {
  tg::Matrix<double> weight;  // classes x features
  tg::Vector<double> bias;
  std::optional<Standardizer> standardizer;

  tg::Matrix<double> logits(const FeatureMatrix& x) const;
  std::vector<int> predict(const FeatureMatrix& x) const;
};

/// Minibatch gradient descent with Nesterov momentum on softmax
/// cross-entropy, examples visited in a seeded order each epoch.
LinearClassifier train_linear_classifier(const FeatureMatrix& x, std::span<const int> labels, int classes,
                                         const LinearEvalConfig& config);

/// Fraction of predictions equal to the label.
double accuracy(std::span<const int> predicted, std::span<const int> labels);
/// Accuracy restricted to each class in turn (NaN for absent classes).
std::vector<double> per_class_accuracy(std::span<const int> predicted, std::span<const int> labels, int classes);

struct LinearEvalResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
};

LinearEvalResult linear_eval(const FeatureMatrix& train_x, std::span<const int> train_labels,
                             const FeatureMatrix& test_x, std::span<const int> test_labels, int classes,
                             const LinearEvalConfig& config);

enum class Representation { h, z };
std::string to_string(Representation r);

/// Linear evaluation of a frozen model. The model's parameters are checked
/// unchanged afterwards (StateError otherwise).
template <typename Scalar>
LinearEvalResult linear_eval(model::SimClrModel<Scalar>& m, const data::LabeledImages& train,
                             const data::LabeledImages& test, const LinearEvalConfig& config,
                             Representation rep = Representation::h) {
  if (train.classes != test.classes) throw ContractError("linear_eval: train and test class counts differ");
  const auto before = parameter_digest(m.parameters());
  FeatureMatrix xtr = extract_features(m.encoder(), train.images);
  FeatureMatrix xte = extract_features(m.encoder(), test.images);
  if (rep == Representation::z) {
    xtr = project_features(m.head(), xtr);
    xte = project_features(m.head(), xte);
  }
  auto r = linear_eval(xtr, train.labels, xte, test.labels, train.classes, config);
  if (parameter_digest(m.parameters()) != before) throw StateError("linear_eval: encoder parameters changed");
  return r;
}

template <typename Scalar>
LinearEvalResult linear_eval(const tg::TensorArchive& checkpoint, const data::LabeledImages& train,
                             const data::LabeledImages& test, const LinearEvalConfig& config,
                             Representation rep = Representation::h) {
  auto m = model_from_archive<Scalar>(checkpoint);
  return linear_eval(*m, train, test, config, rep);
}

// Fine-tuning ----------------------------------------------------------------

struct FineTuneConfig {
  std::optional<int> epochs;  // default by label fraction
  Index batch_size = 256;
  std::optional<double> lr;   // default 0.05 * batch_size / 256
  double momentum = 0.9;
  std::uint64_t seed = 0;

  /// 60 epochs for fractions up to 1%, 30 above.
  int resolved_epochs(double label_fraction) const;
  double resolved_lr() const { return lr ? *lr : optim::linear_scaled_lr(batch_size, optim::kFineTuneCoef); }
  void validate() const;
};

struct FineTuneResult {
  double test_accuracy = 0;
  tg::Matrix<double> classifier_weight;
  tg::Vector<double> classifier_bias;
};

/// Fresh classifier for fine-tuning, He-normal weight and zero bias.
template <typename Scalar>
tg::ParameterList<Scalar> init_classifier(Index features, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xf1e7f1e7ull);
  tg::ParameterList<Scalar> ps;
  ps.push_back({"classifier.weight", model::detail::he_normal<Scalar>({classes, features}, features, rng),
                tg::ParamKind::weight});
  ps.push_back({"classifier.bias", tg::Tensor<Scalar>::zeros({classes}, true), tg::ParamKind::bias});
  return ps;
}

/// Test accuracy of logits = W h + b on frozen eval-mode features.
template <typename Scalar>
double head_accuracy(model::Encoder<Scalar>& encoder, const tg::ParameterList<Scalar>& classifier,
                     const data::LabeledImages& test) {
  const FeatureMatrix h = extract_features(encoder, test.images);
  const auto& w = classifier[0].tensor;
  const tg::Matrix<double> W = w.matrix(w.dim(0), w.dim(1)).template cast<double>();
  const tg::Matrix<double> logits =
      (h * W.transpose()).rowwise() + classifier[1].tensor.value().template cast<double>().transpose();
  std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) logits.row(i).maxCoeff(&pred[static_cast<std::size_t>(i)]);
  return accuracy(pred, test.labels);
}

/// Trains the whole encoder plus a fresh classifier with Nesterov momentum,
/// crop-and-flip augmentation only, no regularization. Modifies `m`.
template <typename Scalar>
FineTuneResult fine_tune(model::SimClrModel<Scalar>& m, const data::LabeledImages& train,
                         const data::LabeledImages& test, double label_fraction, const FineTuneConfig& config) {
  config.validate();
  train.validate();
  if (train.size() == 0) throw ContractError("fine_tune: empty training set");
  if (train.classes != test.classes) throw ContractError("fine_tune: train and test class counts differ");
  auto& enc = m.encoder();
  auto classifier = init_classifier<Scalar>(enc.representation_dim(), train.classes, config.seed);
  tg::ParameterList<Scalar> params = enc.parameters();
  params.insert(params.end(), classifier.begin(), classifier.end());
  optim::OptimizerState<Scalar> state;
  const optim::NesterovConfig opt{config.momentum, 0.0};
  const auto policy = augment::crop_color_policy(std::nullopt, config.seed);
  const Index bs = std::min(config.batch_size, train.size());
  const int epochs = config.resolved_epochs(label_fraction);
  for (int e = 0; e < epochs; ++e) {
    const auto order = train::epoch_permutation(train.size(), config.seed ^ 0xf17eull, e);
    for (Index b = 0; b + bs <= train.size(); b += bs) {
      std::vector<Index> idx(order.begin() + b, order.begin() + b + bs);
      std::vector<std::int64_t> ids(idx.begin(), idx.end());
      std::vector<int> labels;
      for (Index i : idx) labels.push_back(train.labels[static_cast<std::size_t>(i)]);
      const auto view = augment::make_single_view(train.images.select(idx), ids, policy, static_cast<std::uint64_t>(e));
      tg::zero_grads(params);
      tg::Tape<Scalar> tape;
      model::ForwardContext<Scalar> ctx;
      const auto h = enc.forward(tape, model::to_tensor<Scalar>(view), ctx);
      const auto logits = tg::dense(tape, h, classifier[0].tensor, classifier[1].tensor);
      const auto loss = tg::softmax_cross_entropy(tape, logits, std::span<const int>(labels));
      if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("fine_tune: non-finite loss");
      tape.backward(loss);
      optim::nesterov_step(params, state, config.resolved_lr(), opt);
    }
  }
  FineTuneResult r;
  r.test_accuracy = head_accuracy(enc, classifier, test);
  const auto& w = classifier[0].tensor;
  r.classifier_weight = w.matrix(w.dim(0), w.dim(1)).template cast<double>();
  r.classifier_bias = classifier[1].tensor.value().template cast<double>();
  return r;
}

/// Fine-tunes a checkpoint on a class-balanced `label_fraction` of `train`.
template <typename Scalar>
FineTuneResult fine_tune(const tg::TensorArchive& checkpoint, const data::LabeledImages& train,
                         const data::LabeledImages& test, double label_fraction, const FineTuneConfig& config) {
  auto m = model_from_archive<Scalar>(checkpoint);
  const auto subset = data::class_balanced_subset(train, label_fraction, config.seed);
  return fine_tune(*m, subset, test, label_fraction, config);
}

// Transformation-prediction probe ---------------------------------------------

enum class ProbeKind { color_vs_gray, rotation, corruption, sobel };

std::string to_string(ProbeKind kind);
/// Throws ContractError on unknown names.
ProbeKind parse_probe_kind(const std::string& name);

struct ProbeConfig {
  int epochs = 20;
  std::optional<Index> hidden;  // default: feature dimension
  Index batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double gray_fraction = 0.2;  // share of grayscale images, majority baseline 0.8
  double noise_sigma = 0.1;    // corruption strength
  std::uint64_t seed = 0;

  void validate() const;
};

/// Images with the transformation label. Label proportions are exact
/// (rounded once per dataset) and assigned by a seeded shuffle.
struct ProbeDataset {
  augment::ImageBatch images;
  std::vector<int> labels;
  int classes = 0;
};

ProbeDataset make_probe_dataset(const augment::ImageBatch& source, ProbeKind kind, const ProbeConfig& config);

/// Frequency of the most common label, the accuracy of always guessing it.
double majority_baseline(std::span<const int> labels, int classes);
int probe_classes(ProbeKind kind);

struct ProbeReport {
  ProbeKind kind = ProbeKind::rotation;
  std::string representation;
  std::vector<double> per_class;
  double accuracy = 0;
  double baseline = 0;
};

/// One-hidden-layer ReLU MLP on standardized frozen features.
ProbeReport train_probe(const FeatureMatrix& train_x, std::span<const int> train_labels, const FeatureMatrix& test_x,
                        std::span<const int> test_labels, int classes, const ProbeConfig& config);

/// Same probe with the training labels permuted (negative control).
ProbeReport shuffled_label_control(const FeatureMatrix& train_x, std::span<const int> train_labels,
                                   const FeatureMatrix& test_x, std::span<const int> test_labels, int classes,
                                   const ProbeConfig& config);

struct ProbePair {
  ProbeReport h;
  ProbeReport z;
};

/// Probes h and g(h) of a frozen model. The head must map d to d.
template <typename Scalar>
ProbePair transform_probe(model::SimClrModel<Scalar>& m, const augment::ImageBatch& train_source,
                          const augment::ImageBatch& test_source, ProbeKind kind, const ProbeConfig& config) {
  config.validate();
  const Index d = m.encoder().representation_dim();
  if (m.head().config().kind == model::HeadKind::none || m.head().output_dim() != d) {
    throw ContractError("transform_probe: projection head must map " + std::to_string(d) + " to " +
                        std::to_string(d));
  }
  ProbeConfig test_cfg = config;
  test_cfg.seed = config.seed ^ 0x7e57ull;
  const auto tr = make_probe_dataset(train_source, kind, config);
  const auto te = make_probe_dataset(test_source, kind, test_cfg);
  const FeatureMatrix htr = extract_features(m.encoder(), tr.images);
  const FeatureMatrix hte = extract_features(m.encoder(), te.images);
  ProbePair out;
  out.h = train_probe(htr, tr.labels, hte, te.labels, tr.classes, config);
  out.z = train_probe(project_features(m.head(), htr), tr.labels, project_features(m.head(), hte), te.labels,
                      tr.classes, config);
  out.h.kind = out.z.kind = kind;
  out.h.representation = "h";
  out.z.representation = "g(h)";
  return out;
}

// Projection spectrum ----------------------------------------------------------

/// Squared real parts of the eigenvalues of a square matrix, descending.
std::vector<double> projection_spectrum(const tg::Matrix<double>& w);

// Pixel histograms -------------------------------------------------------------

/// Normalized histogram of all channel values over [0, 1] in `bins` equal
/// bins; value 1 falls in the last bin.
Eigen::VectorXd pixel_histogram(const augment::Image& img, int bins);

/// 0.5 * sum (p - q)^2 / (p + q) over bins where p + q > 0.
double chi_square_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

struct CropHistogramStats {
  double same_image = 0;       // mean distance between two crops of one image
  double different_image = 0;  // mean distance between crops of two images
  Index pairs = 0;
};

/// Mean chi-square distances of random-crop histograms over `pairs` sampled
/// pairs, no color distortion.
CropHistogramStats crop_histogram_stats(const augment::ImageBatch& images, Index pairs, int bins, std::uint64_t seed);

// Augmentation ablations -------------------------------------------------------

/// Policy for one grid cell: a crop on both branches, then t1 (and t2 when it
/// differs) on branch one only.
augment::AugmentationPolicy grid_cell_policy(augment::TransformKind t1, augment::TransformKind t2, double strength,
                                             std::uint64_t seed);

struct GridResult {
  std::vector<std::string> names;
  tg::Matrix<double> scores;  // n x (n + 1); last column = row mean; NaN for failed cells
  std::vector<std::string> errors;
};

/// Scores one policy, typically pretraining then linear evaluation.
using PolicyScorer = std::function<double(const augment::AugmentationPolicy&)>;

GridResult augmentation_grid(std::span<const augment::TransformKind> transforms, const PolicyScorer& score,
                             double strength = 1.0, std::uint64_t seed = 0);

/// CSV: header ",t1,...,tn,mean" then one row per transform.
std::string grid_csv(const GridResult& grid);

struct ColorSweepRow {
  double strength = 0;
  double contrastive = 0;  // linear eval of the contrastive encoder
  double supervised = 0;   // test accuracy of the supervised model
};

using ModeScorer = std::function<double(train::TrainMode, double strength)>;

/// Runs `score` for each strength in both modes; failures become NaN.
std::vector<ColorSweepRow> color_strength_sweep(std::span<const double> strengths, const ModeScorer& score);

// Experiment helpers -------------------------------------------------------------

/// Pretrains with `config` and returns the trainer for evaluation.
template <typename Scalar>
std::unique_ptr<train::Trainer<Scalar>> pretrain(const train::TrainConfig& config, const data::LabeledImages& data) {
  return train::run_pretraining<Scalar>(config, data).trainer;
}

/// Linear evaluation of a randomly initialized encoder with BN statistics
/// recalibrated on the training images.
template <typename Scalar>
LinearEvalResult random_encoder_linear_eval(const model::EncoderConfig& enc, const data::LabeledImages& train,
                                            const data::LabeledImages& test, const LinearEvalConfig& config,
                                            std::uint64_t seed) {
  model::SimClrModel<Scalar> m(enc, {model::HeadKind::none, 0, 0}, seed);
  recalibrate_bn(m.encoder(), train.images);
  return linear_eval(m, train, test, config);
}

/// Test accuracy of a supervised trainer's own classifier.
template <typename Scalar>
double supervised_accuracy(train::Trainer<Scalar>& t, const data::LabeledImages& test) {
  return head_accuracy(t.model().encoder(), t.classifier(), test);
}

}  // namespace simclr::eval

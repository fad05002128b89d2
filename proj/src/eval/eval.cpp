#include "simclr/eval/eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace simclr::eval {

FeatureMatrix pixel_features(const augment::ImageBatch& images) {
  FeatureMatrix x(images.count, images.image_size());
  for (Index i = 0; i < images.count; ++i) {
    x.row(i) = images.values.segment(i * images.image_size(), images.image_size()).cast<double>().matrix().transpose();
  }
  return x;
}

Standardizer Standardizer::fit(const FeatureMatrix& x) {
  if (x.rows() == 0) throw ContractError("Standardizer: no rows");
  Standardizer s;
  s.mean = x.colwise().mean();
  const FeatureMatrix centered = x.rowwise() - s.mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  s.inv_std = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
  return s;
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("Standardizer: feature width differs from the fitted one");
  return ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
}

void LinearEvalConfig::validate() const {
  if (epochs < 0) throw ContractError("linear eval: epochs must be >= 0");
  if (batch_size < 1) throw ContractError("linear eval: batch_size must be >= 1");
  if (resolved_lr() < 0) throw ContractError("linear eval: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ContractError("linear eval: momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ContractError("linear eval: weight_decay must be >= 0");
}

namespace {

void check_labels(const FeatureMatrix& x, std::span<const int> labels, int classes, const char* who) {
  if (static_cast<Index>(labels.size()) != x.rows()) {
    throw ContractError(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(x.rows()) + " feature rows");
  }
  if (classes < 2) throw ContractError(std::string(who) + ": need at least 2 classes");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ContractError(std::string(who) + ": label outside [0, classes)");
  }
}

// Softmax network on fixed features: optional ReLU hidden layer, then a
// dense output layer. Trained with minibatch Nesterov momentum.
struct SoftmaxNet {
  tg::ParameterList<double> params;
  bool hidden = false;

  tg::Tensor<double> forward(tg::Tape<double>& tape, const tg::Tensor<double>& x) const {
    if (!hidden) return tg::dense(tape, x, params[0].tensor, params[1].tensor);
    const auto a = tg::relu(tape, tg::dense(tape, x, params[0].tensor, params[1].tensor));
    return tg::dense(tape, a, params[2].tensor, params[3].tensor);
  }

  tg::Matrix<double> logits(const FeatureMatrix& x) const {
    tg::Tape<double> tape;
    tape.set_enabled(false);
    return forward(tape, tg::Tensor<double>::from_matrix(x)).rows_view();
  }
};

struct FitOptions {
  int epochs = 0;
  Index batch_size = 1;
  double lr = 0;
  double momentum = 0;
  double weight_decay = 0;
  std::uint64_t seed = 0;
};

void fit(SoftmaxNet& net, const FeatureMatrix& x, std::span<const int> labels, const FitOptions& o) {
  const Index n = x.rows();
  const Index bs = std::min(o.batch_size, n);
  optim::OptimizerState<double> state;
  const optim::NesterovConfig cfg{o.momentum, o.weight_decay};
  std::mt19937_64 rng(o.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < o.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index b = 0; b < n; b += bs) {
      const Index m = std::min(bs, n - b);
      tg::Matrix<double> xb(m, x.cols());
      std::vector<int> yb(static_cast<std::size_t>(m));
      for (Index k = 0; k < m; ++k) {
        const Index i = order[static_cast<std::size_t>(b + k)];
        xb.row(k) = x.row(i);
        yb[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(i)];
      }
      tg::zero_grads(net.params);
      tg::Tape<double> tape;
      const auto loss = tg::softmax_cross_entropy(tape, net.forward(tape, tg::Tensor<double>::from_matrix(xb)),
                                                  std::span<const int>(yb));
      if (!std::isfinite(loss.item())) throw NumericError("classifier training: non-finite loss");
      tape.backward(loss);
      optim::nesterov_step(net.params, state, o.lr, cfg);
    }
  }
}

std::vector<int> argmax_rows(const tg::Matrix<double>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace

tg::Matrix<double> LinearClassifier::logits(const FeatureMatrix& x) const {
  const FeatureMatrix xs = standardizer ? standardizer->apply(x) : x;
  return (xs * weight.transpose()).rowwise() + bias.transpose();
}

std::vector<int> LinearClassifier::predict(const FeatureMatrix& x) const { return argmax_rows(logits(x)); }

LinearClassifier train_linear_classifier(const FeatureMatrix& x, std::span<const int> labels, int classes,
                                         const LinearEvalConfig& config) {
  config.validate();
  check_labels(x, labels, classes, "linear eval");
  LinearClassifier c;
  if (config.standardize) c.standardizer = Standardizer::fit(x);
  const FeatureMatrix xs = c.standardizer ? c.standardizer->apply(x) : x;
  SoftmaxNet net;
  net.params.push_back({"linear.weight", tg::Tensor<double>::zeros({classes, x.cols()}, true), tg::ParamKind::weight});
  net.params.push_back({"linear.bias", tg::Tensor<double>::zeros({classes}, true), tg::ParamKind::bias});
  fit(net, xs, labels,
      {config.epochs, config.batch_size, config.resolved_lr(), config.momentum, config.weight_decay, config.seed});
  c.weight = net.params[0].tensor.matrix(classes, x.cols());
  c.bias = net.params[1].tensor.value();
  return c;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw ContractError("accuracy: prediction and label counts differ");
  if (labels.empty()) throw ContractError("accuracy: no labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<double> per_class_accuracy(std::span<const int> predicted, std::span<const int> labels, int classes) {
  if (predicted.size() != labels.size()) throw ContractError("per_class_accuracy: prediction and label counts differ");
  std::vector<double> hit(static_cast<std::size_t>(classes), 0.0), total(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    total[c] += 1;
    hit[c] += predicted[i] == labels[i] ? 1 : 0;
  }
  std::vector<double> out(static_cast<std::size_t>(classes));
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = total[c] > 0 ? hit[c] / total[c] : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

LinearEvalResult linear_eval(const FeatureMatrix& train_x, std::span<const int> train_labels,
                             const FeatureMatrix& test_x, std::span<const int> test_labels, int classes,
                             const LinearEvalConfig& config) {
  check_labels(test_x, test_labels, classes, "linear eval");
  if (train_x.cols() != test_x.cols()) throw DimensionError("linear eval: train and test feature widths differ");
  const auto c = train_linear_classifier(train_x, train_labels, classes, config);
  return {accuracy(c.predict(train_x), train_labels), accuracy(c.predict(test_x), test_labels)};
}

std::string to_string(Representation r) { return r == Representation::h ? "h" : "z"; }

// Fine-tuning ------------------------------------------------------------------

int FineTuneConfig::resolved_epochs(double label_fraction) const {
  if (epochs) return *epochs;
  return label_fraction <= 0.01 + 1e-12 ? 60 : 30;
}

void FineTuneConfig::validate() const {
  if (epochs && *epochs < 0) throw ContractError("fine-tune: epochs must be >= 0");
  if (batch_size < 1) throw ContractError("fine-tune: batch_size must be >= 1");
  if (resolved_lr() < 0) throw ContractError("fine-tune: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ContractError("fine-tune: momentum must lie in [0, 1)");
}

// Probes -------------------------------------------------------------------------

std::string to_string(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::color_vs_gray: return "color_vs_gray";
    case ProbeKind::rotation: return "rotation";
    case ProbeKind::corruption: return "corruption";
    case ProbeKind::sobel: return "sobel";
  }
  return "unknown";
}

ProbeKind parse_probe_kind(const std::string& name) {
  for (auto k : {ProbeKind::color_vs_gray, ProbeKind::rotation, ProbeKind::corruption, ProbeKind::sobel}) {
    if (to_string(k) == name) return k;
  }
  throw ContractError("unknown probe kind '" + name + "' (color_vs_gray, rotation, corruption, sobel)");
}

int probe_classes(ProbeKind kind) { return kind == ProbeKind::rotation ? 4 : 2; }

void ProbeConfig::validate() const {
  if (epochs < 0) throw ContractError("probe: epochs must be >= 0");
  if (hidden && *hidden < 1) throw ContractError("probe: hidden width must be >= 1");
  if (batch_size < 1) throw ContractError("probe: batch_size must be >= 1");
  if (lr < 0) throw ContractError("probe: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ContractError("probe: momentum must lie in [0, 1)");
  if (!(gray_fraction > 0 && gray_fraction < 1)) throw ContractError("probe: gray_fraction must lie in (0, 1)");
  if (!(noise_sigma > 0)) throw ContractError("probe: noise_sigma must be > 0");
}

ProbeDataset make_probe_dataset(const augment::ImageBatch& source, ProbeKind kind, const ProbeConfig& config) {
  config.validate();
  const Index n = source.count;
  if (n == 0) throw ContractError("probe: no source images");
  if (kind == ProbeKind::rotation && source.height != source.width) {
    throw ContractError("probe: rotation needs square images");
  }
  ProbeDataset out;
  out.classes = probe_classes(kind);
  out.labels.resize(static_cast<std::size_t>(n));
  if (kind == ProbeKind::rotation) {
    for (Index i = 0; i < n; ++i) out.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 4);
  } else {
    const double share = kind == ProbeKind::color_vs_gray ? config.gray_fraction : 0.5;
    const auto positives = static_cast<Index>(std::llround(share * static_cast<double>(n)));
    for (Index i = 0; i < n; ++i) out.labels[static_cast<std::size_t>(i)] = i < positives ? 1 : 0;
  }
  std::mt19937_64 rng(config.seed ^ 0x9b0beull);
  std::shuffle(out.labels.begin(), out.labels.end(), rng);
  out.images = augment::ImageBatch(n, source.height, source.width);
  for (Index i = 0; i < n; ++i) {
    const int label = out.labels[static_cast<std::size_t>(i)];
    augment::Image img = source.get(i);
    switch (kind) {
      case ProbeKind::color_vs_gray:
        if (label == 1) img = augment::to_grayscale(img);
        break;
      case ProbeKind::rotation:
        img = augment::rotate90(img, label);
        break;
      case ProbeKind::corruption:
        if (label == 1) {
          auto noise_rng = augment::make_stream(config.seed, 0, static_cast<std::uint64_t>(i), 0x401);
          img = augment::gaussian_noise(img, config.noise_sigma, noise_rng);
        }
        break;
      case ProbeKind::sobel:
        if (label == 1) img = augment::sobel(img);
        break;
    }
    out.images.set(i, img);
  }
  return out;
}

double majority_baseline(std::span<const int> labels, int classes) {
  if (labels.empty()) throw ContractError("majority_baseline: no labels");
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(labels.size());
}

ProbeReport train_probe(const FeatureMatrix& train_x, std::span<const int> train_labels, const FeatureMatrix& test_x,
                        std::span<const int> test_labels, int classes, const ProbeConfig& config) {
  config.validate();
  check_labels(train_x, train_labels, classes, "probe");
  check_labels(test_x, test_labels, classes, "probe");
  if (train_x.cols() != test_x.cols()) throw DimensionError("probe: train and test feature widths differ");
  const auto st = Standardizer::fit(train_x);
  const FeatureMatrix xtr = st.apply(train_x), xte = st.apply(test_x);
  const Index d = train_x.cols();
  const Index hidden = config.hidden.value_or(d);
  std::mt19937_64 rng(config.seed ^ 0x9e0b3ull);
  SoftmaxNet net;
  net.hidden = true;
  net.params.push_back({"probe.fc1.weight", model::detail::he_normal<double>({hidden, d}, d, rng), tg::ParamKind::weight});
  net.params.push_back({"probe.fc1.bias", tg::Tensor<double>::zeros({hidden}, true), tg::ParamKind::bias});
  net.params.push_back({"probe.fc2.weight", model::detail::he_normal<double>({classes, hidden}, hidden, rng),
                        tg::ParamKind::weight});
  net.params.push_back({"probe.fc2.bias", tg::Tensor<double>::zeros({classes}, true), tg::ParamKind::bias});
  fit(net, xtr, train_labels, {config.epochs, config.batch_size, config.lr, config.momentum, 0.0, config.seed});
  const auto pred = argmax_rows(net.logits(xte));
  ProbeReport r;
  r.accuracy = accuracy(pred, test_labels);
  r.per_class = per_class_accuracy(pred, test_labels, classes);
  r.baseline = majority_baseline(test_labels, classes);
  return r;
}

ProbeReport shuffled_label_control(const FeatureMatrix& train_x, std::span<const int> train_labels,
                                   const FeatureMatrix& test_x, std::span<const int> test_labels, int classes,
                                   const ProbeConfig& config) {
  std::vector<int> shuffled(train_labels.begin(), train_labels.end());
  std::mt19937_64 rng(config.seed ^ 0x5a0ff1edull);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto r = train_probe(train_x, shuffled, test_x, test_labels, classes, config);
  r.representation = "shuffled";
  return r;
}

// Spectrum and histograms ----------------------------------------------------------

std::vector<double> projection_spectrum(const tg::Matrix<double>& w) {
  if (w.rows() != w.cols() || w.rows() == 0) {
    throw ContractError("projection_spectrum: W must be square, got " + std::to_string(w.rows()) + "x" +
                        std::to_string(w.cols()));
  }
  const Eigen::MatrixXd dense = w;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(dense, false);
  if (solver.info() != Eigen::Success) throw NumericError("projection_spectrum: eigen decomposition failed");
  std::vector<double> out;
  for (Index i = 0; i < solver.eigenvalues().size(); ++i) out.push_back(std::pow(solver.eigenvalues()[i].real(), 2));
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

Eigen::VectorXd pixel_histogram(const augment::Image& img, int bins) {
  if (bins < 1) throw ContractError("pixel_histogram: bins must be >= 1");
  if (img.data.size() == 0) throw ContractError("pixel_histogram: empty image");
  Eigen::VectorXd h = Eigen::VectorXd::Zero(bins);
  for (Index i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
    h[std::min<Index>(bins - 1, static_cast<Index>(v * bins))] += 1;
  }
  return h / static_cast<double>(img.data.size());
}

double chi_square_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw DimensionError("chi_square_distance: histogram sizes differ");
  double d = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const double s = p[i] + q[i];
    if (s > 0) d += (p[i] - q[i]) * (p[i] - q[i]) / s;
  }
  return 0.5 * d;
}

CropHistogramStats crop_histogram_stats(const augment::ImageBatch& images, Index pairs, int bins, std::uint64_t seed) {
  if (images.count < 2) throw ContractError("crop_histogram_stats: need at least 2 images");
  if (pairs < 1) throw ContractError("crop_histogram_stats: pairs must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, images.count - 1);
  augment::CropOptions opt;
  opt.flip_probability = 0.0;
  CropHistogramStats s;
  s.pairs = pairs;
  for (Index k = 0; k < pairs; ++k) {
    const Index i = pick(rng);
    Index j = pick(rng);
    while (j == i) j = pick(rng);
    const auto a = images.get(i), b = images.get(j);
    const auto h = images.height, w = images.width;
    const auto c1 = pixel_histogram(augment::random_resized_crop(a, h, w, rng, opt), bins);
    const auto c2 = pixel_histogram(augment::random_resized_crop(a, h, w, rng, opt), bins);
    const auto c3 = pixel_histogram(augment::random_resized_crop(b, h, w, rng, opt), bins);
    s.same_image += chi_square_distance(c1, c2);
    s.different_image += chi_square_distance(c1, c3);
  }
  s.same_image /= static_cast<double>(pairs);
  s.different_image /= static_cast<double>(pairs);
  return s;
}

// Augmentation ablations ------------------------------------------------------------

augment::AugmentationPolicy grid_cell_policy(augment::TransformKind t1, augment::TransformKind t2, double strength,
                                             std::uint64_t seed) {
  augment::AugmentationPolicy p;
  p.mode = augment::PolicyMode::asymmetric;
  p.strength = strength;
  p.seed = seed;
  p.ops = {augment::make_op(augment::TransformKind::crop_resize), augment::make_op(t1)};
  if (t2 != t1) p.ops.push_back(augment::make_op(t2));
  p.validate();
  return p;
}

GridResult augmentation_grid(std::span<const augment::TransformKind> transforms, const PolicyScorer& score,
                             double strength, std::uint64_t seed) {
  const auto n = static_cast<Index>(transforms.size());
  if (n == 0) throw ContractError("augmentation_grid: no transforms");
  GridResult g;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.scores = tg::Matrix<double>::Constant(n, n + 1, nan);
  for (auto t : transforms) g.names.push_back(augment::to_string(t));
  for (Index i = 0; i < n; ++i) {
    double sum = 0;
    int ok = 0;
    for (Index j = 0; j < n; ++j) {
      const auto t1 = transforms[static_cast<std::size_t>(i)], t2 = transforms[static_cast<std::size_t>(j)];
      try {
        const double v = score(grid_cell_policy(t1, t2, strength, seed));
        g.scores(i, j) = v;
        if (std::isfinite(v)) {
          sum += v;
          ++ok;
        }
      } catch (const std::exception& e) {
        g.errors.push_back(augment::to_string(t1) + "," + augment::to_string(t2) + ": " + e.what());
      }
    }
    if (ok > 0) g.scores(i, n) = sum / ok;
  }
  return g;
}

std::string grid_csv(const GridResult& grid) {
  std::string out;
  for (const auto& name : grid.names) out += "," + name;
  out += ",mean\n";
  char buf[64];
  for (Index i = 0; i < grid.scores.rows(); ++i) {
    out += grid.names[static_cast<std::size_t>(i)];
    for (Index j = 0; j < grid.scores.cols(); ++j) {
      const double v = grid.scores(i, j);
      if (std::isnan(v)) {
        out += ",nan";
      } else {
        std::snprintf(buf, sizeof buf, ",%.6f", v);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

std::vector<ColorSweepRow> color_strength_sweep(std::span<const double> strengths, const ModeScorer& score) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto safe = [&](train::TrainMode mode, double s) {
    try {
      return score(mode, s);
    } catch (const std::exception&) {
      return nan;
    }
  };
  std::vector<ColorSweepRow> rows;
  for (double s : strengths) {
    rows.push_back({s, safe(train::TrainMode::contrastive, s), safe(train::TrainMode::supervised, s)});
  }
  return rows;
}

}  // namespace simclr::eval

#pragma once

#include "simclr/eval/eval.hpp"
#include "simclr/train/train.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simclr::cli {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

enum class Precision { f32, f64 };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::string dir;                   // cifar10 batch directory
  int classes = 10;
  Index train_count = 2048;  // cifar10: leading records kept
  Index test_count = 1000;
  Index image_size = 32;
  std::uint64_t seed = 0;
};

struct EvalSettings {
  eval::LinearEvalConfig linear;
  eval::FineTuneConfig fine_tune;
  double label_fraction = 0.1;
  eval::ProbeConfig probe;
  std::vector<augment::TransformKind> grid_transforms{
      augment::TransformKind::crop_resize, augment::TransformKind::cutout, augment::TransformKind::color_jitter,
      augment::TransformKind::sobel,        augment::TransformKind::gaussian_noise,
      augment::TransformKind::gaussian_blur, augment::TransformKind::rotate90};
  std::vector<double> color_strengths{0.125, 0.25, 0.5, 1.0};
};

/// Augmentation settings; per-kind parameters apply to every op of that kind.
struct AugmentSpec {
  std::vector<augment::TransformKind> ops{augment::TransformKind::crop_resize, augment::TransformKind::color_jitter,
                                          augment::TransformKind::color_drop, augment::TransformKind::gaussian_blur};
  double strength = 1.0;
  augment::PolicyMode mode = augment::PolicyMode::symmetric;
  std::uint64_t seed = 0;
  bool shuffle_jitter = false;
  augment::CropOptions crop;
  double jitter_probability = 0.8;
  double drop_probability = 0.2;
  double blur_probability = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double hflip_probability = 0.5;
  double rotate_probability = 1.0;
  double noise_sigma = 0.1;
  double cutout_fraction = 0.5;

  augment::AugmentationPolicy build() const;
};

/// Everything one invocation needs, serialized as flat `key = value` lines
/// grouped in [sections].
struct RunConfig {
  train::TrainConfig train;  // policy is taken from `augment`
  AugmentSpec augment;
  Precision precision = Precision::f32;
  DataConfig data;
  EvalSettings eval;

  /// The training config with the augmentation policy filled in.
  train::TrainConfig resolved_train() const;
  /// Throws ContractError when any part is invalid.
  void validate() const;
};

/// Canonical text: schema line, then every key of every section in a fixed
/// order. Doubles use the shortest exact decimal form.
std::string to_text(const RunConfig& config);

/// Starts from defaults and applies the document. Unknown sections or keys,
/// duplicates, a missing or different schema version, and unparsable values
/// raise ConfigError naming the line.
RunConfig parse_config(std::string_view text);

/// Applies one `section.key=value` assignment.
void apply_override(RunConfig& config, std::string_view assignment);

/// Section -> key -> value text, the same content as to_text.
std::map<std::string, std::map<std::string, std::string>> to_sections(const RunConfig& config);
RunConfig from_sections(const std::map<std::string, std::map<std::string, std::string>>& sections);

/// All recognised keys as `section.key`.
std::vector<std::string> known_keys();

/// FNV-1a of the canonical text, 16 hex digits.
std::string config_digest(const RunConfig& config);

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace simclr::cli

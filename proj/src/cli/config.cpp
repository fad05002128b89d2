#include "simclr/cli/config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

namespace simclr::cli {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& s) {
  if (s.empty()) throw ConfigError("expected a number, got an empty value");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (*end != '\0' || errno == ERANGE || !std::isfinite(v)) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno == ERANGE) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || *end != '\0' || errno == ERANGE) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

augment::TransformKind to_transform(const std::string& s) {
  const auto k = augment::parse_transform_kind(s);
  if (!k) throw ConfigError("unknown transform '" + s + "'");
  return *k;
}

std::vector<augment::TransformKind> to_transforms(const std::string& s) {
  std::vector<augment::TransformKind> out;
  for (const auto& item : split_list(s)) out.push_back(to_transform(item));
  return out;
}

std::string from_transforms(const std::vector<augment::TransformKind>& v) {
  return join(v, [](augment::TransformKind k) { return augment::to_string(k); });
}

std::vector<Index> to_ints(const std::string& s) {
  std::vector<Index> out;
  for (const auto& item : split_list(s)) out.push_back(to_int(item));
  return out;
}

std::string from_ints(const std::vector<Index>& v) {
  return join(v, [](Index i) { return std::to_string(i); });
}

template <typename T>
std::string from_optional(const std::optional<T>& v) {
  if (!v) return "auto";
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(*v);
  } else {
    return std::to_string(*v);
  }
}

struct Key {
  const char* section;
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define KEY_D(sec, name, field) \
  Key{sec, name, [](const RunConfig& c) { return format_double(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }}
#define KEY_I(sec, name, field)                                                   \
  Key{sec, name, [](const RunConfig& c) { return std::to_string(c.field); },      \
      [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(v)); }}
#define KEY_U(sec, name, field) \
  Key{sec, name, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_u64(v); }}
#define KEY_B(sec, name, field) \
  Key{sec, name, [](const RunConfig& c) { return from_bool(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }}
#define KEY_S(sec, name, field) \
  Key{sec, name, [](const RunConfig& c) { return c.field; }, [](RunConfig& c, const std::string& v) { c.field = v; }}
#define KEY_OPT_D(sec, name, field)                                  \
  Key{sec, name, [](const RunConfig& c) { return from_optional(c.field); }, \
      [](RunConfig& c, const std::string& v) { if (v == "auto") c.field.reset(); else c.field = to_double(v); }}
#define KEY_OPT_I(sec, name, field)                                  \
  Key{sec, name, [](const RunConfig& c) { return from_optional(c.field); }, \
      [](RunConfig& c, const std::string& v) {                            \
        if (v == "auto") c.field.reset(); else c.field = static_cast<std::decay_t<decltype(*c.field)>>(to_int(v)); }}
#define KEY_E(sec, name, field, to_str, parse) \
  Key{sec, name, [](const RunConfig& c) { return to_str(c.field); }, [](RunConfig& c, const std::string& v) { c.field = parse(v); }}

template <typename F>
auto rethrow_as_config(F&& f) {
  return [f](const std::string& v) {
    try {
      return f(v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "float" : "double"; }
Precision parse_precision(const std::string& s) {
  if (s == "float") return Precision::f32;
  if (s == "double") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (float, double)");
}
std::string policy_mode_name(augment::PolicyMode m) { return m == augment::PolicyMode::symmetric ? "symmetric" : "asymmetric"; }
augment::PolicyMode parse_policy_mode(const std::string& s) {
  if (s == "symmetric") return augment::PolicyMode::symmetric;
  if (s == "asymmetric") return augment::PolicyMode::asymmetric;
  throw ConfigError("unknown augmentation mode '" + s + "' (symmetric, asymmetric)");
}
std::string lr_scaling_name(optim::LrScaling r) { return optim::to_string(r); }
std::string stem_name(model::Stem s) { return model::to_string(s); }
std::string head_name(model::HeadKind k) { return model::to_string(k); }
std::string loss_name(contrastive::LossKind k) { return contrastive::to_string(k); }
std::string negatives_name(contrastive::NegativesMode m) { return contrastive::to_string(m); }
std::string mining_name(contrastive::Mining m) { return contrastive::to_string(m); }
std::string mode_name(train::TrainMode m) { return train::to_string(m); }
std::string scope_name(tg::BnScope s) { return train::to_string(s); }
const auto parse_lr = rethrow_as_config([](const std::string& s) { return optim::parse_lr_scaling(s); });
const auto parse_stem_c = rethrow_as_config([](const std::string& s) { return model::parse_stem(s); });
const auto parse_head_c = rethrow_as_config([](const std::string& s) { return model::parse_head_kind(s); });
const auto parse_loss_c = rethrow_as_config([](const std::string& s) { return contrastive::parse_loss_kind(s); });
const auto parse_neg_c = rethrow_as_config([](const std::string& s) { return contrastive::parse_negatives_mode(s); });
const auto parse_mining_c = rethrow_as_config([](const std::string& s) { return contrastive::parse_mining(s); });
const auto parse_mode_c = rethrow_as_config([](const std::string& s) { return train::parse_train_mode(s); });
const auto parse_scope_c = rethrow_as_config([](const std::string& s) { return train::parse_bn_scope(s); });

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      KEY_I("train", "batch_size", train.batch_size),
      KEY_I("train", "epochs", train.epochs),
      KEY_D("train", "warmup_epochs", train.warmup_epochs),
      KEY_D("train", "weight_decay", train.weight_decay),
      KEY_D("train", "momentum", train.momentum),
      KEY_E("train", "lr_scaling", train.lr_scaling, lr_scaling_name, parse_lr),
      KEY_OPT_D("train", "base_lr", train.base_lr),
      KEY_B("train", "lars_exclude_bn_and_bias", train.lars_exclude_bn_and_bias),
      KEY_D("train", "lars_trust_coefficient", train.lars_trust_coefficient),
      KEY_I("train", "shards", train.shards),
      KEY_E("train", "bn_scope", train.bn_scope, scope_name, parse_scope_c),
      KEY_B("train", "positives_same_shard", train.positives_same_shard),
      KEY_E("train", "mode", train.mode, mode_name, parse_mode_c),
      KEY_U("train", "seed", train.seed),
      KEY_E("train", "precision", precision, precision_name, parse_precision),
      KEY_B("train", "record_wall_time", train.record_wall_time),

      KEY_E("loss", "kind", train.loss.kind, loss_name, parse_loss_c),
      KEY_D("loss", "temperature", train.loss.temperature),
      KEY_D("loss", "margin", train.loss.margin),
      KEY_B("loss", "l2_normalize", train.loss.l2_normalize),
      KEY_E("loss", "negatives", train.loss.negatives, negatives_name, parse_neg_c),
      KEY_E("loss", "mining", train.loss.mining, mining_name, parse_mining_c),

      KEY_E("augment", "ops", augment.ops, from_transforms, to_transforms),
      KEY_D("augment", "strength", augment.strength),
      KEY_E("augment", "mode", augment.mode, policy_mode_name, parse_policy_mode),
      KEY_U("augment", "seed", augment.seed),
      KEY_B("augment", "shuffle_jitter", augment.shuffle_jitter),
      KEY_D("augment", "crop_area_min", augment.crop.area_min),
      KEY_D("augment", "crop_area_max", augment.crop.area_max),
      KEY_D("augment", "crop_ratio_min", augment.crop.ratio_min),
      KEY_D("augment", "crop_ratio_max", augment.crop.ratio_max),
      KEY_D("augment", "crop_flip_probability", augment.crop.flip_probability),
      KEY_D("augment", "jitter_probability", augment.jitter_probability),
      KEY_D("augment", "drop_probability", augment.drop_probability),
      KEY_D("augment", "blur_probability", augment.blur_probability),
      KEY_D("augment", "blur_sigma_min", augment.blur_sigma_min),
      KEY_D("augment", "blur_sigma_max", augment.blur_sigma_max),
      KEY_D("augment", "hflip_probability", augment.hflip_probability),
      KEY_D("augment", "rotate_probability", augment.rotate_probability),
      KEY_D("augment", "noise_sigma", augment.noise_sigma),
      KEY_D("augment", "cutout_fraction", augment.cutout_fraction),

      KEY_E("encoder", "stem", train.encoder.stem, stem_name, parse_stem_c),
      KEY_E("encoder", "widths", train.encoder.widths, from_ints, to_ints),
      KEY_E("encoder", "blocks", train.encoder.blocks, from_ints, to_ints),
      KEY_D("encoder", "width_multiplier", train.encoder.width_multiplier),

      KEY_E("head", "kind", train.head.kind, head_name, parse_head_c),
      KEY_I("head", "hidden_dim", train.head.hidden_dim),
      KEY_I("head", "output_dim", train.head.output_dim),

      KEY_S("data", "source", data.source),
      KEY_S("data", "dir", data.dir),
      KEY_I("data", "classes", data.classes),
      KEY_I("data", "train_count", data.train_count),
      KEY_I("data", "test_count", data.test_count),
      KEY_I("data", "image_size", data.image_size),
      KEY_U("data", "seed", data.seed),

      KEY_I("linear_eval", "epochs", eval.linear.epochs),
      KEY_I("linear_eval", "batch_size", eval.linear.batch_size),
      KEY_OPT_D("linear_eval", "lr", eval.linear.lr),
      KEY_D("linear_eval", "momentum", eval.linear.momentum),
      KEY_D("linear_eval", "weight_decay", eval.linear.weight_decay),
      KEY_B("linear_eval", "standardize", eval.linear.standardize),
      KEY_U("linear_eval", "seed", eval.linear.seed),

      KEY_OPT_I("fine_tune", "epochs", eval.fine_tune.epochs),
      KEY_I("fine_tune", "batch_size", eval.fine_tune.batch_size),
      KEY_OPT_D("fine_tune", "lr", eval.fine_tune.lr),
      KEY_D("fine_tune", "momentum", eval.fine_tune.momentum),
      KEY_U("fine_tune", "seed", eval.fine_tune.seed),
      KEY_D("fine_tune", "label_fraction", eval.label_fraction),

      KEY_I("probe", "epochs", eval.probe.epochs),
      KEY_OPT_I("probe", "hidden", eval.probe.hidden),
      KEY_I("probe", "batch_size", eval.probe.batch_size),
      KEY_D("probe", "lr", eval.probe.lr),
      KEY_D("probe", "momentum", eval.probe.momentum),
      KEY_D("probe", "gray_fraction", eval.probe.gray_fraction),
      KEY_D("probe", "noise_sigma", eval.probe.noise_sigma),
      KEY_U("probe", "seed", eval.probe.seed),

      KEY_E("ablation", "transforms", eval.grid_transforms, from_transforms, to_transforms),
      Key{"ablation", "color_strengths",
          [](const RunConfig& c) { return join(c.eval.color_strengths, [](double d) { return format_double(d); }); },
          [](RunConfig& c, const std::string& v) {
            c.eval.color_strengths.clear();
            for (const auto& item : split_list(v)) c.eval.color_strengths.push_back(to_double(item));
          }},
  };
  return table;
}

const Key& find_key(const std::string& section, const std::string& name) {
  for (const auto& k : keys()) {
    if (section == k.section && name == k.name) return k;
  }
  throw ConfigError("unknown key '" + section + "." + name + "'");
}

void set_key(RunConfig& c, const std::string& section, const std::string& name, const std::string& value) {
  const auto& k = find_key(section, name);
  try {
    k.set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(section + "." + name + ": " + e.what());
  }
}

}  // namespace

augment::AugmentationPolicy AugmentSpec::build() const {
  augment::AugmentationPolicy p;
  p.strength = strength;
  p.mode = mode;
  p.seed = seed;
  p.shuffle_jitter = shuffle_jitter;
  for (auto kind : ops) {
    auto op = augment::make_op(kind);
    op.crop = crop;
    op.sigma_min = blur_sigma_min;
    op.sigma_max = blur_sigma_max;
    op.noise_sigma = noise_sigma;
    op.cutout_fraction = cutout_fraction;
    switch (kind) {
      case augment::TransformKind::color_jitter: op.apply_probability = jitter_probability; break;
      case augment::TransformKind::color_drop: op.apply_probability = drop_probability; break;
      case augment::TransformKind::gaussian_blur: op.apply_probability = blur_probability; break;
      case augment::TransformKind::hflip: op.apply_probability = hflip_probability; break;
      case augment::TransformKind::rotate90: op.apply_probability = rotate_probability; break;
      default: break;
    }
    p.ops.push_back(op);
  }
  return p;
}

train::TrainConfig RunConfig::resolved_train() const {
  train::TrainConfig t = train;
  t.policy = augment.build();
  return t;
}

void RunConfig::validate() const {
  resolved_train().validate();
  if (data.source != "synthetic" && data.source != "cifar10") {
    throw ConfigError("data.source must be synthetic or cifar10, got '" + data.source + "'");
  }
  if (data.source == "cifar10" && data.dir.empty()) throw ConfigError("data.dir is required for cifar10");
  if (data.source == "synthetic" && (data.classes < 2 || data.classes > data::kShapeKinds)) {
    throw ConfigError("data.classes must lie in [2, " + std::to_string(data::kShapeKinds) + "]");
  }
  if (data.train_count < 1 || data.test_count < 1) throw ConfigError("data counts must be >= 1");
  if (data.image_size < 4) throw ConfigError("data.image_size must be >= 4");
  eval.linear.validate();
  eval.fine_tune.validate();
  eval.probe.validate();
  if (!(eval.label_fraction > 0 && eval.label_fraction <= 1)) {
    throw ConfigError("fine_tune.label_fraction must lie in (0, 1]");
  }
  if (eval.grid_transforms.empty()) throw ConfigError("ablation.transforms must not be empty");
  for (double s : eval.color_strengths) {
    if (!(s >= 0)) throw ConfigError("ablation.color_strengths must be >= 0");
  }
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(std::string(k.section) + "." + k.name);
  return out;
}

std::map<std::string, std::map<std::string, std::string>> to_sections(const RunConfig& config) {
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& k : keys()) out[k.section][k.name] = k.get(config);
  return out;
}

RunConfig from_sections(const std::map<std::string, std::map<std::string, std::string>>& sections) {
  RunConfig c;
  for (const auto& [section, entries] : sections) {
    for (const auto& [name, value] : entries) set_key(c, section, name, value);
  }
  return c;
}

std::string to_text(const RunConfig& config) {
  std::string out = "schema_version = " + std::to_string(kSchemaVersion) + "\n";
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      section = k.section;
      out += "\n[" + section + "]\n";
    }
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::set<std::string> seen;
  std::string section;
  bool schema_seen = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : keys()) known = known || section == k.section;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) {
      if (key != "schema_version") throw ConfigError(where + "key '" + key + "' outside any section");
      if (value != std::to_string(kSchemaVersion)) {
        throw ConfigError(where + "schema_version " + value + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
      }
      schema_seen = true;
      continue;
    }
    const std::string full = section + "." + key;
    if (!seen.insert(full).second) throw ConfigError(where + "duplicate key '" + full + "'");
    try {
      set_key(c, section, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  if (!schema_seen) throw ConfigError("missing schema_version line");
  return c;
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set_key(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
          trim(assignment.substr(eq + 1)));
}

std::string config_digest(const RunConfig& config) { return hex64(fnv1a(to_text(config))); }

}  // namespace simclr::cli

#include "simclr/train/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace simclr::train {

std::string to_string(TrainMode mode) { return mode == TrainMode::contrastive ? "contrastive" : "supervised"; }

TrainMode parse_train_mode(const std::string& name) {
  if (name == "contrastive") return TrainMode::contrastive;
  if (name == "supervised") return TrainMode::supervised;
  throw ContractError("unknown training mode '" + name + "' (contrastive, supervised)");
}

std::string to_string(tg::BnScope scope) { return scope == tg::BnScope::global ? "global" : "local"; }

tg::BnScope parse_bn_scope(const std::string& name) {
  if (name == "global") return tg::BnScope::global;
  if (name == "local") return tg::BnScope::local;
  throw ContractError("unknown bn mode '" + name + "' (global, local)");
}

double TrainConfig::resolved_base_lr() const {
  return base_lr ? *base_lr : optim::scaled_base_lr(batch_size, lr_scaling);
}

void TrainConfig::validate(Index dataset_size) const {
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (epochs < 0) throw ContractError("train: epochs must be >= 0");
  if (shards < 1) throw ContractError("train: shards must be >= 1");
  if (batch_size % shards != 0) {
    throw ContractError("train: batch_size " + std::to_string(batch_size) + " is not divisible by " +
                        std::to_string(shards) + " shards");
  }
  if (!positives_same_shard && shards < 2) throw ContractError("train: cross-shard positives need >= 2 shards");
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs > static_cast<double>(epochs))) {
    throw ContractError("train: warmup_epochs must lie in [0, epochs]");
  }
  if (weight_decay < 0) throw ContractError("train: weight_decay must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ContractError("train: momentum must lie in [0, 1)");
  if (base_lr && *base_lr < 0) throw ContractError("train: base_lr must be >= 0");
  if (!(lars_trust_coefficient > 0)) throw ContractError("train: lars_trust_coefficient must be > 0");
  loss.validate();
  policy.validate();
  encoder.validate();
  if (dataset_size > 0 && batch_size > dataset_size) {
    throw ContractError("train: batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                        std::to_string(dataset_size));
  }
}

std::vector<int> shard_map(Index items, int shards, bool positives_same_shard) {
  if (shards < 1 || items % shards != 0) throw ContractError("shard_map: items must divide evenly into shards");
  const Index per = items / shards;
  std::vector<int> map(static_cast<std::size_t>(2 * items));
  for (Index k = 0; k < items; ++k) {
    const int s = static_cast<int>(k / per);
    map[static_cast<std::size_t>(2 * k)] = s;
    map[static_cast<std::size_t>(2 * k + 1)] = positives_same_shard ? s : (s + 1) % shards;
  }
  return map;
}

std::vector<Index> epoch_permutation(Index size, std::uint64_t seed, std::int64_t epoch) {
  std::vector<Index> order(static_cast<std::size_t>(size));
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x0dd5u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::string metrics_csv_header() { return "step,epoch,lr,loss,contrastive_acc,entropy,wall_ms"; }

std::string metrics_csv_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.3f", static_cast<long long>(m.step),
                static_cast<long long>(m.epoch), m.lr, m.loss, m.contrastive_acc, m.entropy, m.wall_ms);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& rows) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << metrics_csv_header() << '\n';
    for (const auto& r : rows) out << metrics_csv_row(r) << '\n';
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read metrics " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != metrics_csv_header()) throw FormatError("metrics: unexpected header in " + path.string());
  std::vector<StepMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StepMetrics m;
    long long step = 0, epoch = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf,%lf", &step, &epoch, &m.lr, &m.loss,
                    &m.contrastive_acc, &m.entropy, &m.wall_ms) != 7) {
      throw FormatError("metrics: malformed row '" + line + "'");
    }
    m.step = step;
    m.epoch = epoch;
    rows.push_back(m);
  }
  return rows;
}

namespace {

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<Index> split_ints(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

}  // namespace

void put_architecture(tg::TensorArchive& ar, const model::EncoderConfig& enc, const model::HeadConfig& head) {
  ar.set_meta("encoder.stem", model::to_string(enc.stem));
  ar.set_meta("encoder.widths", join(enc.widths));
  ar.set_meta("encoder.blocks", join(enc.blocks));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", enc.width_multiplier);
  ar.set_meta("encoder.width_multiplier", buf);
  ar.set_meta("encoder.in_channels", std::to_string(enc.in_channels));
  ar.set_meta("head.kind", model::to_string(head.kind));
  ar.set_meta("head.hidden_dim", std::to_string(head.hidden_dim));
  ar.set_meta("head.output_dim", std::to_string(head.output_dim));
}

std::pair<model::EncoderConfig, model::HeadConfig> get_architecture(const tg::TensorArchive& ar) {
  model::EncoderConfig enc;
  model::HeadConfig head;
  try {
    enc.stem = model::parse_stem(ar.meta("encoder.stem"));
    enc.widths = split_ints(ar.meta("encoder.widths"));
    enc.blocks = split_ints(ar.meta("encoder.blocks"));
    enc.width_multiplier = std::stod(ar.meta("encoder.width_multiplier"));
    enc.in_channels = std::stoll(ar.meta("encoder.in_channels"));
    head.kind = model::parse_head_kind(ar.meta("head.kind"));
    head.hidden_dim = std::stoll(ar.meta("head.hidden_dim"));
    head.output_dim = std::stoll(ar.meta("head.output_dim"));
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("checkpoint architecture: ") + e.what());
  }
  return {enc, head};
}

}  // namespace simclr::train

#include <doctest.h>

#include "simclr/cli/cli.hpp"

#include <unistd.h>

#include <filesystem>
#include <sstream>

using namespace simclr;
using namespace simclr::cli;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("simclr_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTiny = R"(schema_version = 1
[train]
batch_size = 16
epochs = 2
warmup_epochs = 0
base_lr = 0.01
seed = 5
[loss]
temperature = 0.5
[encoder]
widths = 4,8
blocks = 1,1
[head]
kind = linear
output_dim = 8
[data]
classes = 3
train_count = 48
test_count = 24
image_size = 8
[linear_eval]
epochs = 3
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "simclr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path only_run(const fs::path& root, const std::string& prefix) {
  fs::path found;
  int n = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.path().filename().string().rfind(prefix, 0) == 0) {
      found = e.path();
      ++n;
    }
  }
  REQUIRE(n == 1);
  return found;
}

}  // namespace

TEST_CASE("default config text round-trips and shows the large-batch recipe") {
  const RunConfig c;
  const auto text = to_text(c);
  CHECK(to_text(parse_config(text)) == text);
  CHECK(text.find("batch_size = 4096") != std::string::npos);
  CHECK(text.find("epochs = 100") != std::string::npos);
  CHECK(text.find("warmup_epochs = 10") != std::string::npos);
  CHECK(text.find("weight_decay = 1e-06") != std::string::npos);
  CHECK(config_digest(c) == config_digest(parse_config(text)));
  CHECK(config_digest(c).size() == 16);
}

TEST_CASE("every key survives a non-default round trip") {
  RunConfig c = parse_config(kTiny);
  apply_override(c, "loss.temperature=0.25");
  apply_override(c, "train.base_lr=auto");
  apply_override(c, "augment.ops=crop_resize,sobel");
  apply_override(c, "train.precision=double");
  const auto back = parse_config(to_text(c));
  CHECK(to_text(back) == to_text(c));
  CHECK(back.train.loss.temperature == 0.25);
  CHECK_FALSE(back.train.base_lr.has_value());
  CHECK(back.precision == Precision::f64);
  CHECK(back.augment.ops.size() == 2);
  CHECK(from_sections(to_sections(c)).train.encoder.widths == c.train.encoder.widths);
}

TEST_CASE("shortest doubles parse back exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-6, 10.0, 4096.0, 0.3 * 4096 / 256}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(10.0) == "10");
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("config errors name the problem") {
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[train]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[nope]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nepochs = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[train]\nepochs = 1\nepochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[train]\nepochs = many\n"), ConfigError);
  try {
    parse_config("schema_version = 1\n[train]\n\nfoo = 3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  RunConfig c;
  CHECK_THROWS_AS(apply_override(c, "train.epochs"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "epochs=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "train.nope=3"), ConfigError);
  apply_override(c, "data.classes=11");
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dispatch exit codes") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"no-such-command"}).code == kExitUsage);
  CHECK(run({"print-config", "--no-such-flag"}).code == kExitUsage);
  CHECK(run({"print-config", "--set", "train.bogus=1"}).code == kExitUsage);
  CHECK(run({"linear-eval"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  const auto r = run({"print-config", "--set", "train.epochs=70"});
  CHECK(r.code == kExitOk);
  CHECK(parse_config(r.out).train.epochs == 70);
}

TEST_CASE("pretrain writes a complete run whose metadata restores the config") {
  const auto root = temp_dir("pretrain");
  write_text_atomic(root / "tiny.ini", kTiny);
  const auto r = run({"pretrain", "--config", (root / "tiny.ini").string(), "--run-root", (root / "runs").string()});
  REQUIRE(r.code == kExitOk);
  const auto dir = only_run(root / "runs", "pretrain-");
  for (const char* f : {"COMPLETE", "config.ini", "metadata.json", "checkpoint.bin", "metrics.csv"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK_FALSE(fs::exists(dir / "ERROR"));
  const auto restored = config_from_metadata(nlohmann::json::parse(read_text(dir / "metadata.json")));
  CHECK(to_text(restored) == read_text(dir / "config.ini"));
  CHECK(train::read_metrics_csv(dir / "metrics.csv").size() == 2 * 3);

  std::istringstream events(r.out);
  std::string line;
  int epochs = 0;
  while (std::getline(events, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j["event"] == "epoch") ++epochs;
  }
  CHECK(epochs == 2);

  const auto lin = run({"linear-eval", "--run", dir.string(), "--run-root", (root / "evals").string(),
                        "--representation", "both"});
  REQUIRE(lin.code == kExitOk);
  const auto edir = only_run(root / "evals", "linear-eval-");
  const auto res = nlohmann::json::parse(read_text(edir / "results.json"));
  CHECK(res.contains("h"));
  CHECK(res.contains("z"));
  CHECK(fs::exists(edir / "spectrum.csv"));
  fs::remove_all(root);
}

TEST_CASE("resuming an interrupted run reproduces the uninterrupted checkpoint") {
  const auto root = temp_dir("resume");
  write_text_atomic(root / "tiny.ini", kTiny);
  REQUIRE(run({"pretrain", "--config", (root / "tiny.ini").string(), "--run-root", (root / "a").string()}).code ==
          kExitOk);
  const auto full = only_run(root / "a", "pretrain-");

  const auto config = parse_config(kTiny);
  const auto dir = root / "b";
  fs::create_directories(dir);
  write_text_atomic(dir / "config.ini", to_text(config));
  {
    const auto corpus = load_corpus(config.data);
    auto t = config.resolved_train();
    t.policy.fill = augment::channel_means(corpus.train.images);
    train::Trainer<float> trainer(t, corpus.train);
    const auto rows = trainer.train_epoch();
    trainer.save(dir / "checkpoint.bin", config_digest(config));
    train::write_metrics_csv(dir / "metrics.csv", rows);
  }
  REQUIRE(run({"pretrain", "--resume", dir.string()}).code == kExitOk);
  CHECK(fs::exists(dir / "COMPLETE"));
  CHECK(read_text(dir / "checkpoint.bin") == read_text(full / "checkpoint.bin"));
  CHECK(read_text(dir / "metrics.csv") == read_text(full / "metrics.csv"));
  CHECK(run({"pretrain", "--resume", dir.string(), "--set", "train.epochs=3"}).code == kExitUsage);
  fs::remove_all(root);
}

TEST_CASE("a failing run leaves an ERROR marker and exits 1") {
  const auto root = temp_dir("error");
  const auto r = run({"pretrain", "--set", "data.source=cifar10", "--set", "data.dir=" + (root / "missing").string(),
                      "--run-root", (root / "runs").string()});
  CHECK(r.code == kExitFailure);
  const auto dir = only_run(root / "runs", "pretrain-");
  CHECK(fs::exists(dir / "ERROR"));
  CHECK_FALSE(fs::exists(dir / "COMPLETE"));
  fs::remove_all(root);
}

TEST_CASE("png round trip and run directory naming") {
  const auto root = temp_dir("png");
  augment::Image img(3, 5);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 256) / 255.0f;
  write_png(root / "a.png", img);
  CHECK(read_png(root / "a.png") == img);
  write_png(root / "b.png", img, 3);
  const auto big = read_png(root / "b.png");
  CHECK(big.height == 9);
  CHECK(big.at(1, 4, 7) == img.at(1, 1, 2));
  const auto d1 = make_run_dir(root, "x", "0123456789abcdef");
  const auto d2 = make_run_dir(root, "x", "0123456789abcdef");
  CHECK(d1 != d2);
  CHECK(d1.filename().string().rfind("x-", 0) == 0);
  fs::remove_all(root);
}

TEST_CASE("synthetic train and test corpora differ") {
  DataConfig d;
  d.classes = 3;
  d.train_count = 6;
  d.test_count = 6;
  d.image_size = 8;
  const auto c = load_corpus(d);
  CHECK(c.train.size() == 6);
  CHECK_FALSE((c.train.images.values == c.test.images.values).all());
}

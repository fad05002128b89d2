#pragma once

#include "simclr/cli/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

namespace simclr::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv, runs one subcommand, returns the exit code. JSON event lines
/// go to `out`, human-readable messages to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// $SIMCLR_RUN_ROOT, else ./runs.
std::filesystem::path default_run_root();

/// Creates <root>/<command>-<UTC timestamp>-<digest>; a numeric suffix keeps
/// directories unique, so reruns never overwrite.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& command,
                                   const std::string& digest);

/// Writes text to `path` via a temporary sibling and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// 8-bit RGB PNG, each pixel repeated `scale` times per axis.
void write_png(const std::filesystem::path& path, const augment::Image& img, int scale = 1);
/// Reads an 8-bit RGB PNG written by write_png (scale 1).
augment::Image read_png(const std::filesystem::path& path);

struct Corpus {
  data::LabeledImages train;
  data::LabeledImages test;
};

/// The synthetic corpus uses independent seeds for train and test.
Corpus load_corpus(const DataConfig& config);

/// Run metadata: schema, command, digests and the resolved config as
/// section -> key -> value strings.
nlohmann::json run_metadata(const RunConfig& config, const std::string& command);
/// Inverse of the config part of run_metadata.
RunConfig config_from_metadata(const nlohmann::json& metadata);

}  // namespace simclr::cli

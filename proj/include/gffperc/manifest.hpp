#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gffperc {

inline constexpr std::string_view kToolName = "gffperc";
inline constexpr std::string_view kToolVersion = "0.1.0";

// FNV-1a over raw bytes; the workhorse behind config and file hashes.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 14695981039346656037ULL);

// 16 lowercase hex digits, zero-padded.
std::string hex64(std::uint64_t v);

// Shortest round-trip decimal form (std::to_chars), so equal doubles print
// byte-identically in every report.
std::string format_double(double v);

// Comma-joined format_double values / the inverse.  parse_grid throws
// std::invalid_argument on empty input or unparseable entries.
std::string format_grid(std::span<const double> values);
std::vector<double> parse_grid(std::string_view text);

// Whole-file IO; both throw std::runtime_error naming the path on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Worker count for the task queue: the GFFPERC_THREADS environment variable
// takes precedence, then the command-line value, then 1.  Outputs never
// depend on the result -- tasks are merged by index -- so this is an
// execution detail, not configuration.
int resolve_threads(std::optional<int> flag_value);

// Complete record of one CLI run.  `config` holds every resolved setting
// that can influence report bytes (flags, seeds, grids, output format);
// `inputs` maps each input file to the hash of its content.  The manifest
// hash covers tool, version, command, config, and inputs -- not `argv`
// (a convenience copy for replay), and not the execution details `threads`
// and `wall_seconds`, which may differ between byte-identical runs.
struct RunManifest {
  std::string command;                        // e.g. "estimate hstar"
  std::vector<std::string> argv;              // replay vector, sans --threads
  std::map<std::string, std::string> config;  // resolved semantic settings
  std::map<std::string, std::string> inputs;  // input path -> content hash
  int threads = 1;
  double wall_seconds = 0.0;

  std::uint64_t hash() const;
  std::string hash_hex() const;

  // JSON with sorted keys.  Execution details (threads, wall_seconds) are
  // included only when requested: sidecar manifests carry them, report
  // payloads do not, so replayed reports stay byte-identical.
  std::string to_json(bool include_execution) const;
  static RunManifest from_json(const std::string& text);  // verifies the hash
};

}  // namespace gffperc

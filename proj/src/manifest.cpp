#include "gffperc/manifest.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include <json.hpp>

namespace gffperc {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_grid(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> parse_grid(std::string_view text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    std::string_view item = text.substr(pos, comma - pos);
    // trim surrounding spaces
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item.empty()) throw std::invalid_argument("parse_grid: empty entry");
    double v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc{} || res.ptr != item.data() + item.size())
      throw std::invalid_argument("parse_grid: cannot parse '" + std::string(item) + "'");
    out.push_back(v);
    pos = comma + 1;
    if (comma == text.size()) break;
  }
  if (out.empty()) throw std::invalid_argument("parse_grid: empty grid");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("cannot read file: " + path);
  return std::move(ss).str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("cannot write file: " + path);
}

int resolve_threads(std::optional<int> flag_value) {
  if (const char* env = std::getenv("GFFPERC_THREADS")) {
    int v = 0;
    auto res = std::from_chars(env, env + std::string_view(env).size(), v);
    if (res.ec == std::errc{} && v >= 1) return v;
  }
  int v = flag_value.value_or(1);
  return v < 1 ? 1 : v;
}

std::uint64_t RunManifest::hash() const {
  std::string canon;
  canon.reserve(256);
  canon.append(kToolName).append("\n").append(kToolVersion).append("\n");
  canon.append(command).append("\n");
  for (const auto& [k, v] : config) canon.append("c:").append(k).append("=").append(v).append("\n");
  for (const auto& [k, v] : inputs) canon.append("i:").append(k).append("=").append(v).append("\n");
  return fnv1a64(canon);
}

std::string RunManifest::hash_hex() const { return hex64(hash()); }

std::string RunManifest::to_json(bool include_execution) const {
  nlohmann::json j;
  j["tool"] = std::string(kToolName);
  j["version"] = std::string(kToolVersion);
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config;
  j["inputs"] = inputs;
  j["hash"] = hash_hex();
  if (include_execution) {
    j["threads"] = threads;
    j["wall_seconds"] = wall_seconds;
  }
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  if (j.contains("threads")) m.threads = j["threads"].get<int>();
  if (j.contains("wall_seconds")) m.wall_seconds = j["wall_seconds"].get<double>();
  const std::string stored = j.at("hash").get<std::string>();
  if (stored != m.hash_hex())
    throw std::runtime_error("manifest hash mismatch: stored " + stored + ", recomputed " +
                             m.hash_hex());
  return m;
}

}  // namespace gffperc

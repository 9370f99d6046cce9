// Command-line laboratory for level-set percolation of the zero-average
// Gaussian free field on finite regular graphs and of the Gaussian free
// field on the regular tree.
//
// Every run resolves its options into a manifest (command, settings, input
// hashes); reports embed the manifest hash, CSV as a leading comment line
// and JSON inside the "manifest" object.  `gffperc replay --manifest FILE`
// re-executes the recorded argument vector and reproduces the report bytes;
// worker threads never enter the hash because per-replica tasks are merged
// by index.
//
// Exit codes: 0 success, 2 when a reported check fails (audit conditions,
// experiment assertions), 1 on errors.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gffperc/coupling.hpp"
#include "gffperc/estimators.hpp"
#include "gffperc/experiments.hpp"
#include "gffperc/exploration.hpp"
#include "gffperc/graph.hpp"
#include "gffperc/manifest.hpp"
#include "gffperc/percolation.hpp"
#include "gffperc/rng.hpp"
#include "gffperc/taskpool.hpp"
#include "gffperc/tree.hpp"
#include "gffperc/zagff.hpp"

namespace {

using gffperc::format_double;
using gffperc::format_grid;
using gffperc::hex64;
using gffperc::RunManifest;
using Clock = std::chrono::steady_clock;
using njson = nlohmann::json;

enum class Format { kJson, kCsv };

// Options shared by every leaf subcommand.  The format pair is mutually
// exclusive; the per-command default applies when neither is given.
struct CommonOpts {
  std::uint64_t seed = 1;
  int threads_flag = 0;  // 0 = unset
  bool want_json = false;
  bool want_csv = false;
  std::string manifest_out;

  Format format(Format default_format) const {
    if (want_json) return Format::kJson;
    if (want_csv) return Format::kCsv;
    return default_format;
  }
  int threads() const {
    return gffperc::resolve_threads(threads_flag > 0 ? std::optional<int>(threads_flag)
                                                     : std::nullopt);
  }
};

// The level flag is spelled --h, so the default -h help alias must go.
CLI::App* add_sub(CLI::App* parent, const std::string& name, const std::string& desc) {
  CLI::App* sub = parent->add_subcommand(name, desc);
  sub->set_help_flag("--help", "Print help");
  return sub;
}

void add_common(CLI::App* cmd, CommonOpts& c, bool with_seed) {
  if (with_seed) cmd->add_option("--seed", c.seed, "Master seed; replicas use derived sub-seeds");
  cmd->add_option("--threads", c.threads_flag,
                  "Worker threads for replica tasks (GFFPERC_THREADS overrides)");
  auto* j = cmd->add_flag("--json", c.want_json, "Emit the report as JSON");
  auto* v = cmd->add_flag("--csv", c.want_csv, "Emit the report as CSV");
  j->excludes(v);
  v->excludes(j);
  cmd->add_option("--manifest-out", c.manifest_out,
                  "Write the full run manifest (with timing) to this file");
}

// Accumulates the canonical argument vector and the hashed config map in one
// pass, so replay and hashing can never drift apart.
struct ManifestBuilder {
  RunManifest m;

  explicit ManifestBuilder(std::initializer_list<std::string> command_words) {
    for (const auto& w : command_words) {
      m.argv.push_back(w);
      if (!m.command.empty()) m.command += ' ';
      m.command += w;
    }
  }

  void arg(const std::string& flag, const std::string& key, const std::string& value) {
    m.argv.push_back(flag);
    m.argv.push_back(value);
    m.config[key] = value;
  }
  void arg(const std::string& flag, const std::string& key, double value) {
    arg(flag, key, format_double(value));
  }
  void arg(const std::string& flag, const std::string& key, std::uint64_t value) {
    arg(flag, key, std::to_string(value));
  }
  void arg(const std::string& flag, const std::string& key, int value) {
    arg(flag, key, std::to_string(value));
  }

  void format(Format f) {
    m.argv.push_back(f == Format::kJson ? "--json" : "--csv");
    m.config["format"] = f == Format::kJson ? "json" : "csv";
  }

  // Registers an input file: the config carries the path, the inputs map its
  // content hash.  Returns the file content for further parsing.
  std::string input(const std::string& flag, const std::string& key, const std::string& path) {
    std::string content = gffperc::read_file(path);
    arg(flag, key, path);
    m.inputs[path] = hex64(gffperc::fnv1a64(content));
    return content;
  }
};

void emit(const std::string& text) { std::fwrite(text.data(), 1, text.size(), stdout); }

std::string json_report(const RunManifest& m, njson payload) {
  njson j;
  j["manifest"] = njson::parse(m.to_json(false));
  j["report"] = std::move(payload);
  return j.dump(2) + "\n";
}

// Writes the sidecar manifest (if requested) and passes the exit code through.
int finish(RunManifest& m, const CommonOpts& c, Clock::time_point t0, int code) {
  if (!c.manifest_out.empty()) {
    m.threads = c.threads();
    m.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    gffperc::write_file(c.manifest_out, m.to_json(true));
  }
  return code;
}

// ---------------------------------------------------------------------------
// Field-file round trip: `zagff sample --csv` writes provenance comments so
// that the percolation commands can recover the graph without a flag.
// ---------------------------------------------------------------------------

struct FieldFile {
  std::string graph_path;
  std::string graph_hash;
  int d = 0;
  std::size_t n = 0;
  std::vector<std::vector<double>> fields;  // indexed by replica
};

std::string field_csv_header(const RunManifest& m, const std::string& graph_path,
                             const std::string& graph_hash, int d, std::size_t n) {
  std::string out;
  out += "# manifest=" + m.hash_hex() + "\n";
  out += "# graph=" + graph_path + "\n";
  out += "# graph_hash=" + graph_hash + "\n";
  out += "# d=" + std::to_string(d) + "\n";
  out += "# n=" + std::to_string(n) + "\n";
  out += "replica,vertex,value\n";
  return out;
}

FieldFile parse_field_csv(const std::string& path) {
  const std::string text = gffperc::read_file(path);
  FieldFile ff;
  std::size_t pos = 0;
  bool header_seen = false;
  int columns = 3;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto strip = [&](std::string_view prefix) -> std::optional<std::string> {
        if (line.substr(0, prefix.size()) == prefix)
          return std::string(line.substr(prefix.size()));
        return std::nullopt;
      };
      if (auto v = strip("# graph_hash=")) ff.graph_hash = *v;
      else if (auto g = strip("# graph=")) ff.graph_path = *g;
      else if (auto dd = strip("# d=")) ff.d = std::stoi(*dd);
      else if (auto nn = strip("# n=")) ff.n = std::stoull(*nn);
      continue;
    }
    if (!header_seen) {
      if (line == "replica,vertex,value") columns = 3;
      else if (line == "vertex,value") columns = 2;
      else throw std::runtime_error("field file " + path + ": unrecognized header '" +
                                    std::string(line) + "'");
      header_seen = true;
      continue;
    }
    // data row
    std::size_t c1 = line.find(',');
    std::size_t c2 = columns == 3 ? line.find(',', c1 + 1) : std::string_view::npos;
    if (c1 == std::string_view::npos || (columns == 3 && c2 == std::string_view::npos))
      throw std::runtime_error("field file " + path + ": malformed row");
    std::size_t replica = 0, vertex = 0;
    std::string_view vcol, xcol;
    if (columns == 3) {
      replica = std::stoull(std::string(line.substr(0, c1)));
      xcol = line.substr(c1 + 1, c2 - c1 - 1);
      vcol = line.substr(c2 + 1);
    } else {
      xcol = line.substr(0, c1);
      vcol = line.substr(c1 + 1);
    }
    vertex = std::stoull(std::string(xcol));
    if (ff.n == 0) throw std::runtime_error("field file " + path + ": missing '# n=' comment");
    if (vertex >= ff.n) throw std::runtime_error("field file " + path + ": vertex out of range");
    if (replica >= ff.fields.size()) ff.fields.resize(replica + 1);
    auto& f = ff.fields[replica];
    if (f.empty()) f.assign(ff.n, 0.0);
    f[vertex] = std::stod(std::string(vcol));
  }
  if (ff.fields.empty()) throw std::runtime_error("field file " + path + ": no data rows");
  if (ff.graph_path.empty())
    throw std::runtime_error("field file " + path + ": missing '# graph=' comment");
  return ff;
}

// Loads the graph a field file points at, verifying the recorded content hash.
gffperc::RegularGraph load_field_graph(const FieldFile& ff, ManifestBuilder& mb) {
  std::string text = gffperc::read_file(ff.graph_path);
  std::string hash = hex64(gffperc::fnv1a64(text));
  if (!ff.graph_hash.empty() && hash != ff.graph_hash)
    throw std::runtime_error("graph file " + ff.graph_path +
                             " changed since the field was sampled (hash " + hash +
                             " != recorded " + ff.graph_hash + ")");
  mb.m.inputs[ff.graph_path] = hash;
  return gffperc::RegularGraph::from_text(text);
}

// ---------------------------------------------------------------------------
// Shared payload formatters
// ---------------------------------------------------------------------------

njson estimate_payload(const gffperc::EstimateReport& r) {
  njson j;
  j["quantity"] = r.quantity;
  j["estimate"] = r.estimate;
  j["std_error"] = r.std_error;
  j["replicas"] = r.replicas;
  j["censored"] = r.censored;
  j["seed"] = r.seed;
  j["d"] = r.d;
  j["depth"] = r.depth;
  if (!r.h_grid.empty()) j["h_grid"] = r.h_grid;
  if (!r.delta_grid.empty()) j["delta_grid"] = r.delta_grid;
  njson details = njson::object();
  for (const auto& [k, v] : r.details) details[k] = v;
  j["details"] = std::move(details);
  return j;
}

njson subcritical_payload(const gffperc::SubcriticalReport& r, bool with_replicas) {
  njson j;
  j["experiment"] = "subcritical";
  j["d"] = r.d;
  j["h"] = r.h;
  j["size_factor"] = r.size_factor;
  j["replicas"] = r.replicas;
  j["seed"] = r.seed;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  njson rungs = njson::array();
  for (const auto& rg : r.rungs) {
    njson e;
    e["n"] = rg.n;
    e["graph_seed"] = rg.graph_seed;
    e["audit_attempts"] = rg.audit_attempts;
    e["spectral_gap"] = rg.spectral_gap;
    e["ln_n"] = rg.ln_n;
    e["mean_max"] = rg.mean_max;
    e["se_max"] = rg.se_max;
    e["ratio"] = rg.ratio;
    e["exceed_fraction"] = rg.exceed_fraction;
    e["max_observed"] = rg.max_observed;
    if (with_replicas) e["max_sizes"] = rg.max_sizes;
    rungs.push_back(std::move(e));
  }
  j["rungs"] = std::move(rungs);
  j["fit"] = {{"slope", r.fit.slope},
              {"intercept", r.fit.intercept},
              {"residual_rms", r.fit.residual_rms},
              {"points", r.fit.points}};
  j["checks"] = {{"exceed_non_increasing", r.exceed_non_increasing}};
  j["passed"] = r.passed();
  return j;
}

njson supercritical_payload(const gffperc::SupercriticalReport& r, bool with_replicas) {
  njson j;
  j["experiment"] = "supercritical";
  j["d"] = r.d;
  j["h"] = r.h;
  j["delta"] = r.delta;
  j["replicas"] = r.replicas;
  j["seed"] = r.seed;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["eta_hat"] = r.eta_hat;
  j["eta_se"] = r.eta_se;
  j["lambda_hat"] = r.lambda_hat;
  j["lambda_se"] = r.lambda_se;
  njson rungs = njson::array();
  for (const auto& rg : r.rungs) {
    njson e;
    e["n"] = rg.n;
    e["graph_seed"] = rg.graph_seed;
    e["audit_attempts"] = rg.audit_attempts;
    e["spectral_gap"] = rg.spectral_gap;
    e["gamma"] = rg.gamma;
    e["threshold"] = rg.threshold;
    e["mean_fraction"] = rg.mean_fraction;
    e["se_fraction"] = rg.se_fraction;
    e["variance_over_n2"] = rg.variance_over_n2;
    e["meets_half_eta"] = rg.meets_half_eta;
    e["mean_sphere_fraction"] = rg.mean_sphere_fraction;
    e["mean_tree_like_fraction"] = rg.mean_tree_like_fraction;
    if (with_replicas) e["fractions"] = rg.fractions;
    rungs.push_back(std::move(e));
  }
  j["rungs"] = std::move(rungs);
  j["checks"] = {{"frequency_non_decreasing", r.frequency_non_decreasing},
                 {"variance_decreasing", r.variance_decreasing},
                 {"top_mean_above_half_eta", r.top_mean_above_half_eta},
                 {"top_mean_near_eta", r.top_mean_near_eta}};
  j["passed"] = r.passed();
  return j;
}

// ---------------------------------------------------------------------------
// Subcommand handlers
// ---------------------------------------------------------------------------

struct GraphGenOpts {
  int d = 3;
  std::size_t n = 0;
  std::string out;
  CommonOpts common;
};

int run_graph_gen(const GraphGenOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"graph", "gen"});
  mb.arg("--d", "d", o.d);
  mb.arg("--n", "n", o.n);
  mb.arg("--seed", "seed", o.common.seed);
  mb.arg("--out", "out", o.out);
  mb.format(Format::kJson);

  gffperc::RegularGraph g = gffperc::generate_random_regular(o.d, o.n, o.common.seed);
  const std::string text = g.to_text();
  gffperc::write_file(o.out, text);

  njson payload;
  payload["d"] = o.d;
  payload["n"] = o.n;
  payload["seed"] = o.common.seed;
  payload["out"] = o.out;
  payload["graph_hash"] = hex64(gffperc::fnv1a64(text));
  emit(json_report(mb.m, std::move(payload)));
  return finish(mb.m, o.common, t0, 0);
}

struct GraphAuditOpts {
  std::string in;
  double alpha = gffperc::kLadderAuditAlpha;
  double beta = gffperc::kLadderAuditBeta;
  CommonOpts common;
};

int run_graph_audit(const GraphAuditOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"graph", "audit"});
  const std::string text = mb.input("--in", "in", o.in);
  mb.arg("--alpha", "alpha", o.alpha);
  mb.arg("--beta", "beta", o.beta);
  mb.format(Format::kJson);

  gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  gffperc::AssumptionReport rep = gffperc::audit_assumptions(g, o.alpha, o.beta);
  gffperc::ScaleConstants sc =
      gffperc::scale_constants(g.degree(), g.size(), o.alpha, o.beta, rep.spectral_gap);

  njson payload;
  payload["d"] = g.degree();
  payload["n"] = g.size();
  payload["alpha"] = o.alpha;
  payload["beta"] = o.beta;
  payload["connected"] = rep.connected;
  payload["simple"] = rep.simple;
  payload["radius_checked"] = rep.radius_checked;
  payload["max_tree_excess_in_ball"] = rep.max_tree_excess_in_ball;
  payload["spectral_gap"] = rep.spectral_gap;
  payload["passes"] = {rep.passes[0], rep.passes[1], rep.passes[2]};
  payload["all"] = rep.all();
  payload["constants"] = {{"c0", sc.c0}, {"s_n", sc.s_n},   {"r_n", sc.r_n},
                          {"R_n", sc.R_n}, {"t_n", sc.t_n}};
  emit(json_report(mb.m, std::move(payload)));
  return finish(mb.m, o.common, t0, rep.all() ? 0 : 2);
}

struct TreeSampleOpts {
  int d = 3;
  int depth = 12;
  double h = 0.0;
  std::size_t replicas = 100;
  CommonOpts common;
};

int run_tree_sample(const TreeSampleOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"tree", "sample"});
  mb.arg("--d", "d", o.d);
  mb.arg("--depth", "depth", o.depth);
  mb.arg("--h", "h", o.h);
  mb.arg("--replicas", "replicas", o.replicas);
  mb.arg("--seed", "seed", o.common.seed);
  const Format fmt = o.common.format(Format::kCsv);
  mb.format(fmt);

  std::vector<gffperc::ClusterLevelCounts> rows(o.replicas);
  gffperc::run_indexed_tasks(o.replicas, o.common.threads(), [&](std::size_t i) {
    gffperc::Rng rng(gffperc::task_seed(o.common.seed, i));
    rows[i] = gffperc::lazy_forward_cluster_counts(o.d, o.depth, o.h, std::nullopt, rng);
  });

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "replica,censored,total";
    for (int l = 0; l <= o.depth; ++l) out += ",level_" + std::to_string(l);
    out += "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out += std::to_string(i);
      out += rows[i].censored ? ",1" : ",0";
      out += "," + std::to_string(rows[i].total());
      for (std::uint64_t c : rows[i].counts) out += "," + std::to_string(c);
      out += "\n";
    }
    emit(out);
  } else {
    njson payload;
    payload["d"] = o.d;
    payload["depth"] = o.depth;
    payload["h"] = o.h;
    njson arr = njson::array();
    for (std::size_t i = 0; i < rows.size(); ++i)
      arr.push_back({{"replica", i},
                     {"censored", rows[i].censored},
                     {"total", rows[i].total()},
                     {"counts", rows[i].counts}});
    payload["rows"] = std::move(arr);
    emit(json_report(mb.m, std::move(payload)));
  }
  return finish(mb.m, o.common, t0, 0);
}

struct ZagffGreenOpts {
  std::string in;
  std::string out_matrix;
  CommonOpts common;
};

int run_zagff_green(const ZagffGreenOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"zagff", "green"});
  const std::string text = mb.input("--in", "in", o.in);
  mb.arg("--out-matrix", "out_matrix", o.out_matrix);
  mb.format(Format::kJson);

  gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  gffperc::GreenOperator green(g, gffperc::GreenMode::kDense);
  const Eigen::MatrixXd& G = green.matrix();

  std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
  for (Eigen::Index r = 0; r < G.rows(); ++r) {
    for (Eigen::Index c = 0; c < G.cols(); ++c) {
      if (c) out += ',';
      out += format_double(G(r, c));
    }
    out += '\n';
  }
  gffperc::write_file(o.out_matrix, out);

  njson payload;
  payload["n"] = g.size();
  payload["d"] = g.degree();
  payload["out_matrix"] = o.out_matrix;
  payload["matrix_hash"] = hex64(gffperc::fnv1a64(out));
  emit(json_report(mb.m, std::move(payload)));
  return finish(mb.m, o.common, t0, 0);
}

struct ZagffSampleOpts {
  std::string in;
  std::size_t replicas = 1;
  CommonOpts common;
};

int run_zagff_sample(const ZagffSampleOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"zagff", "sample"});
  const std::string text = mb.input("--in", "in", o.in);
  mb.arg("--replicas", "replicas", o.replicas);
  mb.arg("--seed", "seed", o.common.seed);
  const Format fmt = o.common.format(Format::kCsv);
  mb.format(fmt);

  gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  gffperc::GreenOperator green = gffperc::build_green(g);
  std::vector<gffperc::GraphField> fields(o.replicas);
  gffperc::run_indexed_tasks(o.replicas, o.common.threads(), [&](std::size_t i) {
    fields[i] = green.sample(gffperc::task_seed(o.common.seed, i));
  });

  const std::string graph_hash = hex64(gffperc::fnv1a64(text));
  if (fmt == Format::kCsv) {
    std::string out = field_csv_header(mb.m, o.in, graph_hash, g.degree(), g.size());
    for (std::size_t i = 0; i < fields.size(); ++i)
      for (std::size_t v = 0; v < g.size(); ++v) {
        out += std::to_string(i);
        out += ',';
        out += std::to_string(v);
        out += ',';
        out += format_double(fields[i].values[v]);
        out += '\n';
      }
    emit(out);
  } else {
    njson payload;
    payload["graph"] = o.in;
    payload["graph_hash"] = graph_hash;
    payload["n"] = g.size();
    njson arr = njson::array();
    for (const auto& f : fields) arr.push_back(f.values);
    payload["fields"] = std::move(arr);
    emit(json_report(mb.m, std::move(payload)));
  }
  return finish(mb.m, o.common, t0, 0);
}

struct PercComponentsOpts {
  std::string field;
  double h = 0.0;
  std::size_t replica = 0;
  CommonOpts common;
};

int run_perc_components(const PercComponentsOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"perc", "components"});
  FieldFile ff = parse_field_csv(o.field);
  mb.arg("--field", "field", o.field);
  mb.m.inputs[o.field] = hex64(gffperc::fnv1a64(gffperc::read_file(o.field)));
  mb.arg("--h", "h", o.h);
  if (o.replica >= ff.fields.size())
    throw std::runtime_error("field file has no replica " + std::to_string(o.replica));
  mb.arg("--replica", "replica", o.replica);
  const Format fmt = o.common.format(Format::kCsv);
  mb.format(fmt);

  gffperc::RegularGraph g = load_field_graph(ff, mb);
  gffperc::GraphField field{ff.fields[o.replica]};
  gffperc::ComponentDecomposition cd = gffperc::level_components(g, field, o.h);

  // Canonical labels sorted by descending size, ties by label.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> table;  // (size, label)
  {
    std::vector<std::uint32_t> count(g.size(), 0);
    for (std::uint32_t lab : cd.labels)
      if (lab != gffperc::ComponentDecomposition::npos) ++count[lab];
    for (std::uint32_t v = 0; v < g.size(); ++v)
      if (count[v] > 0) table.emplace_back(count[v], v);
    std::sort(table.begin(), table.end(), [](auto a, auto b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
  }

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "# n=" + std::to_string(g.size()) + "\n";
    out += "# level=" + format_double(o.h) + "\n";
    out += "# max_size=" + std::to_string(cd.max_size) + "\n";
    out += "# components=" + std::to_string(table.size()) + "\n";
    out += "rank,label,size\n";
    for (std::size_t r = 0; r < table.size(); ++r)
      out += std::to_string(r) + "," + std::to_string(table[r].second) + "," +
             std::to_string(table[r].first) + "\n";
    emit(out);
  } else {
    njson payload;
    payload["n"] = g.size();
    payload["level"] = o.h;
    payload["replica"] = o.replica;
    payload["max_size"] = cd.max_size;
    payload["component_count"] = table.size();
    payload["sizes"] = cd.sizes;
    njson labels = njson::array();
    for (std::uint32_t lab : cd.labels) {
      if (lab == gffperc::ComponentDecomposition::npos) labels.push_back(nullptr);
      else labels.push_back(lab);
    }
    payload["labels"] = std::move(labels);
    emit(json_report(mb.m, std::move(payload)));
  }
  return finish(mb.m, o.common, t0, 0);
}

struct PercCensusOpts {
  std::string field;
  double h = 0.0;
  double gamma = 0.0;
  double alpha = gffperc::kLadderAuditAlpha;
  double beta = gffperc::kLadderAuditBeta;
  std::size_t replica = 0;
  CommonOpts common;
};

int run_perc_census(const PercCensusOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"perc", "census"});
  FieldFile ff = parse_field_csv(o.field);
  mb.arg("--field", "field", o.field);
  mb.m.inputs[o.field] = hex64(gffperc::fnv1a64(gffperc::read_file(o.field)));
  mb.arg("--h", "h", o.h);
  mb.arg("--gamma", "gamma", o.gamma);
  mb.arg("--alpha", "alpha", o.alpha);
  mb.arg("--beta", "beta", o.beta);
  if (o.replica >= ff.fields.size())
    throw std::runtime_error("field file has no replica " + std::to_string(o.replica));
  mb.arg("--replica", "replica", o.replica);
  const Format fmt = o.common.format(Format::kCsv);
  mb.format(fmt);

  gffperc::RegularGraph g = load_field_graph(ff, mb);
  const double gap = gffperc::spectral_gap(g);
  gffperc::ScaleConstants sc =
      gffperc::scale_constants(g.degree(), g.size(), o.alpha, o.beta, gap);
  gffperc::GraphField field{ff.fields[o.replica]};
  gffperc::MesoscopicCensus census = gffperc::mesoscopic_census(g, field, o.h, sc, o.gamma);

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "n,level,gamma,threshold,sphere_restricted_count,cluster_count,cluster_fraction,"
           "non_tree_like,tree_like_fraction,r_n,R_n,c0,spectral_gap\n";
    out += std::to_string(g.size()) + "," + format_double(o.h) + "," + format_double(o.gamma) +
           "," + format_double(census.threshold) + "," +
           std::to_string(census.sphere_restricted_count) + "," +
           std::to_string(census.cluster_count) + "," +
           format_double(static_cast<double>(census.cluster_count) /
                         static_cast<double>(g.size())) +
           "," + std::to_string(census.non_tree_like) + "," +
           format_double(census.tree_like_fraction) + "," + std::to_string(sc.r_n) + "," +
           std::to_string(sc.R_n) + "," + format_double(sc.c0) + "," + format_double(gap) + "\n";
    emit(out);
  } else {
    njson payload;
    payload["n"] = g.size();
    payload["level"] = o.h;
    payload["gamma"] = o.gamma;
    payload["threshold"] = census.threshold;
    payload["sphere_restricted_count"] = census.sphere_restricted_count;
    payload["cluster_count"] = census.cluster_count;
    payload["cluster_fraction"] =
        static_cast<double>(census.cluster_count) / static_cast<double>(g.size());
    payload["non_tree_like"] = census.non_tree_like;
    payload["tree_like_fraction"] = census.tree_like_fraction;
    payload["constants"] = {{"c0", sc.c0}, {"s_n", sc.s_n},   {"r_n", sc.r_n},
                            {"R_n", sc.R_n}, {"t_n", sc.t_n}};
    payload["spectral_gap"] = gap;
    emit(json_report(mb.m, std::move(payload)));
  }
  return finish(mb.m, o.common, t0, 0);
}

struct ExploreRunOpts {
  std::string in;
  std::uint32_t x = 0;
  double h = 0.0;
  double K = gffperc::kDefaultSizeCapFactor;
  double ckappa = gffperc::kDefaultAnomalyFactor;
  std::size_t replicas = 1;
  std::string trace_out;
  CommonOpts common;
};

int run_explore(const ExploreRunOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"explore", "run"});
  const std::string text = mb.input("--in", "in", o.in);
  mb.arg("--x", "x", static_cast<std::uint64_t>(o.x));
  mb.arg("--h", "h", o.h);
  mb.arg("--K", "K", o.K);
  mb.arg("--ckappa", "ckappa", o.ckappa);
  mb.arg("--replicas", "replicas", o.replicas);
  mb.arg("--seed", "seed", o.common.seed);
  mb.arg("--trace-out", "trace_out", o.trace_out);
  mb.format(Format::kJson);

  gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  gffperc::GreenOperator green = gffperc::build_green(g);
  std::vector<gffperc::ExplorationTrace> traces(o.replicas);
  gffperc::run_indexed_tasks(o.replicas, o.common.threads(), [&](std::size_t i) {
    traces[i] = gffperc::explore_component(g, green, o.x, o.h, o.K, o.ckappa,
                                           gffperc::task_seed(o.common.seed, i));
  });

  std::string lines;
  {
    njson head;
    head["manifest_hash"] = mb.m.hash_hex();
    head["graph"] = o.in;
    head["replicas"] = o.replicas;
    lines += head.dump() + "\n";
  }
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (const auto& ev : traces[i].events) {
      njson e;
      e["replica"] = i;
      e["step"] = ev.step;
      e["action"] = gffperc::trace_action_name(ev.action);
      e["vertex"] = ev.vertex;
      if (std::isnan(ev.value)) e["value"] = nullptr;
      else e["value"] = ev.value;
      e["pq"] = ev.pq_size;
      e["sq"] = ev.sq_size;
      lines += e.dump() + "\n";
    }
  gffperc::write_file(o.trace_out, lines);

  njson payload;
  payload["x"] = o.x;
  payload["h"] = o.h;
  payload["cap_factor"] = o.K;
  payload["anomaly_factor"] = o.ckappa;
  payload["trace_out"] = o.trace_out;
  payload["trace_hash"] = hex64(gffperc::fnv1a64(lines));
  njson arr = njson::array();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& tr = traces[i];
    arr.push_back({{"replica", i},
                   {"cluster_size", tr.cluster.size()},
                   {"explored", tr.explored.size()},
                   {"subtrees", tr.subtrees.size()},
                   {"k_end", tr.k_end},
                   {"anomalous", tr.anomalous},
                   {"terminated_by_cap", tr.terminated_by_cap},
                   {"events", tr.events.size()}});
  }
  payload["replicas"] = std::move(arr);
  emit(json_report(mb.m, std::move(payload)));
  return finish(mb.m, o.common, t0, 0);
}

struct CoupleRunOpts {
  std::string in;
  std::uint32_t x = 0;
  std::int64_t xprime = -1;
  int r = 1;
  int R = 2;
  std::size_t replicas = 100;
  CommonOpts common;
};

int run_couple(const CoupleRunOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"couple", "run"});
  const std::string text = mb.input("--in", "in", o.in);
  mb.arg("--x", "x", static_cast<std::uint64_t>(o.x));
  if (o.xprime >= 0) mb.arg("--xprime", "xprime", static_cast<std::uint64_t>(o.xprime));
  mb.arg("--r", "r", o.r);
  mb.arg("--R", "R", o.R);
  mb.arg("--replicas", "replicas", o.replicas);
  mb.arg("--seed", "seed", o.common.seed);
  const Format fmt = o.common.format(Format::kCsv);
  mb.format(fmt);

  gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  gffperc::GreenOperator green = gffperc::build_green(g);
  std::optional<std::uint32_t> xp;
  if (o.xprime >= 0) xp = static_cast<std::uint32_t>(o.xprime);

  std::vector<double> sups(o.replicas, 0.0);
  gffperc::run_indexed_tasks(o.replicas, o.common.threads(), [&](std::size_t i) {
    sups[i] = gffperc::couple_local(green, g, o.x, xp, o.r, o.R,
                                    gffperc::task_seed(o.common.seed, i))
                  .sup_deviation;
  });

  gffperc::RunningMoments mm;
  double maxdev = 0.0;
  std::vector<std::size_t> exceed(gffperc::kDeviationEpsilonGrid.size(), 0);
  for (double s : sups) {
    mm.add(s);
    maxdev = std::max(maxdev, s);
    for (std::size_t k = 0; k < exceed.size(); ++k)
      if (s > gffperc::kDeviationEpsilonGrid[k]) ++exceed[k];
  }

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "replica,sup_deviation\n";
    for (std::size_t i = 0; i < sups.size(); ++i)
      out += std::to_string(i) + "," + format_double(sups[i]) + "\n";
    emit(out);
  } else {
    njson payload;
    payload["x"] = o.x;
    if (xp) payload["xprime"] = *xp;
    payload["r"] = o.r;
    payload["R"] = o.R;
    payload["mean_deviation"] = mm.mean;
    payload["max_deviation"] = maxdev;
    payload["epsilons"] = std::vector<double>(gffperc::kDeviationEpsilonGrid.begin(),
                                              gffperc::kDeviationEpsilonGrid.end());
    payload["exceed"] = exceed;
    payload["sup_deviations"] = sups;
    emit(json_report(mb.m, std::move(payload)));
  }
  return finish(mb.m, o.common, t0, 0);
}

struct EstimateOpts {
  int d = 3;
  double h = 0.0;
  std::string h_grid;      // hstar only
  std::string delta_grid = "0,0.02,0.05,0.1,0.2";  // gh only
  int depth = 20;
  std::size_t replicas = 1000;
  CommonOpts common;
};

int run_estimate(const std::string& which, const EstimateOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"estimate", which});
  mb.arg("--d", "d", o.d);
  if (which == "hstar") mb.arg("--h-grid", "h_grid", o.h_grid);
  else mb.arg("--h", "h", o.h);
  if (which == "gh") mb.arg("--delta-grid", "delta_grid", o.delta_grid);
  mb.arg("--depth", "depth", o.depth);
  mb.arg("--replicas", "replicas", o.replicas);
  mb.arg("--seed", "seed", o.common.seed);
  mb.format(Format::kJson);

  njson payload;
  if (which == "eta") {
    payload = estimate_payload(
        gffperc::estimate_eta_plus(o.d, o.h, o.depth, o.replicas, o.common.seed));
  } else if (which == "lambda") {
    payload =
        estimate_payload(gffperc::estimate_lambda(o.d, o.h, o.depth, o.replicas, o.common.seed));
  } else if (which == "hstar") {
    std::vector<double> grid = gffperc::parse_grid(o.h_grid);
    payload = estimate_payload(
        gffperc::estimate_h_star(o.d, grid, o.depth, o.replicas, o.common.seed));
  } else {  // gh
    std::vector<double> deltas = gffperc::parse_grid(o.delta_grid);
    gffperc::ExpMomentReport rep =
        gffperc::check_exp_moment_fixed_point(o.d, o.h, deltas, o.depth, o.replicas,
                                              o.common.seed);
    payload["quantity"] = "exp_moment_fixed_point";
    payload["d"] = rep.d;
    payload["h"] = rep.h;
    payload["depth"] = rep.depth;
    payload["replicas"] = rep.replicas;
    payload["seed"] = rep.seed;
    payload["a_grid"] = rep.a_grid;
    payload["delta_grid"] = rep.delta_grid;
    payload["best_delta"] = rep.best_delta;
    payload["any_qualified"] = rep.any_qualified;
    njson cells = njson::array();
    for (const auto& c : rep.cells)
      cells.push_back({{"delta", c.delta},
                       {"a", c.a},
                       {"g_estimate", c.g_estimate},
                       {"g_std_error", c.g_std_error},
                       {"recursion_value", c.recursion_value},
                       {"residual", c.residual},
                       {"residual_std_error", c.residual_std_error},
                       {"diverged", c.diverged},
                       {"censored", c.censored}});
    payload["cells"] = std::move(cells);
  }
  emit(json_report(mb.m, std::move(payload)));
  return finish(mb.m, o.common, t0, 0);
}

struct ExperimentOpts {
  int d = 3;
  double h = 0.0;
  double K = 15.0;      // subcritical exceedance factor
  double delta = 0.1;   // supercritical growth-rate offset
  std::size_t replicas = 0;  // 0 = per-experiment default
  std::string ladder = "1024,2048,4096,8192";
  double alpha = gffperc::kLadderAuditAlpha;
  double beta = gffperc::kLadderAuditBeta;
  int eta_depth = 25;
  std::size_t eta_replicas = 4000;
  int lambda_depth = 18;
  std::size_t lambda_replicas = 2000;
  CommonOpts common;
};

std::vector<std::size_t> parse_ladder(const std::string& text) {
  std::vector<double> raw = gffperc::parse_grid(text);
  std::vector<std::size_t> out;
  for (double v : raw) {
    if (v < 1 || v != std::floor(v))
      throw std::invalid_argument("ladder entries must be positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

int run_experiment_subcritical(const ExperimentOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"experiment", "subcritical"});
  mb.arg("--d", "d", o.d);
  mb.arg("--h", "h", o.h);
  mb.arg("--K", "K", o.K);
  mb.arg("--replicas", "replicas", o.replicas ? o.replicas : 200);
  mb.arg("--ladder", "ladder", o.ladder);
  mb.arg("--alpha", "alpha", o.alpha);
  mb.arg("--beta", "beta", o.beta);
  mb.arg("--seed", "seed", o.common.seed);
  const Format fmt = o.common.format(Format::kJson);
  mb.format(fmt);

  gffperc::SubcriticalConfig cfg;
  cfg.d = o.d;
  cfg.h = o.h;
  cfg.size_factor = o.K;
  cfg.replicas = o.replicas ? o.replicas : 200;
  cfg.seed = o.common.seed;
  cfg.ladder = parse_ladder(o.ladder);
  cfg.alpha = o.alpha;
  cfg.beta = o.beta;
  cfg.threads = o.common.threads();
  gffperc::SubcriticalReport rep = gffperc::run_subcritical_experiment(cfg);

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "# slope=" + format_double(rep.fit.slope) + "\n";
    out += "# intercept=" + format_double(rep.fit.intercept) + "\n";
    out += "# residual_rms=" + format_double(rep.fit.residual_rms) + "\n";
    out += "# exceed_non_increasing=" + std::string(rep.exceed_non_increasing ? "1" : "0") + "\n";
    out += "# passed=" + std::string(rep.passed() ? "1" : "0") + "\n";
    out += "n,graph_seed,audit_attempts,spectral_gap,ln_n,mean_max,se_max,ratio,"
           "exceed_fraction,max_observed\n";
    for (const auto& rg : rep.rungs)
      out += std::to_string(rg.n) + "," + std::to_string(rg.graph_seed) + "," +
             std::to_string(rg.audit_attempts) + "," + format_double(rg.spectral_gap) + "," +
             format_double(rg.ln_n) + "," + format_double(rg.mean_max) + "," +
             format_double(rg.se_max) + "," + format_double(rg.ratio) + "," +
             format_double(rg.exceed_fraction) + "," + std::to_string(rg.max_observed) + "\n";
    emit(out);
  } else {
    emit(json_report(mb.m, subcritical_payload(rep, true)));
  }
  return finish(mb.m, o.common, t0, rep.passed() ? 0 : 2);
}

int run_experiment_supercritical(const ExperimentOpts& o) {
  const auto t0 = Clock::now();
  ManifestBuilder mb({"experiment", "supercritical"});
  mb.arg("--d", "d", o.d);
  mb.arg("--h", "h", o.h);
  mb.arg("--delta", "delta", o.delta);
  mb.arg("--replicas", "replicas", o.replicas ? o.replicas : 100);
  mb.arg("--ladder", "ladder", o.ladder);
  mb.arg("--alpha", "alpha", o.alpha);
  mb.arg("--beta", "beta", o.beta);
  mb.arg("--eta-depth", "eta_depth", o.eta_depth);
  mb.arg("--eta-replicas", "eta_replicas", o.eta_replicas);
  mb.arg("--lambda-depth", "lambda_depth", o.lambda_depth);
  mb.arg("--lambda-replicas", "lambda_replicas", o.lambda_replicas);
  mb.arg("--seed", "seed", o.common.seed);
  const Format fmt = o.common.format(Format::kJson);
  mb.format(fmt);

  gffperc::SupercriticalConfig cfg;
  cfg.d = o.d;
  cfg.h = o.h;
  cfg.delta = o.delta;
  cfg.replicas = o.replicas ? o.replicas : 100;
  cfg.seed = o.common.seed;
  cfg.ladder = parse_ladder(o.ladder);
  cfg.alpha = o.alpha;
  cfg.beta = o.beta;
  cfg.threads = o.common.threads();
  cfg.eta_depth = o.eta_depth;
  cfg.eta_replicas = o.eta_replicas;
  cfg.lambda_depth = o.lambda_depth;
  cfg.lambda_replicas = o.lambda_replicas;
  gffperc::SupercriticalReport rep = gffperc::run_supercritical_experiment(cfg);

  if (fmt == Format::kCsv) {
    std::string out = "# manifest=" + mb.m.hash_hex() + "\n";
    out += "# eta_hat=" + format_double(rep.eta_hat) + "\n";
    out += "# eta_se=" + format_double(rep.eta_se) + "\n";
    out += "# lambda_hat=" + format_double(rep.lambda_hat) + "\n";
    out += "# frequency_non_decreasing=" +
           std::string(rep.frequency_non_decreasing ? "1" : "0") + "\n";
    out += "# variance_decreasing=" + std::string(rep.variance_decreasing ? "1" : "0") + "\n";
    out += "# top_mean_above_half_eta=" +
           std::string(rep.top_mean_above_half_eta ? "1" : "0") + "\n";
    out += "# passed=" + std::string(rep.passed() ? "1" : "0") + "\n";
    out += "n,graph_seed,audit_attempts,spectral_gap,gamma,threshold,mean_fraction,"
           "se_fraction,variance_over_n2,meets_half_eta,mean_sphere_fraction,"
           "mean_tree_like_fraction\n";
    for (const auto& rg : rep.rungs)
      out += std::to_string(rg.n) + "," + std::to_string(rg.graph_seed) + "," +
             std::to_string(rg.audit_attempts) + "," + format_double(rg.spectral_gap) + "," +
             format_double(rg.gamma) + "," + format_double(rg.threshold) + "," +
             format_double(rg.mean_fraction) + "," + format_double(rg.se_fraction) + "," +
             format_double(rg.variance_over_n2) + "," + format_double(rg.meets_half_eta) + "," +
             format_double(rg.mean_sphere_fraction) + "," +
             format_double(rg.mean_tree_like_fraction) + "\n";
    emit(out);
  } else {
    emit(json_report(mb.m, supercritical_payload(rep, true)));
  }
  return finish(mb.m, o.common, t0, rep.passed() ? 0 : 2);
}

int dispatch(const std::vector<std::string>& args);

struct ReplayOpts {
  std::string manifest_path;
};

int run_replay(const ReplayOpts& o) {
  RunManifest m = RunManifest::from_json(gffperc::read_file(o.manifest_path));
  return dispatch(m.argv);
}

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Level-set percolation laboratory for the zero-average Gaussian "
               "free field on regular graphs and trees"};
  app.set_help_flag("--help", "Print help");
  app.require_subcommand(1);
  int exit_code = 0;

  // graph ---------------------------------------------------------------
  auto* graph = add_sub(&app, "graph", "Generate and audit regular graphs");
  graph->require_subcommand(1);

  GraphGenOpts gen_opts;
  auto* gen = add_sub(graph, "gen", "Generate a random d-regular graph");
  gen->add_option("--d", gen_opts.d, "Degree")->required();
  gen->add_option("--n", gen_opts.n, "Vertex count")->required();
  gen->add_option("--out", gen_opts.out, "Output graph file")->required();
  add_common(gen, gen_opts.common, true);
  gen->callback([&] { exit_code = run_graph_gen(gen_opts); });

  GraphAuditOpts audit_opts;
  auto* audit = add_sub(graph, "audit", "Check the structural hypotheses");
  audit->add_option("--in", audit_opts.in, "Graph file")->required();
  audit->add_option("--alpha", audit_opts.alpha, "Tree-excess ball radius factor");
  audit->add_option("--beta", audit_opts.beta, "Spectral-gap floor");
  add_common(audit, audit_opts.common, false);
  audit->callback([&] { exit_code = run_graph_audit(audit_opts); });

  // tree ----------------------------------------------------------------
  auto* tree = add_sub(&app, "tree", "Forward tree cluster sampling");
  tree->require_subcommand(1);

  TreeSampleOpts ts_opts;
  auto* ts = add_sub(tree, "sample", "Sample forward cluster level counts");
  ts->add_option("--d", ts_opts.d, "Degree");
  ts->add_option("--depth", ts_opts.depth, "Truncation depth");
  ts->add_option("--h", ts_opts.h, "Level")->required();
  ts->add_option("--replicas", ts_opts.replicas, "Independent clusters");
  add_common(ts, ts_opts.common, true);
  ts->callback([&] { exit_code = run_tree_sample(ts_opts); });

  // zagff ---------------------------------------------------------------
  auto* zagff = add_sub(&app, "zagff", "Zero-average field on a finite graph");
  zagff->require_subcommand(1);

  ZagffGreenOpts zg_opts;
  auto* zg = add_sub(zagff, "green", "Write the covariance matrix");
  zg->add_option("--in", zg_opts.in, "Graph file")->required();
  zg->add_option("--out-matrix", zg_opts.out_matrix, "Output CSV (row-major)")->required();
  add_common(zg, zg_opts.common, false);
  zg->callback([&] { exit_code = run_zagff_green(zg_opts); });

  ZagffSampleOpts zs_opts;
  auto* zs = add_sub(zagff, "sample", "Sample zero-average fields");
  zs->add_option("--in", zs_opts.in, "Graph file")->required();
  zs->add_option("--replicas", zs_opts.replicas, "Independent fields");
  add_common(zs, zs_opts.common, true);
  zs->callback([&] { exit_code = run_zagff_sample(zs_opts); });

  // perc ----------------------------------------------------------------
  auto* perc = add_sub(&app, "perc", "Level-set statistics of a sampled field");
  perc->require_subcommand(1);

  PercComponentsOpts pc_opts;
  auto* pc = add_sub(perc, "components", "Connected components of the level set");
  pc->add_option("--field", pc_opts.field, "Field CSV from zagff sample")->required();
  pc->add_option("--h", pc_opts.h, "Level")->required();
  pc->add_option("--replica", pc_opts.replica, "Replica to analyse (default 0)");
  add_common(pc, pc_opts.common, false);
  pc->callback([&] { exit_code = run_perc_components(pc_opts); });

  PercCensusOpts cen_opts;
  auto* cen = add_sub(perc, "census", "Count vertices in mesoscopic clusters");
  cen->add_option("--field", cen_opts.field, "Field CSV from zagff sample")->required();
  cen->add_option("--h", cen_opts.h, "Level")->required();
  cen->add_option("--gamma", cen_opts.gamma, "Size exponent: threshold N^gamma")->required();
  cen->add_option("--alpha", cen_opts.alpha, "Tree-excess ball radius factor");
  cen->add_option("--beta", cen_opts.beta, "Spectral-gap floor");
  cen->add_option("--replica", cen_opts.replica, "Replica to analyse (default 0)");
  add_common(cen, cen_opts.common, false);
  cen->callback([&] { exit_code = run_perc_census(cen_opts); });

  // explore ---------------------------------------------------------------
  auto* explore = add_sub(&app, "explore", "Two-queue component exploration");
  explore->require_subcommand(1);

  ExploreRunOpts ex_opts;
  auto* ex = add_sub(explore, "run", "Explore the level-set component of a vertex");
  ex->add_option("--in", ex_opts.in, "Graph file")->required();
  ex->add_option("--x", ex_opts.x, "Start vertex")->required();
  ex->add_option("--h", ex_opts.h, "Level")->required();
  ex->add_option("--K", ex_opts.K, "Size cap factor: halt at K ln n");
  ex->add_option("--ckappa", ex_opts.ckappa, "Anomaly factor: flag |value| >= c sqrt(ln n)");
  ex->add_option("--replicas", ex_opts.replicas, "Independent explorations");
  ex->add_option("--trace-out", ex_opts.trace_out, "JSON-lines event trace file")->required();
  add_common(ex, ex_opts.common, true);
  ex->callback([&] { exit_code = run_explore(ex_opts); });

  // couple ----------------------------------------------------------------
  auto* couple = add_sub(&app, "couple", "Local graph/tree field couplings");
  couple->require_subcommand(1);

  CoupleRunOpts co_opts;
  auto* co = add_sub(couple, "run", "Sample coupled fields and their deviation");
  co->add_option("--in", co_opts.in, "Graph file")->required();
  co->add_option("--x", co_opts.x, "Centre vertex")->required();
  co->add_option("--xprime", co_opts.xprime, "Second centre (two-ball chart)");
  co->add_option("--r", co_opts.r, "Inner radius")->required();
  co->add_option("--R", co_opts.R, "Outer radius")->required();
  co->add_option("--replicas", co_opts.replicas, "Independent couplings");
  add_common(co, co_opts.common, true);
  co->callback([&] { exit_code = run_couple(co_opts); });

  // estimate --------------------------------------------------------------
  auto* est = add_sub(&app, "estimate", "Tree-side Monte Carlo estimators");
  est->require_subcommand(1);
  static const char* kEstimators[] = {"eta", "lambda", "hstar", "gh"};
  static const char* kEstimatorHelp[] = {
      "Survival fraction of the depth-limited forward cluster",
      "Exponential growth rate of sphere counts",
      "Critical level via bisection of the growth rate",
      "Tilted cluster-mass fixed point"};
  // one option block per estimator; required flags differ
  std::vector<EstimateOpts> est_opts(4);
  for (int k = 0; k < 4; ++k) {
    auto* sub = add_sub(est, kEstimators[k], kEstimatorHelp[k]);
    EstimateOpts& eo = est_opts[static_cast<std::size_t>(k)];
    sub->add_option("--d", eo.d, "Degree");
    if (std::string(kEstimators[k]) == "hstar")
      sub->add_option("--h-grid", eo.h_grid, "Comma-separated level grid")->required();
    else
      sub->add_option("--h", eo.h, "Level")->required();
    if (std::string(kEstimators[k]) == "gh")
      sub->add_option("--delta-grid", eo.delta_grid, "Comma-separated tilt grid");
    sub->add_option("--depth", eo.depth, "Truncation depth");
    sub->add_option("--replicas", eo.replicas, "Monte Carlo replicas");
    add_common(sub, eo.common, true);
    std::string name = kEstimators[k];
    sub->callback([&, name, k] { exit_code = run_estimate(name, est_opts[static_cast<std::size_t>(k)]); });
  }

  // experiment --------------------------------------------------------------
  auto* expm = add_sub(&app, "experiment", "Ladder experiments on audited graphs");
  expm->require_subcommand(1);

  ExperimentOpts sub_opts;
  auto* subx = add_sub(expm, "subcritical", "Largest level-set component vs ln N");
  subx->add_option("--d", sub_opts.d, "Degree");
  subx->add_option("--h", sub_opts.h, "Level (above the critical one)")->required();
  subx->add_option("--K", sub_opts.K, "Exceedance factor for P[max >= K ln N]");
  subx->add_option("--replicas", sub_opts.replicas, "Fields per ladder size");
  subx->add_option("--ladder", sub_opts.ladder, "Comma-separated graph sizes");
  subx->add_option("--alpha", sub_opts.alpha, "Audit: tree-excess radius factor");
  subx->add_option("--beta", sub_opts.beta, "Audit: spectral-gap floor");
  add_common(subx, sub_opts.common, true);
  subx->callback([&] { exit_code = run_experiment_subcritical(sub_opts); });

  ExperimentOpts sup_opts;
  auto* supx = add_sub(expm, "supercritical", "Density of mesoscopic clusters");
  supx->add_option("--d", sup_opts.d, "Degree");
  supx->add_option("--h", sup_opts.h, "Level (below the critical one)")->required();
  supx->add_option("--delta", sup_opts.delta, "Growth rate measured at h + delta");
  supx->add_option("--replicas", sup_opts.replicas, "Fields per ladder size");
  supx->add_option("--ladder", sup_opts.ladder, "Comma-separated graph sizes");
  supx->add_option("--alpha", sup_opts.alpha, "Audit: tree-excess radius factor");
  supx->add_option("--beta", sup_opts.beta, "Audit: spectral-gap floor");
  supx->add_option("--eta-depth", sup_opts.eta_depth, "Survival estimate depth");
  supx->add_option("--eta-replicas", sup_opts.eta_replicas, "Survival estimate replicas");
  supx->add_option("--lambda-depth", sup_opts.lambda_depth, "Growth estimate depth");
  supx->add_option("--lambda-replicas", sup_opts.lambda_replicas, "Growth estimate replicas");
  add_common(supx, sup_opts.common, true);
  supx->callback([&] { exit_code = run_experiment_supercritical(sup_opts); });

  // replay --------------------------------------------------------------
  ReplayOpts replay_opts;
  auto* rep = add_sub(&app, "replay", "Re-execute a recorded run manifest");
  rep->add_option("--manifest", replay_opts.manifest_path, "Manifest JSON file")->required();
  rep->callback([&] { exit_code = run_replay(replay_opts); });

  std::vector<const char*> argv;
  argv.push_back("gffperc");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // prints help or the parse diagnostic; anything but help is an error
    return app.exit(e) == 0 ? 0 : 1;
  }
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gffperc: %s\n", e.what());
    return 1;
  }
}

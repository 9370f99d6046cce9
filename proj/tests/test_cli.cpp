#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gffperc/coupling.hpp"
#include "gffperc/graph.hpp"
#include "gffperc/manifest.hpp"
#include "gffperc/rng.hpp"
#include "gffperc/zagff.hpp"

// End-to-end tests that drive the installed binary the way a user would:
// through a shell, files, and pipes.  The binary path is injected by the
// build so the tests always exercise the freshly built tool.

namespace {

using njson = nlohmann::json;

struct RunResult {
  int rc = -1;
  std::string out;
};

const std::string& cli() {
  static const std::string path = GFFPERC_CLI_PATH;
  return path;
}

const std::string& workdir() {
  static const std::string dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("gffperc_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d.string();
  }();
  return dir;
}

std::string tmp(const std::string& name) { return workdir() + "/" + name; }

// Runs `gffperc <args>` through /bin/sh, capturing stdout and the exit code.
// `env` is prepended verbatim (e.g. "GFFPERC_THREADS=4"), `merge_stderr`
// folds diagnostics into the captured stream.
RunResult run_cli(const std::string& args, const std::string& env = "",
                  bool merge_stderr = false) {
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += cli() + " " + args;
  cmd += merge_stderr ? " 2>&1" : " 2>/dev/null";
  RunResult res;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0)
    res.out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  res.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

std::size_t count_fields(const std::string& csv_row) {
  return static_cast<std::size_t>(std::count(csv_row.begin(), csv_row.end(), ',')) + 1;
}

bool is_hex16(const std::string& s) {
  return s.size() == 16 && s.find_first_not_of("0123456789abcdef") == std::string::npos;
}

// Generates a small audited graph file and returns its text.
std::string make_graph(const std::string& path, int d, std::size_t n, std::uint64_t seed) {
  std::ostringstream cmd;
  cmd << "graph gen --d " << d << " --n " << n << " --seed " << seed << " --out " << path
      << " --json";
  RunResult r = run_cli(cmd.str());
  REQUIRE(r.rc == 0);
  return gffperc::read_file(path);
}

}  // namespace

TEST_CASE("graph gen writes a parsable file and audit gates the exit code") {
  const std::string gpath = tmp("gen64.txt");
  RunResult gen = run_cli("graph gen --d 3 --n 64 --seed 7 --out " + gpath + " --json");
  REQUIRE(gen.rc == 0);

  const njson j = njson::parse(gen.out);
  CHECK(j.at("manifest").at("command") == "graph gen");
  CHECK(is_hex16(j.at("manifest").at("hash").get<std::string>()));
  CHECK(j.at("manifest").at("config").at("d") == "3");
  CHECK(j.at("manifest").at("config").at("n") == "64");
  CHECK_FALSE(j.at("manifest").contains("threads"));  // execution detail, not identity
  CHECK(j.at("report").at("n") == 64);

  // The advertised hash is the hash of the bytes on disk.
  const std::string text = gffperc::read_file(gpath);
  CHECK(j.at("report").at("graph_hash") == gffperc::hex64(gffperc::fnv1a64(text)));
  const gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  CHECK(g.size() == 64);
  CHECK(g.degree() == 3);

  RunResult ok = run_cli("graph audit --in " + gpath + " --alpha 0.2 --beta 0.04 --json");
  CHECK(ok.rc == 0);
  const njson ja = njson::parse(ok.out);
  CHECK(ja.at("report").at("all") == true);
  CHECK(ja.at("report").at("passes").size() == 3);
  CHECK(ja.at("report").at("constants").at("c0").get<double>() > 0.0);

  // An unattainable spectral floor flips the audit verdict and the exit code.
  RunResult bad = run_cli("graph audit --in " + gpath + " --alpha 0.2 --beta 1.5 --json");
  CHECK(bad.rc == 2);
  CHECK(njson::parse(bad.out).at("report").at("all") == false);
}

TEST_CASE("field files carry provenance that downstream commands verify") {
  const std::string gpath = tmp("prov.txt");
  make_graph(gpath, 3, 64, 7);

  const std::string fpath = tmp("prov_field.csv");
  RunResult smp =
      run_cli("zagff sample --in " + gpath + " --replicas 2 --seed 5 --csv > " + fpath);
  REQUIRE(smp.rc == 0);

  const auto lines = split_lines(gffperc::read_file(fpath));
  REQUIRE(lines.size() == 6 + 2 * 64);
  CHECK(lines[0].rfind("# manifest=", 0) == 0);
  CHECK(lines[1] == "# graph=" + gpath);
  CHECK(lines[2].rfind("# graph_hash=", 0) == 0);
  CHECK(lines[3] == "# d=3");
  CHECK(lines[4] == "# n=64");
  CHECK(lines[5] == "replica,vertex,value");
  CHECK(lines[6].rfind("0,0,", 0) == 0);

  // Per-replica zero average, up to solver tolerance.
  double sum0 = 0.0;
  for (std::size_t i = 6; i < 6 + 64; ++i)
    sum0 += std::stod(lines[i].substr(lines[i].rfind(',') + 1));
  CHECK(sum0 == doctest::Approx(0.0).epsilon(0.0).scale(1e-8));

  RunResult comp = run_cli("perc components --field " + fpath + " --h 0.0 --replica 1 --json");
  REQUIRE(comp.rc == 0);
  const njson jc = njson::parse(comp.out);
  CHECK(jc.at("report").at("n") == 64);
  const auto sizes = jc.at("report").at("sizes").get<std::vector<std::uint64_t>>();
  REQUIRE(!sizes.empty());
  CHECK(std::is_sorted(sizes.rbegin(), sizes.rend()));
  CHECK(jc.at("report").at("max_size") == sizes.front());

  RunResult cen = run_cli("perc census --field " + fpath +
                          " --h 0.0 --gamma 0.001 --alpha 0.2 --beta 0.04 --json");
  REQUIRE(cen.rc == 0);
  const njson jn = njson::parse(cen.out);
  CHECK(jn.at("report").at("threshold").get<double>() >= 1.0);
  const double tl = jn.at("report").at("tree_like_fraction").get<double>();
  CHECK(tl >= 0.0);
  CHECK(tl <= 1.0);

  // Swapping the graph underneath the field is caught by the stored hash.
  make_graph(gpath, 3, 64, 8);
  RunResult stale = run_cli("perc components --field " + fpath + " --h 0.0", "", true);
  CHECK(stale.rc == 1);
  CHECK(stale.out.find("changed since the field was sampled") != std::string::npos);
}

TEST_CASE("tree sample emits a rectangular level-count table") {
  RunResult r = run_cli("tree sample --d 3 --h 0.5 --depth 6 --replicas 5 --seed 2 --csv");
  REQUIRE(r.rc == 0);
  const auto lines = split_lines(r.out);
  REQUIRE(lines.size() == 2 + 5);
  CHECK(lines[0].rfind("# manifest=", 0) == 0);
  CHECK(is_hex16(lines[0].substr(std::string("# manifest=").size())));
  CHECK(lines[1] ==
        "replica,censored,total,level_0,level_1,level_2,level_3,level_4,level_5,level_6");
  for (std::size_t i = 2; i < lines.size(); ++i) {
    REQUIRE(count_fields(lines[i]) == 10);
    std::stringstream row(lines[i]);
    std::string cell;
    std::vector<std::uint64_t> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::stoull(cell));
    CHECK(vals[0] == i - 2);
    CHECK(vals[1] <= 1);            // censored flag
    CHECK(vals[3] <= 1);            // at most the root on level zero
    std::uint64_t total = 0;
    for (std::size_t k = 3; k < vals.size(); ++k) total += vals[k];
    CHECK(vals[2] == total);
  }
}

TEST_CASE("estimate reports embed the manifest that reproduces them") {
  RunResult r = run_cli("estimate eta --d 3 --h 0.5 --depth 8 --replicas 300 --seed 4 --json");
  REQUIRE(r.rc == 0);
  const njson j = njson::parse(r.out);
  CHECK(j.at("report").at("quantity") == "eta_plus");
  const double est = j.at("report").at("estimate").get<double>();
  CHECK(est > 0.0);
  CHECK(est < 1.0);
  CHECK(j.at("report").at("replicas") == 300);
  CHECK(j.at("manifest").at("command") == "estimate eta");
  CHECK(j.at("manifest").at("config").at("h") == "0.5");
  CHECK(j.at("manifest").at("config").at("depth") == "8");
  const auto argv = j.at("manifest").at("argv").get<std::vector<std::string>>();
  const std::vector<std::string> want = {"estimate", "eta", "--d", "3", "--h", "0.5"};
  CHECK(std::search(argv.begin(), argv.end(), want.begin(), want.end()) == argv.begin());
}

TEST_CASE("replay reproduces output bytes at any thread count") {
  const std::string man = tmp("tree_man.json");
  const std::string out1 = tmp("tree1.csv");
  const std::string base = "tree sample --d 3 --h 0.2 --depth 8 --replicas 40 --seed 6 --csv "
                           "--manifest-out " + man;
  REQUIRE(run_cli(base + " > " + out1).rc == 0);

  // The sidecar records the full command line plus execution details.
  const njson side = njson::parse(gffperc::read_file(man));
  CHECK(side.contains("threads"));
  CHECK(side.contains("wall_seconds"));
  CHECK(side.at("argv").front() == "tree");
  CHECK(is_hex16(side.at("hash").get<std::string>()));

  const std::string out2 = tmp("tree2.csv");
  REQUIRE(run_cli("replay --manifest " + man + " > " + out2).rc == 0);
  CHECK(gffperc::read_file(out1) == gffperc::read_file(out2));

  const std::string out3 = tmp("tree3.csv");
  REQUIRE(run_cli("replay --manifest " + man + " > " + out3, "GFFPERC_THREADS=4").rc == 0);
  CHECK(gffperc::read_file(out1) == gffperc::read_file(out3));

  // Same discipline for a run that generates graphs and samples fields.
  const std::string eman = tmp("exp_man.json");
  const std::string e1 = tmp("exp1.csv");
  const std::string e2 = tmp("exp2.csv");
  REQUIRE(run_cli("experiment subcritical --h 1e6 --ladder 64,128 --replicas 4 --seed 3 "
                  "--csv --manifest-out " + eman + " > " + e1).rc == 0);
  REQUIRE(run_cli("replay --manifest " + eman + " > " + e2, "GFFPERC_THREADS=3").rc == 0);
  CHECK(gffperc::read_file(e1) == gffperc::read_file(e2));

  // A corrupted manifest is rejected by its own hash.
  std::string tampered = gffperc::read_file(eman);
  const auto pos = tampered.find("\"replicas\": \"4\"");
  REQUIRE(pos != std::string::npos);
  tampered.replace(pos, 15, "\"replicas\": \"5\"");
  const std::string bad = tmp("exp_bad.json");
  gffperc::write_file(bad, tampered);
  RunResult rb = run_cli("replay --manifest " + bad, "", true);
  CHECK(rb.rc == 1);
  CHECK(rb.out.find("hash mismatch") != std::string::npos);
}

TEST_CASE("exit codes separate usage errors from failed checks") {
  CHECK(run_cli("graph audit --in " + tmp("no_such_file.txt"), "", true).rc == 1);
  CHECK(run_cli("graph gen --bogus-flag 1", "", true).rc == 1);
  CHECK(run_cli("--help").rc == 0);
  CHECK(run_cli("graph --help").rc == 0);
  CHECK(run_cli("estimate hstar --d 3 --h-grid 5,6 --depth 6 --replicas 50 --seed 1 --json",
                "", true).rc == 1);  // no sign change across the bracket
  // Assertions that fail on sound inputs exit 2: a tiny exceedance factor
  // makes P[max >= K ln N] grow along the ladder.
  CHECK(run_cli("experiment subcritical --h 2.5 --K 0.4 --ladder 64,128 --replicas 20 "
                "--seed 3 --csv").rc == 2);
}

TEST_CASE("explore traces are JSON lines with pinned event fields") {
  const std::string gpath = tmp("explore.txt");
  make_graph(gpath, 3, 64, 7);
  const std::string trace = tmp("trace.jsonl");

  RunResult r = run_cli("explore run --in " + gpath +
                        " --x 0 --h -0.5 --replicas 2 --seed 9 --trace-out " + trace + " --json");
  REQUIRE(r.rc == 0);
  const njson j = njson::parse(r.out);
  const std::string text = gffperc::read_file(trace);
  CHECK(j.at("report").at("trace_hash") == gffperc::hex64(gffperc::fnv1a64(text)));
  REQUIRE(j.at("report").at("replicas").size() == 2);
  std::size_t events_expected = 0;
  for (const auto& rep : j.at("report").at("replicas")) {
    CHECK(rep.at("cluster_size").get<std::uint64_t>() >= 1);  // the root is kept at h=-0.5 <= 0
    CHECK(rep.at("explored").get<std::uint64_t>() >= rep.at("cluster_size").get<std::uint64_t>());
    events_expected += rep.at("events").get<std::size_t>();
  }

  const auto lines = split_lines(text);
  REQUIRE(lines.size() == 1 + events_expected);
  const njson head = njson::parse(lines[0]);
  CHECK(head.at("manifest_hash") == j.at("manifest").at("hash"));
  CHECK(head.at("graph") == gpath);
  CHECK(head.at("replicas") == 2);

  const std::set<std::string> actions = {"pop_secondary", "pop_primary", "defer",
                                         "generate",      "enqueue",     "stop_cap"};
  std::size_t generates = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const njson e = njson::parse(lines[i]);
    REQUIRE(e.size() == 7);
    CHECK(e.at("replica").get<std::size_t>() < 2);
    CHECK(actions.count(e.at("action").get<std::string>()) == 1);
    CHECK(e.at("vertex").get<std::uint64_t>() < 64);
    if (e.at("action") == "generate") {
      CHECK(e.at("value").is_number());
      ++generates;
    } else {
      CHECK(e.at("value").is_null());
    }
    CHECK(e.contains("step"));
    CHECK(e.contains("pq"));
    CHECK(e.contains("sq"));
  }
  CHECK(generates >= 2);  // at least the two starting vertices were revealed
}

TEST_CASE("the covariance matrix file matches the dense operator") {
  const std::string gpath = tmp("green.txt");
  const std::string text = make_graph(gpath, 3, 16, 1);
  const std::string mpath = tmp("green_matrix.csv");

  RunResult r = run_cli("zagff green --in " + gpath + " --out-matrix " + mpath + " --json");
  REQUIRE(r.rc == 0);
  const njson j = njson::parse(r.out);
  const std::string mtext = gffperc::read_file(mpath);
  CHECK(j.at("report").at("matrix_hash") == gffperc::hex64(gffperc::fnv1a64(mtext)));

  const gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  const gffperc::GreenOperator green(g, gffperc::GreenMode::kDense);
  const auto& G = green.matrix();

  const auto lines = split_lines(mtext);
  REQUIRE(lines.size() == 1 + 16);
  CHECK(lines[0].rfind("# manifest=", 0) == 0);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream row(lines[i]);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      // Shortest round-trip formatting: parsing recovers the exact double.
      CHECK(std::stod(cell) == G(static_cast<Eigen::Index>(i - 1),
                                 static_cast<Eigen::Index>(col)));
      ++col;
    }
    CHECK(col == 16);
  }
}

TEST_CASE("coupling deviations from the command line match the library") {
  const std::string gpath = tmp("couple256.txt");
  const std::string text = make_graph(gpath, 3, 256, 1357);

  RunResult r = run_cli("couple run --in " + gpath +
                        " --x 169 --r 1 --R 2 --replicas 5 --seed 21 --json");
  REQUIRE(r.rc == 0);
  const njson j = njson::parse(r.out);
  const auto sups = j.at("report").at("sup_deviations").get<std::vector<double>>();
  REQUIRE(sups.size() == 5);

  const gffperc::RegularGraph g = gffperc::RegularGraph::from_text(text);
  const gffperc::GreenOperator green = gffperc::build_green(g);
  double mean = 0.0;
  for (std::size_t i = 0; i < sups.size(); ++i) {
    const auto pair =
        gffperc::couple_local(green, g, 169, std::nullopt, 1, 2, gffperc::task_seed(21, i));
    CHECK(sups[i] == pair.sup_deviation);
    mean += sups[i] / 5.0;
  }
  CHECK(j.at("report").at("mean_deviation").get<double>() == doctest::Approx(mean));

  // A centre whose 2R-ball is not tree-like is refused outright.
  RunResult bad = run_cli("couple run --in " + gpath + " --x 0 --r 1 --R 2 --replicas 2 "
                          "--seed 21 --json", "", true);
  CHECK(bad.rc == 1);
  CHECK(bad.out.find("tree-like") != std::string::npos);
}

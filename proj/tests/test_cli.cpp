#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "conda/temporal_graph.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kRoot = "/tmp/conda_cli_test";

std::string bin() {
  const char* b = std::getenv("CONDA_TGL_BIN");
  REQUIRE(b != nullptr);
  return b;
}

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome run(const std::string& args, const std::string& env = "") {
  std::string capture = std::string(kRoot) + "/capture.txt";
  std::string cmd = env + (env.empty() ? "" : " ") + bin() + " " + args + " > " + capture +
                    " 2>&1";
  int rc = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream is(capture);
  std::stringstream ss;
  ss << is.rdbuf();
  o.out = ss.str();
  return o;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  os << content;
}

std::string tiny_config(const std::string& dataset, const std::string& out_dir,
                        const std::string& augmenter) {
  std::ostringstream os;
  os << "dataset = " << dataset << "\n"
     << "out_dir = " << out_dir << "\n"
     << "augmenter = " << augmenter << "\n"
     << "# comment lines and blanks are ignored\n\n"
     << "r_train = 0.5\nr_val = 0.25\nr_test = 0.25\n"
     << "D = 8\nd_t = 4\nL = 4\nblocks = 1\n"
     << "r_ctdg = 2\nr_conda = 2\ncycles = 2\n"
     << "batch_size = 64\neval_batch = 128\n"
     << "lr = 1e-3\ndropout = 0.1\npatience = 10\n"
     << "N = 6\nk = 1e-3\nseed = 21\n";
  return os.str();
}

// report lines with the timing field stripped, so byte-identity is testable
std::vector<std::string> report_modulo_wall(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    j.erase("wall_ms");
    if (j.contains("config")) j["config"].erase("out_dir");  // echoes the run directory
    lines.push_back(j.dump());
  }
  return lines;
}

}  // namespace

TEST_CASE("exit codes: usage, config, data, and environment failures") {
  fs::create_directories(kRoot);
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 1);                   // a subcommand is required
  CHECK(run("frobnicate").code == 1);         // unknown subcommand
  CHECK(run("ingest --input /nonexistent.csv --out /tmp/x.events").code == 2);
  CHECK(run("train --config /nonexistent.conf").code == 1);
  CHECK(run("synth --out /tmp/conda_cli_test/x.events --communities 0").code == 1);
  CHECK(run("sweep --config /nonexistent.conf --param k --values 1e-4").code == 1);

  std::string bad_csv = std::string(kRoot) + "/bad.csv";
  write_file(bad_csv, "src,dst,t\n0,1,notanumber\n");
  Outcome o = run("ingest --input " + bad_csv + " --out " + kRoot + "/bad.events");
  CHECK(o.code == 2);
  CHECK(o.out.find("line 2") != std::string::npos);

  std::string empty_csv = std::string(kRoot) + "/empty.csv";
  write_file(empty_csv, "");
  CHECK(run("ingest --input " + empty_csv + " --out " + kRoot + "/e.events").code == 2);

  // the thread cap must be a positive integer when set
  std::string synth_args = std::string("synth --out ") + kRoot + "/t.events --nodes 20 "
                           "--events 50";
  CHECK(run(synth_args, "CONDA_TGL_THREADS=abc").code == 1);
  CHECK(run(synth_args, "CONDA_TGL_THREADS=0").code == 1);
  CHECK(run(synth_args, "CONDA_TGL_THREADS=-3").code == 1);
  CHECK(run(synth_args, "CONDA_TGL_THREADS=2").code == 0);
}

TEST_CASE("ingest converts CSV to a loadable binary log, idempotently") {
  fs::create_directories(kRoot);
  std::string csv = std::string(kRoot) + "/events.csv";
  write_file(csv,
             "src,dst,t\n"
             "0,1,1.0\n"
             "1,2,2.0\n"
             "0,2,3.0\n"
             "2,3,4.0\n");
  std::string out_a = std::string(kRoot) + "/a.events";
  std::string out_b = std::string(kRoot) + "/b.events";
  Outcome a = run("ingest --input " + csv + " --out " + out_a);
  Outcome b = run("ingest --input " + csv + " --out " + out_b);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);

  json stats = json::parse(a.out);
  CHECK(stats.at("num_events").get<size_t>() == 4);
  CHECK(stats.at("num_nodes").get<size_t>() == 4);
  CHECK(stats.at("d_e").get<size_t>() == 0);
  CHECK(stats.at("unique_edges").get<size_t>() == 4);
  CHECK(stats.at("density").get<double>() > 0.0);

  json sa = json::parse(std::ifstream(out_a + ".stats.json"));
  json sb = json::parse(std::ifstream(out_b + ".stats.json"));
  CHECK(sa.at("content_hash") == sb.at("content_hash"));  // byte-identical conversion
  json ma = json::parse(std::ifstream(out_a + ".manifest.json"));
  CHECK(ma.at("command") == "ingest");
  CHECK(ma.at("run_id").get<std::string>().size() == 16);
  CHECK(ma.at("args").at("input") == csv);

  conda::EventLog log = conda::load_events(out_a);
  CHECK(log.events.size() == 4);
  CHECK(log.events[3].t == 3.0);  // timestamps are shifted to start at zero
  CHECK(log.events[3].src == 2);
  CHECK(log.events[3].dst == 3);
}

TEST_CASE("synth writes deterministic planted-community logs") {
  fs::create_directories(kRoot);
  std::string base = std::string("synth --nodes 40 --events 200 --communities 2 ");
  Outcome a = run(base + "--seed 9 --out " + kRoot + "/s1.events");
  Outcome b = run(base + "--seed 9 --out " + kRoot + "/s2.events");
  Outcome c = run(base + "--seed 10 --out " + kRoot + "/s3.events");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  REQUIRE(c.code == 0);
  json sa = json::parse(a.out), sb = json::parse(b.out), sc = json::parse(c.out);
  CHECK(sa.at("content_hash") == sb.at("content_hash"));
  CHECK(sa.at("content_hash") != sc.at("content_hash"));
  CHECK(sa.at("num_events").get<size_t>() == 200);
}

TEST_CASE("train produces a report and reproduces it for the same seed") {
  fs::create_directories(kRoot);
  std::string data = std::string(kRoot) + "/train.events";
  REQUIRE(run("synth --nodes 60 --events 400 --communities 2 --seed 11 --out " + data).code ==
          0);
  std::string conf = std::string(kRoot) + "/train.conf";
  write_file(conf, tiny_config(data, std::string(kRoot) + "/run_default", "conda"));

  Outcome a = run("train --config " + conf + " --out-dir " + kRoot + "/run_a");
  REQUIRE(a.code == 0);
  json ja = json::parse(a.out);
  CHECK(ja.at("test_ap").get<double>() > 0.0);
  CHECK(ja.at("test_auc").get<double>() > 0.0);
  CHECK(fs::exists(std::string(kRoot) + "/run_a/report.jsonl"));
  CHECK(fs::exists(std::string(kRoot) + "/run_a/best.ckpt"));
  json manifest = json::parse(std::ifstream(std::string(kRoot) + "/run_a/manifest.json"));
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("args").at("dataset_hash").get<std::string>().size() == 16);

  Outcome b = run("train --config " + conf + " --out-dir " + kRoot + "/run_b");
  REQUIRE(b.code == 0);
  CHECK(report_modulo_wall(std::string(kRoot) + "/run_a/report.jsonl") ==
        report_modulo_wall(std::string(kRoot) + "/run_b/report.jsonl"));

  // flag overrides flow into the run: a different seed changes the outcome
  Outcome c = run("train --config " + conf + " --out-dir " + kRoot + "/run_c --seed 99");
  REQUIRE(c.code == 0);
  CHECK(report_modulo_wall(std::string(kRoot) + "/run_a/report.jsonl") !=
        report_modulo_wall(std::string(kRoot) + "/run_c/report.jsonl"));

  // --set key=value overrides reach the config too
  Outcome d = run("train --config " + conf + " --out-dir " + kRoot +
                  "/run_d --set augmenter=none --set cycles=1");
  REQUIRE(d.code == 0);
  json jd = json::parse(
      report_modulo_wall(std::string(kRoot) + "/run_d/report.jsonl").back());
  CHECK(jd.at("phase_sequence").get<std::vector<std::string>>() ==
        std::vector<std::string>{"ctdg", "ctdg"});

  // unknown --set keys are config errors
  CHECK(run("train --config " + conf + " --set no_such_key=1").code == 1);
  // a dataset path that does not exist is a data error
  CHECK(run("train --config " + conf + " --dataset /nonexistent.events").code == 2);
}

TEST_CASE("sweep emits one row per value plus a baseline, sharing seeds") {
  fs::create_directories(kRoot);
  std::string data = std::string(kRoot) + "/sweep.events";
  REQUIRE(run("synth --nodes 60 --events 400 --communities 2 --seed 11 --out " + data).code ==
          0);
  std::string conf = std::string(kRoot) + "/sweep.conf";
  write_file(conf, tiny_config(data, std::string(kRoot) + "/sweep_default", "conda"));

  Outcome o = run("sweep --config " + conf + " --param k --values 0,1e-3 --seeds 31,32 " +
                  "--out-dir " + kRoot + "/sweep_out");
  REQUIRE(o.code == 0);

  std::ifstream is(std::string(kRoot) + "/sweep_out/sweep.jsonl");
  REQUIRE(is.good());
  std::vector<json> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  REQUIRE(rows.size() == 3);  // two values plus the baseline row
  CHECK(rows[0].at("value") == "0");
  CHECK(rows[1].at("value") == "1e-3");
  CHECK(rows[2].at("value") == "baseline");
  for (const json& r : rows) {
    CHECK(r.at("param") == "k");
    CHECK(r.at("seeds").get<std::vector<uint64_t>>() == std::vector<uint64_t>{31, 32});
    CHECK(r.at("mean_ap").get<double>() > 0.0);
    CHECK(r.at("std_ap").get<double>() >= 0.0);
  }
  // zero noise scale is the baseline by definition: the row is reused verbatim
  CHECK(rows[0].at("mean_ap") == rows[2].at("mean_ap"));
  CHECK(rows[0].at("std_ap") == rows[2].at("std_ap"));
  CHECK(rows[0].at("mean_auc") == rows[2].at("mean_auc"));
  // the k = 1e-3 cells really ran with the conda augmenter
  CHECK(fs::exists(std::string(kRoot) + "/sweep_out/k_1e-3/seed_31/report.jsonl"));
  json cell = json::parse(report_modulo_wall(
      std::string(kRoot) + "/sweep_out/k_1e-3/seed_31/report.jsonl").back());
  CHECK(cell.at("config").at("augmenter") == "conda");
  CHECK(cell.at("config").at("k") == "0.001");
  json base_cell = json::parse(report_modulo_wall(
      std::string(kRoot) + "/sweep_out/baseline/seed_31/report.jsonl").back());
  CHECK(base_cell.at("config").at("augmenter") == "none");

  CHECK(run("sweep --config " + conf + " --param lr --values 1,2").code == 1);
  // diff_len sweeps sanitize the L/<div> tag for the directory name
  Outcome d = run("sweep --config " + conf + " --param diff_len --values L/2 --seeds 31 " +
                  "--out-dir " + kRoot + "/sweep_dl");
  REQUIRE(d.code == 0);
  CHECK(fs::exists(std::string(kRoot) + "/sweep_dl/diff_len_L-2/seed_31/report.jsonl"));
}

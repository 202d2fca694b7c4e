#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "kilnnet/architecture.hpp"
#include "kilnnet/cli.hpp"
#include "kilnnet/csv.hpp"

using namespace kiln;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string tmp(const std::string& leaf) { return (fs::temp_directory_path() / "kilnnet_cli" / leaf).string(); }

std::size_t line_count(const std::string& path) {
  const std::string text = read_file(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// A small trained model shared by the tests below.
struct Fixture {
  Fixture() {
    fs::remove_all(tmp(""));
    fs::create_directories(tmp(""));
    REQUIRE(run({"--seed", "4", "--quiet", "synth", "--out", tmp("data"), "--per-class", "3",
                 "--chip-size", "32"}).code == 0);
    REQUIRE(run({"--seed", "4", "--quiet", "train", "--manifest", tmp("data/manifest.csv"),
                 "--out", tmp("run"), "--blocks", "1,1,1", "--width", "0.125", "--epochs", "2",
                 "--batch-size", "8"}).code == 0);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("help snapshots") {
  std::vector<std::vector<std::string>> commands{{}};
  for (const auto& sub : cli::subcommands()) commands.push_back(words(sub));
  const bool update = std::getenv("KILNNET_UPDATE_SNAPSHOTS") != nullptr;
  for (auto cmd : commands) {
    std::string name = "kilnnet";
    for (const auto& w : cmd) name += "_" + w;
    cmd.push_back("--help");
    const auto r = run(cmd);
    INFO(name);
    CHECK(r.code == 0);
    CHECK(r.err.empty());
    const std::string path = std::string(KILNNET_TEST_DATA_DIR) + "/snapshots/" + name + ".txt";
    if (update) write_file(path, r.out);
    CHECK(r.out == read_file(path));

    // Every option line carries a description, on the same or the next line.
    std::istringstream lines(r.out);
    std::vector<std::string> all;
    for (std::string l; std::getline(lines, l);) all.push_back(l);
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].rfind("  -", 0) != 0) continue;
      const auto gap = all[i].find("  ", 2);
      const bool same_line = gap != std::string::npos &&
                             all[i].find_first_not_of(' ', gap) != std::string::npos;
      const bool next_line = i + 1 < all.size() && all[i + 1].rfind("        ", 0) == 0 &&
                             all[i + 1].find_first_not_of(' ') != std::string::npos;
      INFO(all[i]);
      CHECK((same_line || next_line));
    }
  }
}

TEST_CASE("param-count prints the library count") {
  fs::create_directories(tmp(""));
  const auto r = run({"param-count", "--blocks", "10,3,3", "--width", "1.0", "--classes", "11",
                      "--table", tmp("stages.csv")});
  REQUIRE(r.code == 0);
  NetworkConfig c;
  const auto expected = param_count(Network(c, 0));
  CHECK(r.out.substr(0, r.out.find('\n')) == std::to_string(expected));
  CHECK(line_count(tmp("stages.csv")) == 1 + 20 + 1);
  const auto quiet = run({"--quiet", "param-count", "--blocks", "10,1,1"});
  CHECK(quiet.out == "14585931\n");
}

TEST_CASE("tiles expand") {
  fs::create_directories(tmp(""));
  write_file(tmp("z17.csv"), "zoom,tile_x,tile_y\n17,92609,53432\n17,92610,53432\n17,92611,53433\n");
  for (const char* mode : {"mercator", "paper"}) {
    const auto r = run({"tiles", "expand", "--in", tmp("z17.csv"), "--out", tmp("z20.csv"), "--mode", mode});
    CHECK(r.code == 0);
    CHECK(line_count(tmp("z20.csv")) == 1 + 192);
  }
  write_file(tmp("z16.csv"), "zoom,tile_x,tile_y\n16,1,1\n");
  const auto bad = run({"tiles", "expand", "--in", tmp("z16.csv"), "--out", tmp("x.csv")});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("z16.csv:2") != std::string::npos);
  write_file(tmp("far.csv"), "tile_x,tile_y\n131072,1\n");
  CHECK(run({"tiles", "expand", "--in", tmp("far.csv"), "--out", tmp("x.csv")}).code == 1);
}

TEST_CASE("evaluation pipeline") {
  fixture();
  const auto r = run({"eval", "--checkpoint", tmp("run/best.ckpt"), "--manifest",
                      tmp("data/manifest.csv"), "--thresholds", "0.5,0.9", "--out", tmp("m.csv")});
  REQUIRE(r.code == 0);
  const auto table = read_csv(tmp("m.csv"));
  CHECK(table.header == std::vector<std::string>{"threshold", "tp", "fp", "fn", "tn", "precision",
                                                 "recall", "f1"});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].fields[0] == "0.5");
  CHECK(table.rows[1].fields[0] == "0.9");
  CHECK(r.out == read_file(tmp("m.csv")));

  REQUIRE(run({"infer", "--checkpoint", tmp("run/best.ckpt"), "--manifest",
               tmp("data/manifest.csv"), "--out", tmp("p.csv")}).code == 0);
  const auto probs = read_csv(tmp("p.csv"));
  CHECK(probs.rows.size() == 33);
  CHECK(probs.header.size() == 7 + 11);
  for (const auto& row : probs.rows) {
    double total = 0.0;
    for (std::size_t k = 7; k < row.fields.size(); ++k) total += parse_double(row.fields[k], "p");
    CHECK(std::abs(total - 1.0) < 1e-12);
  }

  CHECK(run({"export", "geojson", "--probs", tmp("p.csv"), "--out", tmp("d.geojson")}).code == 0);
  CHECK(read_file(tmp("d.geojson")).find("FeatureCollection") != std::string::npos);
  // 33 chips cover only part of one z17 tile.
  const auto heat = run({"export", "heatmap", "--probs", tmp("p.csv"), "--out-dir", tmp("heat")});
  CHECK(heat.code == 1);
  CHECK(heat.err.find("completeness") != std::string::npos);
  CHECK(run({"export", "heatmap", "--probs", tmp("p.csv"), "--out-dir", tmp("heat"),
             "--skip-incomplete"}).code == 0);
}

TEST_CASE("exit codes") {
  fixture();
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"param-count", "--bogus"}).code == 1);
  CHECK(run({"synth"}).code == 1);
  CHECK(run({"param-count", "--width", "1.5"}).code == 1);
  CHECK(run({"param-count", "--stem", "huge"}).code == 1);
  CHECK(run({"eval", "--checkpoint", tmp("missing.ckpt"), "--manifest", tmp("data/manifest.csv"),
             "--out", tmp("m.csv")}).code == 2);
  write_file(tmp("junk.ckpt"), "junk");
  const auto junk = run({"infer", "--checkpoint", tmp("junk.ckpt"), "--manifest",
                         tmp("data/manifest.csv"), "--out", tmp("p2.csv")});
  CHECK(junk.code == 2);
  CHECK(junk.err.find("junk.ckpt") != std::string::npos);
  const auto diverge = run({"--quiet", "train", "--manifest", tmp("data/manifest.csv"), "--out",
                            tmp("bad"), "--blocks", "1,1,1", "--width", "0.125", "--lr", "1e300"});
  CHECK(diverge.code == 2);
  CHECK(diverge.err.find("divergence") != std::string::npos);
  CHECK(diverge.err.find("epoch") != std::string::npos);
  const auto strict = run({"--quiet", "gradcheck", "--trials", "1", "--tolerance", "1e-300"});
  CHECK(strict.code == 2);
}

TEST_CASE("seeded subcommands are deterministic") {
  fixture();
  auto twice = [](const std::vector<std::string>& args, const std::string& file) {
    const auto a = run(args);
    const std::string first = file.empty() ? "" : read_file(file);
    const auto b = run(args);
    CHECK(a.code == 0);
    CHECK(a.out == b.out);
    if (!file.empty()) CHECK(first == read_file(file));
  };
  twice({"--seed", "9", "synth", "--out", tmp("s"), "--per-class", "3", "--chip-size", "16"},
        tmp("s/manifest.csv"));
  twice({"--seed", "9", "train", "--manifest", tmp("data/manifest.csv"), "--out", tmp("t"),
         "--blocks", "1,1,1", "--width", "0.125", "--epochs", "2", "--batch-size", "4",
         "--augment", "flip"},
        tmp("t/train_log.csv"));
  twice({"--seed", "9", "gradcheck", "--trials", "2"}, "");
  twice({"--seed", "9", "param-count", "--blocks", "1,1,1", "--width", "0.125", "--input-size", "32"}, "");
}

TEST_CASE("config files and flag precedence") {
  fs::create_directories(tmp(""));
  write_file(tmp("cfg.ini"), "[synth]\nper-class=3\nchip-size=16\n");
  auto r = run({"--config", tmp("cfg.ini"), "synth", "--out", tmp("c1")});
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote 33 chips") != std::string::npos);
  r = run({"--config", tmp("cfg.ini"), "synth", "--out", tmp("c2"), "--per-class", "4"});
  CHECK(r.out.find("wrote 44 chips") != std::string::npos);
  write_file(tmp("bad.ini"), "[synth]\nper-klass=3\n");
  CHECK(run({"--config", tmp("bad.ini"), "synth", "--out", tmp("c3")}).code == 1);
}

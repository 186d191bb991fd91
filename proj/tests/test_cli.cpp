#include <catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include "cli/commands.hpp"
#include "knitsim/oracle.hpp"

using namespace knitsim;
using namespace knitsim::cli;
namespace fs = std::filesystem;

namespace {

struct Proc {
  int status = -1;
  std::string out;
};

std::string binary() {
  const char* b = std::getenv("KNITSIM_BIN");
  return b ? b : "./knitsim";
}

Proc run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " 2>&1";
  Proc p;
  FILE* f = popen(cmd.c_str(), "r");
  REQUIRE(f != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), f)) p.out += buf.data();
  const int st = pclose(f);
  p.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("knitsim-cli-test-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Path printed after "wrote " for the CSV.
fs::path written_csv(const std::string& out) {
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind("wrote ", 0) == 0 && line.size() > 10 && line.substr(line.size() - 4) == ".csv") return line.substr(6);
  return {};
}

std::size_t count_rows(const std::string& csv) {
  const CsvFile f = parse_csv(csv);
  std::size_t n = 0;
  for (char c : f.body) n += c == '\n';
  return n - 1;
}

}  // namespace

TEST_CASE("hashing helpers") {
  // git hash-object of an empty file and of "hello\n".
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
}

TEST_CASE("CSV round trip") {
  Table t{{"a", "b"}, {{"1", "x,y"}, {"2", "z"}}};
  const json cfg = {{"command", "plan"}, {"eps", 0.1}};
  const CsvFile f = parse_csv(render_csv(cfg, t, 1.5));
  CHECK(f.config == cfg.dump());
  CHECK(f.config_hash == git_blob_hash(f.config));
  CHECK(f.content_hash == git_blob_hash(f.body));
  CHECK(f.body == "a,b\n1,\"x,y\"\n2,z\n");
  CHECK_THROWS_AS(parse_csv("not,a,knitsim,file\n"), UsageError);
}

TEST_CASE("config normalization") {
  const json c = normalize_config({{"command", "tomography"}, {"eps", 0.1}, {"ensemble", "pauli"}});
  CHECK(c["ensemble"] == "pauli_eigenstates");
  CHECK(c["delta"] == 0.1);
  CHECK(c["seed"] == 0);
  CHECK(normalize_config(c).dump() == c.dump());
  CHECK_THROWS_AS(normalize_config({{"command", "tomography"}}), UsageError);
  CHECK_THROWS_AS(normalize_config({{"command", "tomography"}, {"eps", 0.1}, {"bogus", 1}}), UsageError);
  CHECK_THROWS_AS(normalize_config({{"command", "tomography"}, {"eps", 2.0}}), UsageError);
  CHECK_THROWS_AS(normalize_config({{"command", "tomography"}, {"eps", 0.1}, {"d", 3}}), UsageError);
  CHECK_THROWS_AS(normalize_config({{"command", "tree"}, {"eps", "0.1"}}), UsageError);
  CHECK_THROWS_AS(normalize_config({{"command", "nope"}, {"eps", 0.1}}), UsageError);
}

TEST_CASE("tree descriptions") {
  const json j = json::parse(R"({
    "root_state": "zero",
    "nodes": {"0": {"kind": "kraus", "seed": 3, "in_dim": 2, "ancilla": 1},
              "1": {"kind": "unitary", "data": {"real": [[0, 1], [1, 0]]}}},
    "leaves": {"0": "Z", "1": "Z"},
    "L": 1, "R": 2, "d": 2
  })");
  const TreeCircuit t = tree_from_json(j);
  CHECK(t.R() == 2);
  CHECK(t.channel({1}).out_dim() == 2);
  // Missing node entries are identity channels; inner nodes fan out to their children.
  const json chain = json::parse(R"({"root_state": "plus", "leaves": {"0.0": "X"}})");
  const TreeCircuit c = tree_from_json(chain);
  CHECK(c.L() == 2);
  CHECK(c.R() == 1);
  CHECK(exact_expectation(c) == Catch::Approx(1.0));
  CHECK_THROWS_AS(tree_from_json(json::parse(R"({"leaves": {}})")), UsageError);
  CHECK_THROWS_AS(tree_from_json(json::parse(R"({"leaves": {"0": "Z"}, "root_state": "bogus"})")), UsageError);
  CHECK_THROWS_AS(tree_from_json(json::parse(R"({"leaves": {"0": "Z"}, "L": 2})")), UsageError);
  CHECK_THROWS_AS(tree_from_json(json::parse(R"({"leaves": {"0": "Z"}, "nodes": {"0": {"kind": "magic"}}})")),
                  UsageError);
}

TEST_CASE("tomography command output and determinism") {
  const fs::path a = fresh_dir("tomo-a"), b = fresh_dir("tomo-b");
  const std::string args = "tomography --kind pauli --d 2 --eps 0.1 --delta 0.1 --trials 50 --seed 7 --out ";
  const Proc pa = run(args + a.string());
  const Proc pb = run(args + b.string());
  REQUIRE(pa.status == 0);
  REQUIRE(pb.status == 0);
  const fs::path fa = written_csv(pa.out), fb = written_csv(pb.out);
  REQUIRE(fs::exists(fa));
  REQUIRE(fs::exists(fb));
  CHECK(fa.filename() == fb.filename());
  const std::string ta = read_file(fa), tb = read_file(fb);
  CHECK(ta.rfind("knitsim-csv/1\n", 0) == 0);
  CHECK(count_rows(ta) == 50);
  CHECK(replay_bytes(parse_csv(ta)) == replay_bytes(parse_csv(tb)));
  // A different seed changes the rows and the file name.
  const Proc pc = run("tomography --kind pauli --d 2 --eps 0.1 --delta 0.1 --trials 50 --seed 8 --out " + a.string());
  REQUIRE(pc.status == 0);
  CHECK(written_csv(pc.out).filename() != fa.filename());
}

TEST_CASE("usage errors exit with code 2") {
  const fs::path d = fresh_dir("usage");
  CHECK(run("tomography --d 2 --out " + d.string()).status == 2);
  CHECK(run("tomography --eps 0.1 --d 3 --out " + d.string()).status == 2);
  CHECK(run("tomography --eps abc").status == 2);
  CHECK(run("frobnicate").status == 2);
  CHECK(run("").status == 2);
  CHECK(run("tree --eps 0.2 --tree /nonexistent/tree.json --out " + d.string()).status == 1);
  CHECK(run("--help").status == 0);
}

TEST_CASE("tree and two-layer commands") {
  const fs::path d = fresh_dir("tree");
  const Proc two = run("twolayer --R 3 --eps 0.3 --trials 2 --seed 3 --out " + d.string());
  REQUIRE(two.status == 0);
  const CsvFile f = parse_csv(read_file(written_csv(two.out)));
  const std::string header = f.body.substr(0, f.body.find('\n'));
  // R leaf columns plus the root column.
  std::size_t shot_cols = 0;
  for (std::size_t pos = 0; (pos = header.find("shots_", pos)) != std::string::npos; ++pos) ++shot_cols;
  CHECK(shot_cols == 3 + 1 + 1);  // shots_0..2, shots_root, shots_total

  const Proc chain = run("tree --L 3 --R 1 --eps 0.3 --trials 2 --seed 3 --out " + d.string());
  REQUIRE(chain.status == 0);
  const std::string body = parse_csv(read_file(written_csv(chain.out))).body;
  CHECK(body.find(",chain,") != std::string::npos);

  const fs::path tree_file = d / "t.json";
  write_file(tree_file, R"({"root_state": "zero", "leaves": {"0": "Z", "1": "Z"}})");
  const Proc fixed = run("twolayer --eps 0.3 --trials 2 --tree " + tree_file.string() + " --out " + d.string());
  REQUIRE(fixed.status == 0);
  const std::string fb = parse_csv(read_file(written_csv(fixed.out))).body;
  CHECK(fb.find(",b,1,") != std::string::npos);  // exact value 1
}

TEST_CASE("verify detects tampering and replays runs") {
  const fs::path d = fresh_dir("verify");
  const Proc p = run("separation --R 1 --instances 4 --shots 50,100 --eps 0.5 --seed 11 --out " + d.string());
  REQUIRE(p.status == 0);
  const fs::path f = written_csv(p.out);
  CHECK(count_rows(read_file(f)) == 4);
  const Proc v = run("verify " + f.string() + " --rerun");
  CHECK(v.status == 0);
  CHECK(v.out.find("rerun identical") != std::string::npos);

  std::string text = read_file(f);
  const auto pos = text.rfind(",1\n");
  if (pos != std::string::npos) text.replace(pos, 3, ",0\n");
  else text += "1,learning,1,1,1,1,1,1\n";
  const fs::path g = d / "tampered.csv";
  write_file(g, text);
  CHECK(run("verify " + g.string()).status == 3);
  CHECK(run("verify " + (d / "missing.csv").string()).status == 1);
}

TEST_CASE("scaling and plan commands") {
  const fs::path d = fresh_dir("scaling");
  const Proc s = run("scaling --eps 0.1 --R-min 1 --R-max 6 --out " + d.string());
  REQUIRE(s.status == 0);
  const std::string body = parse_csv(read_file(written_csv(s.out))).body;
  std::istringstream is(body);
  std::string line;
  std::getline(is, line);
  int expected_r = 1;
  while (std::getline(is, line)) {
    CHECK(line.rfind("1," + std::to_string(expected_r) + ",", 0) == 0);  // sorted by R
    ++expected_r;
  }
  CHECK(expected_r == 7);
  const Proc p = run("plan --L 3 --R 1 --eps 0.2 --out " + d.string());
  REQUIRE(p.status == 0);
  CHECK(p.out.find("chain") != std::string::npos);
}

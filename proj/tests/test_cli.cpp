#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "sasvr_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SASVR_CLI) + " " + args + " >>" +
                          (work_dir() / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Small desk dataset shared by the cases below.
const fs::path& dataset() {
  static const fs::path d = [] {
    const fs::path p = work_dir() / "ds";
    REQUIRE(run("generate --counts 6,2,3 --subjects 5 --seed 4 --out " + p.string()) == 0);
    return p;
  }();
  return d;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage and IO errors exit with 2") {
  const std::string w = work_dir().string();
  CHECK(run("generate --no-such-flag") == 2);
  CHECK(run("") == 2);

  {
    std::ofstream f(work_dir() / "bad.json");
    f << R"({"seed": 3, "bogus": 1})";
  }
  CHECK(run("generate --config " + w + "/bad.json --out " + w + "/never") == 2);
  CHECK_FALSE(fs::exists(work_dir() / "never"));
  CHECK(run("generate --config " + w + "/absent.json") == 2);
  CHECK(run("generate --reference-dir " + w + "/no_refs --out " + w + "/never") == 2);
  CHECK(run("evaluate --dataset " + dataset().string() + " --checkpoint " + w +
            "/missing.ckpt --out " + w + "/ev") == 2);
  CHECK(run("evaluate --dataset " + w + "/no_dataset --oracle --out " + w + "/ev") == 2);
}

TEST_CASE("every subcommand prints help") {
  for (const char* sub : {"generate", "train", "evaluate", "bench", "motion-study"}) {
    CHECK(run(std::string(sub) + " --help") == 0);
  }
}

TEST_CASE("generation is deterministic") {
  const fs::path again = work_dir() / "ds_again";
  REQUIRE(run("generate --counts 6,2,3 --subjects 5 --seed 4 --out " + again.string()) == 0);
  for (const char* f : {"dataset.json", "summary.csv", "manifests/train.jsonl",
                        "manifests/test.jsonl"}) {
    INFO(std::string(f));
    REQUIRE(fs::exists(dataset() / f));
    CHECK(slurp(dataset() / f) == slurp(again / f));
  }
}

TEST_CASE("oracle evaluation reports zero error") {
  const fs::path out = work_dir() / "ev_oracle";
  REQUIRE(run("evaluate --oracle --dataset " + dataset().string() + " --out " + out.string()) == 0);
  std::istringstream lines(slurp(out / "summary.csv"));
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  const auto names = split_csv(header);
  const auto cells = split_csv(row);
  REQUIRE(names.size() == cells.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("D_reg", 0) == 0 || names[i].rfind("E_", 0) == 0 ||
        names[i].rfind("MSE", 0) == 0) {
      INFO(names[i]);
      CHECK(std::stod(cells[i]) == 0.0);
    }
  }
  CHECK(cells[2] == "3");
}

TEST_CASE("zero-step training writes the initial checkpoint and its echo reproduces it") {
  const fs::path a = work_dir() / "train0";
  REQUIRE(run("train --steps 0 --quiet --dataset " + dataset().string() + " --out " + a.string()) ==
          0);
  REQUIRE(fs::exists(a / "checkpoint.bin"));
  REQUIRE(fs::exists(a / "config.json"));

  const fs::path b = work_dir() / "train0_echo";
  REQUIRE(run("train --config " + (a / "config.json").string() + " --out " + b.string()) == 0);
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
}

TEST_CASE("short training runs repeat exactly and divergence exits with 3") {
  const std::string ds = dataset().string();
  const fs::path a = work_dir() / "t2a", b = work_dir() / "t2b";
  REQUIRE(run("train --steps 2 --batch-size 2 --quiet --dataset " + ds + " --out " + a.string()) ==
          0);
  REQUIRE(run("train --steps 2 --batch-size 2 --quiet --dataset " + ds + " --out " + b.string()) ==
          0);
  CHECK(slurp(a / "history.csv") == slurp(b / "history.csv"));
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));

  CHECK(run("train --steps 4 --batch-size 2 --lr 3e38 --quiet --dataset " + ds + " --out " +
            (work_dir() / "t_nan").string()) == 3);
}

}  // TEST_SUITE

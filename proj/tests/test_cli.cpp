#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#ifndef COHERENCE_LAB_BIN
#error "COHERENCE_LAB_BIN must point at the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    path = fs::temp_directory_path() / ("cohlab_cli_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd =
      std::string(COHERENCE_LAB_BIN) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("gen-synth is seed-deterministic and validates --sents") {
  TmpDir tmp;
  const std::string a = (tmp.path / "a.jsonl").string();
  const std::string b = (tmp.path / "b.jsonl").string();
  REQUIRE(run("gen-synth --out " + a + " --docs 8 --sents 3 --seed 5") == 0);
  REQUIRE(run("gen-synth --out " + b + " --docs 8 --sents 3 --seed 5") == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != "");

  const std::string empty = (tmp.path / "empty.jsonl").string();
  CHECK(run("gen-synth --out " + empty + " --docs 0 --sents 3") == 0);
  CHECK(slurp(empty) == "");

  CHECK(run("gen-synth --out " + a + " --docs 4 --sents 1") == 1);
}

TEST_CASE("permute emits k lines per multi-sentence document") {
  TmpDir tmp;
  const std::string corpus = (tmp.path / "c.jsonl").string();
  const std::string perms = (tmp.path / "p.jsonl").string();
  REQUIRE(run("gen-synth --out " + corpus + " --docs 5 --sents 4 --seed 2") == 0);
  REQUIRE(run("permute --corpus " + corpus + " --k 20 --seed 3 --out " + perms) == 0);
  std::ifstream in(perms);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 5 * 20);  // 4! - 1 = 23 >= 20
}

TEST_CASE("train/eval round trip and exit codes") {
  TmpDir tmp;
  const std::string corpus = (tmp.path / "c.jsonl").string();
  const std::string out_dir = (tmp.path / "run").string();
  REQUIRE(run("gen-synth --out " + corpus + " --docs 12 --sents 3 --seed 7") == 0);
  write(tmp.path / "cfg.json",
        "{\"task\":\"3way\",\"arch\":\"vanilla\",\"out_dir\":\"" + out_dir +
            "\",\"train\":{\"epochs\":1,\"batch_size\":4,\"n_seeds\":1,"
            "\"dropout_p\":0.0},"
            "\"model\":{\"n_layers\":1,\"n_heads\":2,\"d_model\":16,\"d_ff\":32},"
            "\"data\":{\"corpus\":\"" + corpus + "\",\"n_eval\":2}}");
  REQUIRE(run("train --config " + (tmp.path / "cfg.json").string()) == 0);
  CHECK(fs::exists(out_dir + "/run_seed0.json"));
  CHECK(fs::exists(out_dir + "/model.json"));
  CHECK(fs::exists(out_dir + "/model.bin"));
  CHECK(run("eval --checkpoint " + out_dir + "/model --corpus " + corpus +
            " --task 3way") == 0);

  // usage/config errors -> 1
  write(tmp.path / "bad.json", "{\"task\":\"3way\",\"nope\":1}");
  CHECK(run("train --config " + (tmp.path / "bad.json").string()) == 1);
  write(tmp.path / "noperm.json",
        "{\"task\":\"order\",\"data\":{\"corpus\":\"" + corpus + "\"}}");
  CHECK(run("train --config " + (tmp.path / "noperm.json").string()) == 1);
  write(tmp.path / "noent.json",
        "{\"task\":\"2way\",\"arch\":\"mtl\",\"data\":{\"corpus\":\"" + corpus +
            "\"}}");
  CHECK(run("train --config " + (tmp.path / "noent.json").string()) == 1);
  CHECK(run("definitely-not-a-subcommand") == 1);

  // data errors -> 2
  CHECK(run("eval --checkpoint " + (tmp.path / "missing").string() +
            " --corpus " + corpus + " --task 3way") == 2);
  CHECK(run("permute --corpus " + (tmp.path / "missing.jsonl").string() +
            " --k 2 --seed 1 --out " + (tmp.path / "o.jsonl").string()) == 2);
}

TEST_CASE("multi-seed fan-out writes one report per seed plus aggregate") {
  TmpDir tmp;
  const std::string corpus = (tmp.path / "c.jsonl").string();
  const std::string out_dir = (tmp.path / "runs").string();
  REQUIRE(run("gen-synth --out " + corpus + " --docs 9 --sents 3 --seed 4") == 0);
  write(tmp.path / "cfg.json",
        "{\"task\":\"3way\",\"arch\":\"vanilla\",\"out_dir\":\"" + out_dir +
            "\",\"train\":{\"epochs\":1,\"batch_size\":4,\"dropout_p\":0.0},"
            "\"model\":{\"n_layers\":1,\"n_heads\":2,\"d_model\":16,\"d_ff\":32},"
            "\"data\":{\"corpus\":\"" + corpus + "\",\"n_eval\":2}}");
  // flags win over the config default of 10 seeds
  const int rc = std::system(("COHERENCE_LAB_THREADS=2 " +
                              std::string(COHERENCE_LAB_BIN) +
                              " train --seeds 3 --config " +
                              (tmp.path / "cfg.json").string() +
                              " >/dev/null 2>&1")
                                 .c_str());
  REQUIRE(WEXITSTATUS(rc) == 0);
  CHECK(fs::exists(out_dir + "/run_seed0.json"));
  CHECK(fs::exists(out_dir + "/run_seed1.json"));
  CHECK(fs::exists(out_dir + "/run_seed2.json"));
  CHECK(fs::exists(out_dir + "/aggregate.json"));
}

TEST_CASE("gradcheck subcommand") {
  CHECK(run("gradcheck --arch vanilla --tol 1e-4") == 0);
  CHECK(run("gradcheck --arch vanilla --tol 0") == 3);  // nothing passes tol 0
  CHECK(run("gradcheck --arch nonsense") == 1);
}

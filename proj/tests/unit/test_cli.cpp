#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SKUPATCH_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / ("skupatch_cli_" + std::to_string(::getpid()));
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.cfg") << "image_size = 32\npatch_size = 16\nwidth = 16\nheads = 2\nlayers = 3\n"
                                       "queries = 8\nffn_hidden = 32\nmask_grid = 8\nmask_coeffs = 16\n"
                                       "num_seen_skus = 3\nnum_unseen_skus = 2\ntrain_scenes = 3\ntest_scenes = 2\n"
                                       "patches_per_sku = 2\nsku_size_min = 10\nsku_size_max = 16\n"
                                       "steps = 4\nlog_every = 2\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("") != 0);
  CHECK(run("frobnicate") == 2);
  CHECK(run("eval --ckpt /nonexistent/x.ckpt --data /nonexistent/m.txt") == 2);
  CHECK(run("gen-data --seed notanumber --out /tmp/x") == 2);
}

TEST_CASE("end-to-end through the command line") {
  const Workspace w;
  REQUIRE(run("gen-data --config " + w.p("tiny.cfg") + " --seed 3 --out " + w.p("data")) == 0);
  const std::string manifest = w.p("data/manifest.txt");
  REQUIRE(fs::exists(manifest));
  REQUIRE(run("train --config " + w.p("tiny.cfg") + " --data " + manifest + " --seed 1 --out " + w.p("run")) == 0);
  CHECK(fs::exists(w.p("run/last.ckpt")));
  CHECK(fs::exists(w.p("run/best.ckpt")));
  CHECK(fs::exists(w.p("run/train_log.txt")));
  CHECK(run("eval --ckpt " + w.p("run/last.ckpt") + " --data " + manifest + " --patches 2 --out " + w.p("report.txt")) == 0);
  CHECK(fs::exists(w.p("report.txt")));
  CHECK(run("eval --ckpt " + w.p("run/last.ckpt") + " --data " + manifest + " --patches 11") == 2);
  CHECK(run("infer --ckpt " + w.p("run/last.ckpt") + " --image " + w.p("data/test/scene_0000.ppm") + " --patch " +
            w.p("data/patches/sku_000_0.ppm") + " --out " + w.p("infer")) == 0);
  CHECK(fs::exists(w.p("infer/detections.txt")));

  // Mismatched config between model and data is an input error.
  std::ofstream(w.p("big.cfg")) << "image_size = 64\n";
  CHECK(run("train --config " + w.p("big.cfg") + " --data " + manifest + " --seed 1 --out " + w.p("bad")) == 2);

  // A corrupted checkpoint is rejected.
  {
    std::fstream f(w.p("run/last.ckpt"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  CHECK(run("eval --ckpt " + w.p("run/last.ckpt") + " --data " + manifest) == 2);
}

TEST_CASE("selftest") { CHECK(run("selftest") == 0); }

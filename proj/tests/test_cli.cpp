#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dlfs/synth.hpp"

using namespace dlfs;

namespace {

std::string binary() {
  const char* env = std::getenv("DLFS_BIN");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args, std::string* output = nullptr) {
  const std::string out_file = "cli_out.txt";
  const std::string cmd = binary() + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    *output = ss.str();
  }
  if (status < 0) return -1;
  return WEXITSTATUS(status);
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// one small dataset + short training run shared by the test cases
struct CliFixture {
  std::string data = "cli_data";
  std::string run_dir = "cli_run";
  CliFixture() {
    static bool ready = false;
    if (ready) return;
    std::filesystem::remove_all(data);
    std::filesystem::remove_all(run_dir);
    {
      std::ofstream cfg("cli_config.txt");
      cfg << "# desk-scale test configuration\n";
      cfg << "scales=2:32\n" << "lr=1e-3\n" << "batch_size=6\n" << "epochs=2\n";
      cfg << "seed=5\n" << "threads=2\n";
    }
    REQUIRE(run("gen-data --out " + data + " --classes 3 --train 45 --test 12 --seed 3 "
                "--image-size 16 --radius-min 2 --radius-max 3 --distractors 0") == 0);
    REQUIRE(run("train --config cli_config.txt --data " + data + "/manifest.txt --out " +
                run_dir) == 0);
    ready = true;
  }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("gen-data") == 2);          // missing --out
  CHECK(run("train --out x") == 2);     // missing --data
  CHECK(run("nonsense") == 2);          // unknown subcommand
  CHECK(run("") == 2);                  // no subcommand
  std::string help;
  CHECK(run("--help", &help) == 0);
  CHECK(help.find("gen-data") != std::string::npos);
}

TEST_CASE("gen-data writes a parsable manifest deterministically") {
  CliFixture fx;
  DatasetManifest m = read_manifest(fx.data + "/manifest.txt");
  CHECK(m.num_classes == 3);
  CHECK(m.train_count == 36);
  CHECK(m.val_count == 9);
  CHECK(m.test_count == 12);

  // same flags into a second directory: identical bytes everywhere
  const std::string data2 = "cli_data2";
  std::filesystem::remove_all(data2);
  REQUIRE(run("gen-data --out " + data2 + " --classes 3 --train 45 --test 12 --seed 3 "
              "--image-size 16 --radius-min 2 --radius-max 3 --distractors 0") == 0);
  for (const auto& entry : std::filesystem::directory_iterator(fx.data)) {
    const std::string name = entry.path().filename().string();
    CHECK(read_bytes(fx.data + "/" + name) == read_bytes(data2 + "/" + name));
  }
  std::filesystem::remove_all(data2);
}

TEST_CASE("train writes metrics and checkpoints, reruns byte-identically") {
  CliFixture fx;
  CHECK(std::filesystem::exists(fx.run_dir + "/metrics.csv"));
  CHECK(std::filesystem::exists(fx.run_dir + "/best.ckpt"));
  CHECK(std::filesystem::exists(fx.run_dir + "/last.ckpt"));

  const std::string rerun = "cli_run2";
  std::filesystem::remove_all(rerun);
  REQUIRE(run("train --config cli_config.txt --data " + fx.data + "/manifest.txt --out " +
              rerun + " --threads 1") == 0);
  CHECK(read_bytes(fx.run_dir + "/metrics.csv") == read_bytes(rerun + "/metrics.csv"));
  CHECK(read_bytes(fx.run_dir + "/last.ckpt") == read_bytes(rerun + "/last.ckpt"));
  std::filesystem::remove_all(rerun);
}

TEST_CASE("ablating the local branch zeroes its loss columns") {
  CliFixture fx;
  const std::string dir = "cli_run_ablate";
  std::filesystem::remove_all(dir);
  REQUIRE(run("train --config cli_config.txt --data " + fx.data + "/manifest.txt --out " + dir +
              " --ablate local") == 0);
  std::ifstream csv(dir + "/metrics.csv");
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 9);
    CHECK(std::stod(fields[4]) == 0.0);  // l_vi
    CHECK(std::stod(fields[5]) == 0.0);  // l_c
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("eval reproduces the logged validation accuracy and its own dump") {
  CliFixture fx;
  // last CSV row's val_mca
  std::ifstream csv(fx.run_dir + "/metrics.csv");
  std::string line, last;
  std::getline(csv, line);
  while (std::getline(csv, line))
    if (!line.empty()) last = line;
  std::stringstream ss(last);
  std::vector<std::string> fields;
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  const double logged_val_mca = std::stod(fields[7]);

  std::string out;
  REQUIRE(run("eval --config cli_config.txt --checkpoint " + fx.run_dir + "/last.ckpt --data " +
                  fx.data + "/manifest.txt --split val --dump cli_preds.txt",
              &out) == 0);
  const size_t pos = out.find("mean_class_accuracy=");
  REQUIRE(pos != std::string::npos);
  const double printed = std::stod(out.substr(pos + 20));
  CHECK(printed == doctest::Approx(logged_val_mca).epsilon(1e-8));

  // recompute the overall accuracy from the dumped per-sample predictions
  const size_t opos = out.find("overall_accuracy=");
  REQUIRE(opos != std::string::npos);
  const double overall = std::stod(out.substr(opos + 17));
  std::ifstream preds("cli_preds.txt");
  int total = 0, correct = 0;
  std::string pline;
  while (std::getline(preds, pline)) {
    std::stringstream ps(pline);
    long long idx, label, pred;
    ps >> idx >> label >> pred;
    ++total;
    if (label == pred) ++correct;
  }
  REQUIRE(total > 0);
  CHECK(overall == doctest::Approx(static_cast<double>(correct) / total).epsilon(1e-8));

  CHECK(run("eval --config cli_config.txt --checkpoint missing.ckpt --data " + fx.data +
            "/manifest.txt") == 1);
}

TEST_CASE("gradcheck subcommand contract") {
  std::string out;
  CHECK(run("gradcheck --seeds 0", &out) == 0);
  CHECK(out.find("0 checks") != std::string::npos);
  CHECK(run("gradcheck --seeds 1", &out) == 0);
  // one report line per component plus the summary
  int lines = 0;
  std::stringstream ss(out);
  std::string line;
  while (std::getline(ss, line))
    if (line.rfind("PASS", 0) == 0 || line.rfind("FAIL", 0) == 0) ++lines;
  CHECK(lines == 15);
}

TEST_CASE("viz writes valid netpbm files") {
  CliFixture fx;
  DatasetManifest m = read_manifest(fx.data + "/manifest.txt");
  const std::string rgb = fx.data + "/" + m.samples.front().rgb_file;
  const std::string d = fx.data + "/" + m.samples.front().d_file;

  std::filesystem::remove_all("cli_viz");
  REQUIRE(run("viz --config cli_config.txt --checkpoint " + fx.run_dir + "/best.ckpt --sample " + rgb + " " + d +
              " --out cli_viz --mode corr") == 0);
  std::vector<char> pgm = read_bytes("cli_viz/corr.pgm");
  const std::string pgm_header = "P5\n4 4\n255\n";  // 16x16 input, stride 4
  REQUIRE(pgm.size() == pgm_header.size() + 16);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<long>(pgm_header.size())) == pgm_header);

  REQUIRE(run("viz --config cli_config.txt --checkpoint " + fx.run_dir + "/best.ckpt --sample " + rgb + " " + d +
              " --out cli_viz --mode keypoints") == 0);
  std::vector<char> ppm = read_bytes("cli_viz/keypoints_rgb.ppm");
  const std::string ppm_header = "P6\n16 16\n255\n";
  REQUIRE(ppm.size() == ppm_header.size() + 16 * 16 * 3);
  CHECK(std::string(ppm.begin(), ppm.begin() + static_cast<long>(ppm_header.size())) == ppm_header);

  // reruns are bit-identical
  std::vector<char> again_before = read_bytes("cli_viz/corr.pgm");
  REQUIRE(run("viz --config cli_config.txt --checkpoint " + fx.run_dir + "/best.ckpt --sample " + rgb + " " + d +
              " --out cli_viz --mode corr") == 0);
  CHECK(read_bytes("cli_viz/corr.pgm") == again_before);

  // identical modality features give a constant map, rendered mid gray
  const std::string init_dir = "cli_init";
  std::filesystem::remove_all(init_dir);
  REQUIRE(run("train --config cli_config.txt --data " + fx.data + "/manifest.txt --out " +
              init_dir + " --epochs 0") == 0);
  REQUIRE(run("viz --config cli_config.txt --checkpoint " + init_dir + "/last.ckpt --sample " +
              rgb + " " + rgb + " --out cli_viz --mode corr") == 0);
  std::vector<char> flat = read_bytes("cli_viz/corr.pgm");
  REQUIRE(flat.size() == pgm_header.size() + 16);
  for (size_t i = pgm_header.size(); i < flat.size(); ++i)
    CHECK(static_cast<unsigned char>(flat[i]) == 128);

  CHECK(run("viz --config cli_config.txt --checkpoint " + fx.run_dir + "/best.ckpt --sample missing.dten " + d +
            " --out cli_viz --mode corr") == 1);

  std::filesystem::remove_all("cli_viz");
  std::filesystem::remove_all(init_dir);
}

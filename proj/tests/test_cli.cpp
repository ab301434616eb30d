#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gtp/cli.hpp"
#include "gtp/ensemble.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace gtp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

const std::vector<std::string> kSmallNet{"--image-size", "16",  "--encoder-channels", "4,8,8", "--feature-dim", "16",
                                         "--model-dim",  "16",  "--heads",            "2",     "--batch",       "8",
                                         "--eval-batch", "8",   "--lr",               "3e-3"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& extra) {
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// gen-data output shared by the cases below.
fs::path dataset() {
  static const fs::path dir = [] {
    const fs::path d = gtp::test::temp_dir("cli_data");
    spit(d / "synth.json", R"({"counts": [13, 12, 13, 12], "image_size": 16, "noise": 0.08, "seed": 3})");
    const Run r = cli({"gen-data", "--config", (d / "synth.json").string(), "--out", (d / "data").string()});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-data") {
    const fs::path d = dataset();
    const auto manifest = read_json(d / "data" / "manifest.json");
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.at("config").at("seed") == 3);
    CHECK(manifest.at("train_counts") == nlohmann::json{10, 10, 10, 10});
    CHECK(manifest.at("test_counts") == nlohmann::json{3, 2, 3, 2});
    CHECK(fs::exists(d / "data" / "train" / "labels.csv"));

    const Run r = cli({"gen-data", "--config", (d / "synth.json").string(), "--out", (d / "again").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("resolved configuration (gen-data):") != std::string::npos);
    for (const auto& e : fs::recursive_directory_iterator(d / "data")) {
      if (!e.is_regular_file()) continue;
      const fs::path other = d / "again" / fs::relative(e.path(), d / "data");
      CHECK(slurp(e.path()) == slurp(other));
    }
    const Run seeded = cli({"gen-data", "--config", (d / "synth.json").string(), "--out", (d / "s9").string(),
                            "--seed", "9"});
    CHECK(seeded.code == 0);
    CHECK(read_json(d / "s9" / "manifest.json").at("seed") == 9);
    spit(d / "bad.json", R"({"counts": [0, 1, 1, 1]})");
    CHECK(cli({"gen-data", "--config", (d / "bad.json").string(), "--out", (d / "x").string()}).code == 1);
    CHECK(cli({"gen-data", "--config", (d / "nope.json").string(), "--out", (d / "x").string()}).code != 0);
  }

  TEST_CASE("train, eval, ensemble, report") {
    const fs::path d = dataset();
    const std::string data = (d / "data").string();
    const auto start = std::chrono::steady_clock::now();
    const Run g = cli(with({"train", "--data", data, "--loss", "balce", "--gtp", "on", "--epochs", "2", "--seed", "1",
                            "--out", (d / "gtp.ckpt").string()},
                           kSmallNet));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE(g.code == 0);
    CHECK(seconds < 60.0);
    CHECK(g.out.find("resolved configuration (train):") != std::string::npos);
    CHECK(g.out.find("class counts (train): silicosis=10") != std::string::npos);
    CHECK(fs::exists(d / "gtp.best.ckpt"));
    CHECK(slurp(d / "gtp.log.csv").rfind("epoch,train_loss,test_macro_f1\n", 0) == 0);

    std::vector<std::string> dnn_args{"train", "--data", data, "--loss", "ce", "--gtp", "off", "--epochs", "1",
                                      "--seed", "2", "--out", (d / "dnn.ckpt").string(), "--image-size", "16",
                                      "--encoder-channels", "4,8,8", "--feature-dim", "16", "--batch", "8"};
    REQUIRE(cli(dnn_args).code == 0);
    CHECK(cli(with(dnn_args, {"--heads", "2"})).code == 1);
    CHECK(cli(with(dnn_args, {"--bogus"})).code == 1);
    CHECK(cli(with(std::vector<std::string>(dnn_args.begin(), dnn_args.end()), {"--batch", "1"})).code == 1);

    for (const std::string m : {"gtp", "dnn"}) {
      const Run e = cli({"eval", "--ckpt", (d / (m + ".ckpt")).string(), "--data", data, "--preds",
                         (d / (m + ".csv")).string(), "--report", (d / (m + ".json")).string()});
      REQUIRE(e.code == 0);
      const PredictionSet p = read_predictions((d / (m + ".csv")).string());
      CHECK(p.size() == 10);
      const auto rep = read_json(d / (m + ".json"));
      CHECK(rep.at("macro_f1").get<double>() >= 0.0);
      CHECK(rep.at("macro_f1").get<double>() <= 1.0);
      CHECK(fs::exists(d / (m + ".confusion.csv")));
      CHECK(fs::exists(d / (m + ".roc_silicosis.csv")));
    }
    const std::string gtp_csv = (d / "gtp.csv").string(), dnn_csv = (d / "dnn.csv").string();
    const auto single = read_json(d / "gtp.json");

    const Run self = cli({"ensemble", "--preds", gtp_csv, gtp_csv, "--method", "average", "--report",
                          (d / "self.json").string()});
    REQUIRE(self.code == 0);
    const auto sj = read_json(d / "self.json");
    CHECK(sj.at("macro_f1") == single.at("macro_f1"));
    CHECK(sj.at("auc") == single.at("auc"));
    CHECK(sj.at("confusion") == single.at("confusion"));

    const Run w = cli({"ensemble", "--preds", gtp_csv, dnn_csv, "--method", "weighted", "--weights", "1,0",
                       "--report", (d / "w.json").string()});
    REQUIRE(w.code == 0);
    CHECK(read_json(d / "w.json").at("macro_f1") == single.at("macro_f1"));
    CHECK(cli({"ensemble", "--preds", gtp_csv, dnn_csv, "--method", "weighted", "--weights", "3,1", "--report",
               (d / "w2.json").string()})
              .err.find("normalizing") != std::string::npos);
    CHECK(cli({"ensemble", "--preds", gtp_csv, dnn_csv, "--method", "weighted", "--weights", "1", "--report",
               (d / "w3.json").string()})
              .code == 1);

    const Run rep = cli({"report", "--reports", (d / "gtp.json").string(), (d / "dnn.json").string(),
                         (d / "self.json").string(), "--out", (d / "table.csv").string()});
    REQUIRE(rep.code == 0);
    std::istringstream table(slurp(d / "table.csv"));
    std::string line;
    std::getline(table, line);
    CHECK(line == "model,macro_f1,auc_silicosis,auc_normal,auc_bacterial,auc_viral");
    std::vector<std::string> rows;
    while (std::getline(table, line)) rows.push_back(line);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].rfind(single.at("model").get<std::string>() + ",", 0) == 0);
    CHECK(rows[2].rfind("average(gtp+gtp),", 0) == 0);
    spit(d / "broken.json", "{not json");
    CHECK(cli({"report", "--reports", (d / "broken.json").string(), "--out", (d / "t2.csv").string()}).code == 1);

    CHECK(cli({"eval", "--ckpt", (d / "missing.ckpt").string(), "--data", data, "--preds", (d / "m.csv").string(),
               "--report", (d / "m.json").string()})
              .code == 2);

    // Single-class evaluation set: AUC undefined, still exit 0.
    const fs::path one = d / "one";
    fs::create_directories(one);
    std::string labels = "filename,class\n";
    std::istringstream src(slurp(d / "data" / "test" / "labels.csv"));
    std::getline(src, line);
    while (std::getline(src, line)) {
      if (line.find(",normal") == std::string::npos) continue;
      const std::string file = line.substr(0, line.find(','));
      fs::copy_file(d / "data" / "test" / file, one / file, fs::copy_options::overwrite_existing);
      labels += line + "\n";
    }
    spit(one / "labels.csv", labels);
    const Run deg = cli({"eval", "--ckpt", (d / "gtp.ckpt").string(), "--data", one.string(), "--preds",
                         (d / "one.csv").string(), "--report", (d / "one.json").string()});
    CHECK(deg.code == 0);
    CHECK(deg.err.find("undefined") != std::string::npos);
    CHECK(read_json(d / "one.json").at("auc").at("silicosis") == "undefined");
  }

  TEST_CASE("ensemble by hand") {
    const fs::path d = gtp::test::temp_dir("cli_vote");
    const std::string header = "sample_id,p_silicosis,p_normal,p_bacterial,p_viral,label\n";
    // Votes per sample: a (0, 0, 1) -> 0; b (2, 2, 2) -> 2; c (0, 1, 3) -> tie.
    spit(d / "m1.csv", header + "a,0.7,0.1,0.1,0.1,0\nb,0.1,0.1,0.7,0.1,2\nc,0.5,0.2,0.2,0.1,0\n");
    spit(d / "m2.csv", header + "a,0.6,0.2,0.1,0.1,0\nb,0.2,0.1,0.6,0.1,2\nc,0.1,0.8,0.05,0.05,0\n");
    spit(d / "m3.csv", header + "a,0.2,0.6,0.1,0.1,0\nb,0.1,0.2,0.6,0.1,2\nc,0.1,0.1,0.1,0.7,0\n");
    const Run r = cli({"ensemble", "--preds", (d / "m1.csv").string(), (d / "m2.csv").string(),
                       (d / "m3.csv").string(), "--method", "maxvote", "--report", (d / "vote.json").string()});
    REQUIRE(r.code == 0);
    const auto cm = read_json(d / "vote.json").at("confusion");
    // c: summed probabilities 0.7 (class 0), 1.1 (1), 0.35 (2), 0.85 (3) among
    // tied classes 0, 1, 3 -> class 1.
    CHECK(cm[0][0] == 1);
    CHECK(cm[0][1] == 1);
    CHECK(cm[2][2] == 1);

    spit(d / "other.csv", header + "a,0.7,0.1,0.1,0.1,0\nz,0.1,0.1,0.7,0.1,2\nc,0.5,0.2,0.2,0.1,0\n");
    CHECK(cli({"ensemble", "--preds", (d / "m1.csv").string(), (d / "other.csv").string(), "--method", "average",
               "--report", (d / "x.json").string()})
              .code == 1);
    spit(d / "nolabel.csv", "sample_id,p_silicosis,p_normal,p_bacterial,p_viral\na,1,0,0,0\nb,0,0,1,0\nc,1,0,0,0\n");
    CHECK(cli({"ensemble", "--preds", (d / "nolabel.csv").string(), "--method", "average", "--report",
               (d / "y.json").string()})
              .code == 1);
    CHECK(cli({"ensemble", "--preds", (d / "m1.csv").string(), "--method", "median", "--report",
               (d / "z.json").string()})
              .code == 1);
    CHECK(cli({}).code == 1);
    CHECK(cli({"--help"}).code == 0);
  }
}

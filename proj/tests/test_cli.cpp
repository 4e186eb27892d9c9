#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dora/schema.hpp"

namespace fs = std::filesystem;
using dora::cli::run_cli;

namespace {

struct Captured {
  int code;
  std::string out;
  std::string err;
};

Captured run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// One small corpus shared by every test in this file.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("dora_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    const auto r = run({"synth-gen", "--out", (root_ / "data").string(), "--n-unlabeled", "600", "--n-train", "200",
                        "--n-test", "100", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data(const char* file) { return (root_ / "data" / file).string(); }
  static std::vector<std::string> small_model() {
    return {"--dz", "4", "--d-nr", "3", "--d-cr", "2", "--d-econ-geo", "3", "--d-poi", "3",
            "--encoder-multipliers", "2,1", "--batch-size", "128"};
  }
  static std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
  static std::vector<std::string> labeled() {
    return {"--data", data("train.csv"), "--test", data("test.csv"), "--schema", data("schema.txt")};
  }

  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, SynthGenWritesEverything) {
  for (const char* f : {"schema.txt", "unlabeled.csv", "train.csv", "test.csv", "facilities.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "data" / f)) << f;
  }
  const auto schema = dora::read_schema_file(data("schema.txt"));
  EXPECT_EQ(schema.num_towns(), 20u);
  EXPECT_EQ(read_json(root_ / "data" / "manifest.json")["command"], "synth-gen");
}

TEST_F(CliTest, PretrainRecordsAlphaInManifest) {
  const fs::path out = root_ / "pre_alpha";
  const auto r = run(with({"pretrain", "--schema", data("schema.txt"), "--unlabeled", data("unlabeled.csv"), "--out",
                           out.string(), "--epochs-pretrain", "2", "--alpha", "1.0"},
                          small_model()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "model.ckpt"));
  EXPECT_FALSE(fs::exists(out / "manifest.json.tmp"));
  const auto m = read_json(out / "manifest.json");
  EXPECT_EQ(m["command"], "pretrain");
  EXPECT_EQ(m["config"]["pretrain"]["alpha"].get<double>(), 1.0);
  EXPECT_EQ(m["config"]["model"]["d_z"].get<int>(), 4);
  EXPECT_EQ(m["seeds"].size(), 1u);
  EXPECT_NE(r.out.find("heldout macro-F1"), std::string::npos);
  std::istringstream log(slurp(out / "pretrain_log.tsv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, 3u);
}

TEST_F(CliTest, PretrainCorpusFilter) {
  const fs::path out = root_ / "pre_filter";
  const auto r = run(with({"pretrain", "--schema", data("schema.txt"), "--unlabeled", data("unlabeled.csv"), "--out",
                           out.string(), "--epochs-pretrain", "1", "--corpus-filter", "building"},
                          small_model()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(out / "manifest.json");
  EXPECT_EQ(m["config"]["pretrain"]["corpus_filter"], "building");
  const auto schema = std::make_shared<const dora::FeatureSchema>(dora::read_schema_file(data("schema.txt")));
  const auto all = dora::load_csv(data("unlabeled.csv"), schema, dora::Role::kUnlabeled);
  const auto n = dora::filter_by_type(all, "building").size();
  const auto& res = m["config"]["result"];
  EXPECT_EQ(res["train_size"].get<std::size_t>() + res["heldout_size"].get<std::size_t>(), n);
  EXPECT_LT(n, all.size());
}

TEST_F(CliTest, EvaluateBaselinesAndReports) {
  const fs::path out = root_ / "eval_ha";
  const auto r = run(with({"evaluate", "--baseline", "ha,lr", "--shots", "1,5", "--seeds", "3", "--out", out.string()},
                          labeled()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto tsv = slurp(out / "report.tsv");
  EXPECT_EQ(tsv, r.out);
  EXPECT_EQ(tsv.rfind("model\tdataset\tshots\tseed\tsupport\tMAPE\tMAE\tHR10\n", 0), 0u);
  EXPECT_NE(tsv.find("\nHA\ttest\t5\t3\t"), std::string::npos);
  EXPECT_NE(tsv.find("\nLR\ttest\t1\t3\t"), std::string::npos);
  const auto rep = read_json(out / "report.json");
  ASSERT_EQ(rep.size(), 4u);
  EXPECT_EQ(rep[0]["rows"].size(), 3u);
  EXPECT_EQ(read_json(out / "manifest.json")["seeds"].size(), 3u);
}

TEST_F(CliTest, EvaluateNoPretrainIsDnn) {
  const fs::path out = root_ / "eval_dnn";
  const auto r = run(with(with({"finetune-eval", "--no-pretrain", "--seeds", "1", "--epochs-finetune", "3", "--out",
                                out.string()},
                               labeled()),
                          small_model()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\nDNN\t"), std::string::npos);
  EXPECT_EQ(r.out.find("DoRA"), std::string::npos);
}

TEST_F(CliTest, AblateRowCounts) {
  const fs::path pre_out = root_ / "abl";
  auto base = with(with({"ablate", "--unlabeled", data("unlabeled.csv"), "--seeds", "1", "--epochs-pretrain", "1",
                         "--epochs-finetune", "2", "--out", pre_out.string()},
                        labeled()),
                   small_model());
  auto count_rows = [](const fs::path& dir) { return read_json(dir / "report.json").size(); };

  auto r = run(with(base, {"--axis", "feature-subset"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_rows(pre_out), 4u);

  r = run(with(base, {"--freeze-encoder"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_rows(pre_out), 2u);

  r = run(with(base, {"--alpha", "0.5,0.7"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_rows(pre_out), 2u);
  EXPECT_NE(r.out.find("DoRA[alpha=0.5]"), std::string::npos);
  const auto cells = read_json(pre_out / "manifest.json")["config"]["cells"];
  EXPECT_EQ(cells[1]["pretrain"]["alpha"].get<double>(), 0.7);

  r = run(with(base, {"--axis", "pretext-target,corpus-filter"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_rows(pre_out), 2u + 4u);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, dora::cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, dora::cli::kUsage);
  EXPECT_EQ(run({"evaluate", "--shots", "x"}).code, dora::cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, dora::cli::kOk);
  EXPECT_EQ(run({"pretrain", "--unlabeled", data("unlabeled.csv")}).code, dora::cli::kUsage);
  EXPECT_EQ(run(with({"evaluate", "--out", (root_ / "x").string()}, labeled())).code, dora::cli::kUsage);
  EXPECT_EQ(run({"pretrain", "--schema", data("schema.txt"), "--unlabeled", data("missing.csv"), "--out",
                 (root_ / "x").string()})
                .code,
            dora::cli::kDataError);
  EXPECT_EQ(run({"pretrain", "--schema", data("schema.txt"), "--unlabeled", data("unlabeled.csv"), "--alpha", "1.5",
                 "--out", (root_ / "x").string()})
                .code,
            dora::cli::kUsage);
  // Labeled test data where a price is required but missing.
  EXPECT_EQ(run(with({"evaluate", "--baseline", "ha", "--out", (root_ / "x").string(), "--test",
                      data("unlabeled.csv"), "--data", data("train.csv"), "--schema", data("schema.txt")},
                     {}))
                .code,
            dora::cli::kDataError);
  auto lr_blowup = with({"pretrain", "--schema", data("schema.txt"), "--unlabeled", data("unlabeled.csv"), "--out",
                         (root_ / "x").string(), "--epochs-pretrain", "5", "--lr", "1e300"},
                        small_model());
  EXPECT_EQ(run(lr_blowup).code, dora::cli::kNumericalError);
}

TEST_F(CliTest, ConfigFileFlagsOverride) {
  const fs::path cfg = root_ / "run.ini";
  std::ofstream(cfg) << "[evaluate]\nseeds=2\nbaseline=ha\nshots=1\n";
  const fs::path out = root_ / "cfg";
  const auto r = run(with({"evaluate", "--config", cfg.string(), "--shots", "3", "--out", out.string()}, labeled()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = read_json(out / "report.json");
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_EQ(rep[0]["model"], "HA");
  EXPECT_EQ(rep[0]["shots"].get<int>(), 3);
  EXPECT_EQ(rep[0]["rows"].size(), 2u);
}

TEST_F(CliTest, OutDirFromEnvironment) {
  const fs::path out = root_ / "env_out";
  ::setenv("DORA_OUT_DIR", out.c_str(), 1);
  const auto r = run(with({"evaluate", "--baseline", "ha", "--seeds", "1"}, labeled()));
  ::unsetenv("DORA_OUT_DIR");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "report.tsv"));
}

TEST_F(CliTest, PoiConvert) {
  const fs::path dir = root_ / "poi";
  fs::create_directories(dir);
  std::ofstream(dir / "fac.csv") << "x,y,class\n0,0,YIMBY\n3,4,nimby\n100,0,YIMBY\n";
  std::ofstream(dir / "props.csv") << "id,x,y\n7,0,0\n8,50,0\n";
  const auto r = run({"poi-convert", "--facilities", (dir / "fac.csv").string(), "--properties",
                      (dir / "props.csv").string(), "--radii", "5,50", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "poi_features.csv"), "id,YIMBY_5,YIMBY_50,NIMBY_5,NIMBY_50\n7,1,1,1,1\n8,0,2,0,1\n");

  std::ofstream(dir / "bad.csv") << "x,y,class\n0,0,park\n";
  EXPECT_EQ(run({"poi-convert", "--facilities", (dir / "bad.csv").string(), "--properties",
                 (dir / "props.csv").string(), "--out", dir.string()})
                .code,
            dora::cli::kDataError);
}

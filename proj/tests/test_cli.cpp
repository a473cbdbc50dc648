#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "trinityx/data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(TRINITYX_TEST_TMP) / "cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome cli(const std::string& args, const std::string& env = "env -u MOCAE_SEED") {
  static int counter = 0;
  const fs::path dir = fs::path(TRINITYX_TEST_TMP) / "cli";
  fs::create_directories(dir);
  const fs::path o = dir / ("stdout" + std::to_string(counter)), e = dir / ("stderr" + std::to_string(counter));
  ++counter;
  const std::string cmd =
      env + " " + quote(TRINITYX_CLI_PATH) + " " + args + " >" + quote(o.string()) + " 2>" + quote(e.string());
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json small_config(const fs::path& out) {
  return {{"seed", 42}, {"synth", {{"seed", 42}, {"per_dimension", 200}, {"classes", 3}}}, {"output_dir", out.string()}};
}

/// One trained checkpoint shared by the read-only commands.
const fs::path& trained() {
  static const fs::path dir = [] {
    const fs::path d = scratch("trained");
    const Outcome r = cli("train --config " + quote(write_config(d, small_config(d / "out")).string()));
    EXPECT_EQ(r.code, 0) << r.err;
    return d / "out";
  }();
  return dir;
}

std::string ckpt() { return quote((trained() / "checkpoint.mce").string()); }

}  // namespace

TEST(CliTrain, WritesArtifacts) {
  const fs::path out = trained();
  for (const char* f : {"checkpoint.mce", "checkpoint.mce.json", "train_report.json", "resolved_config.json", "corpus.jsonl"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json report = json::parse(slurp(out / "train_report.json"));
  EXPECT_EQ(report["epochs"].size(), 3u);
}

TEST(CliTrain, MissingCorpusNamesTheKey) {
  const fs::path d = scratch("nocorpus");
  const Outcome r = cli("train --config " + quote(write_config(d, {{"seed", 1}, {"output_dir", (d / "o").string()}}).string()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("corpus"), std::string::npos) << r.err;
}

TEST(CliTrain, UnknownKeyRejected) {
  const fs::path d = scratch("unknown");
  json j = small_config(d / "o");
  j["learnign_rate"] = 0.1;
  const Outcome r = cli("train --config " + quote(write_config(d, j).string()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learnign_rate"), std::string::npos) << r.err;
}

TEST(CliTrain, MissingConfigFileIsIoError) {
  EXPECT_EQ(cli("train --config /nonexistent/config.json").code, 3);
  EXPECT_EQ(cli("bogus").code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST(CliTrain, RerunIsByteIdentical) {
  const fs::path d = scratch("rerun");
  const Outcome r = cli("train --config " + quote(write_config(d, small_config(d / "second")).string()));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint.mce", "train_report.json"})
    EXPECT_EQ(slurp(d / "second" / f), slurp(trained() / f)) << f;
}

TEST(CliTrain, ResolvedConfigReproducesTheRun) {
  const fs::path d = scratch("refeed");
  const Outcome r = cli("train --config " + quote((trained() / "resolved_config.json").string()) + " --out " +
                    quote((d / "again").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "again" / "checkpoint.mce"), slurp(trained() / "checkpoint.mce"));
  EXPECT_EQ(slurp(d / "again" / "train_report.json"), slurp(trained() / "train_report.json"));
}

TEST(CliTrain, SeedPrecedence) {
  const fs::path d = scratch("seed");
  const std::string cfg = quote(write_config(d, small_config(d / "file")).string());
  ASSERT_EQ(cli("train --config " + cfg + " --out " + quote((d / "env").string()), "MOCAE_SEED=7").code, 0);
  ASSERT_EQ(cli("train --config " + cfg + " --seed 7 --out " + quote((d / "flag").string())).code, 0);
  ASSERT_EQ(cli("train --config " + cfg + " --seed 7 --out " + quote((d / "both").string()), "MOCAE_SEED=9").code, 0);
  const auto seed_of = [&](const char* sub) { return json::parse(slurp(d / sub / "resolved_config.json"))["seed"]; };
  EXPECT_EQ(seed_of("env"), 7);
  EXPECT_EQ(seed_of("flag"), 7);
  EXPECT_EQ(seed_of("both"), 7);
  EXPECT_EQ(slurp(d / "env" / "train_report.json"), slurp(d / "flag" / "train_report.json"));
  EXPECT_NE(slurp(d / "env" / "train_report.json"), slurp(trained() / "train_report.json"));
  EXPECT_EQ(cli("train --config " + cfg, "MOCAE_SEED=abc").code, 2);
}

TEST(CliEval, WritesMetricsAndActivation) {
  const fs::path d = scratch("eval");
  const Outcome r = cli("eval --checkpoint " + ckpt() + " --corpus " + quote((trained() / "corpus.jsonl").string()) +
                    " --out " + quote(d.string()));
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = json::parse(slurp(d / "metrics.json"));
  for (const char* k : {"wr", "ss", "ti", "avg", "ece", "brier", "activation"}) {
    ASSERT_TRUE(m.contains(k)) << k;
    EXPECT_FALSE(m[k].is_null()) << k;
  }
  EXPECT_EQ(slurp(d / "activation.csv").rfind("dimension,expert,mean_pi,argmax_freq\n", 0), 0u);
}

TEST(CliEval, EmptyTestSplitNamesTheSplit) {
  const fs::path d = scratch("eval_empty");
  std::vector<trinityx::Example> only_train;
  for (const auto& e : trinityx::load_corpus((trained() / "corpus.jsonl").string()))
    if (e.split == trinityx::Split::train) only_train.push_back(e);
  trinityx::save_corpus((d / "train_only.jsonl").string(), only_train);
  const Outcome r = cli("eval --checkpoint " + ckpt() + " --corpus " + quote((d / "train_only.jsonl").string()) +
                    " --out " + quote((d / "o").string()));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("test"), std::string::npos) << r.err;
}

TEST(CliEval, BadMagicCitesMce1) {
  const fs::path d = scratch("badmagic");
  std::string bytes = slurp(trained() / "checkpoint.mce");
  bytes.replace(0, 4, "MCE0");
  std::ofstream(d / "c.mce", std::ios::binary) << bytes;
  fs::copy_file(trained() / "checkpoint.mce.json", d / "c.mce.json");
  const Outcome r = cli("eval --checkpoint " + quote((d / "c.mce").string()) + " --corpus " +
                    quote((trained() / "corpus.jsonl").string()) + " --out " + quote((d / "o").string()));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("\"MCE1\""), std::string::npos) << r.err;
}

TEST(CliRoute, HelpfulTextRoutesToExpertZero) {
  const Outcome r = cli("route --checkpoint " + ckpt() + " --text " +
                    quote("please explain the recipe steps for a beginner and suggest a guide"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["argmax_expert"], 0);
  for (const char* k : {"logits", "pi", "gamma_tilde", "alpha", "predicted_class"}) EXPECT_TRUE(j.contains(k)) << k;
  double s = 0;
  for (double p : j["pi"]) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(CliRoute, SyntheticPoolsRouteToTheirExperts) {
  const auto corpus = trinityx::load_corpus((trained() / "corpus.jsonl").string());
  std::size_t shown[3] = {0, 0, 0};
  for (const auto& e : corpus) {
    if (e.split != trinityx::Split::test || shown[e.dimension]++ >= 3) continue;
    const Outcome r = cli("route --checkpoint " + ckpt() + " --text " + quote(e.text));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["argmax_expert"], e.dimension) << e.text;
  }
}

TEST(CliRoute, DeterministicAndEmptyText) {
  const std::string args = "route --checkpoint " + ckpt() + " --text " + quote("explain the guide");
  EXPECT_EQ(cli(args).out, cli(args).out);
  const Outcome empty = cli("route --checkpoint " + ckpt() + " --text ''");
  ASSERT_EQ(empty.code, 0) << empty.err;
  json parsed;
  EXPECT_NO_THROW(parsed = json::parse(empty.out));
  EXPECT_TRUE(parsed.contains("argmax_expert"));
}

TEST(CliExport, GammaTriplesSumToOne) {
  const fs::path d = scratch("export_gamma");
  ASSERT_EQ(cli("export --checkpoint " + ckpt() + " --what gamma --out " + quote((d / "g.json").string())).code, 0);
  const json g = json::parse(slurp(d / "g.json"));
  ASSERT_EQ(g.size(), 3u);
  for (const auto& t : g) {
    ASSERT_EQ(t.size(), 3u);
    EXPECT_NEAR(t[0].get<double>() + t[1].get<double>() + t[2].get<double>(), 1.0, 1e-12);
  }
}

TEST(CliExport, EmbeddingsShape) {
  const fs::path d = scratch("export_emb");
  ASSERT_EQ(cli("export --checkpoint " + ckpt() + " --what embeddings --out " + quote((d / "e.csv").string())).code, 0);
  std::size_t n_test = 0;
  for (const auto& e : trinityx::load_corpus((trained() / "corpus.jsonl").string())) n_test += e.split == trinityx::Split::test;
  std::istringstream csv(slurp(d / "e.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, 64 + 2) << line.substr(0, 40);
    ++rows;
  }
  EXPECT_EQ(rows, n_test + 1);
}

TEST(CliExport, ConfigMatchesResolvedConfig) {
  const fs::path d = scratch("export_cfg");
  ASSERT_EQ(cli("export --checkpoint " + ckpt() + " --what config --out " + quote((d / "c.json").string())).code, 0);
  EXPECT_EQ(slurp(d / "c.json"), slurp(trained() / "resolved_config.json"));
}

TEST(CliExport, UnknownTargetListsValidValues) {
  const fs::path d = scratch("export_bad");
  const Outcome r = cli("export --checkpoint " + ckpt() + " --what plots --out " + quote((d / "p").string()));
  EXPECT_EQ(r.code, 2);
  for (const char* v : {"embeddings", "gamma", "config"}) EXPECT_NE(r.err.find(v), std::string::npos) << r.err;
}

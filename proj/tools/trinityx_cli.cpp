// trinityx-cli: train, eval, route and export.
//
// Exit codes: 0 success, 2 config/usage error, 3 IO error, 4 numerical error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "trinityx/checkpoint.hpp"
#include "trinityx/config.hpp"
#include "trinityx/judge.hpp"
#include "trinityx/pipeline.hpp"

namespace fs = std::filesystem;
using namespace trinityx;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
  std::optional<std::string> corpus;
};

std::uint64_t parse_seed_env(const char* raw) {
  std::size_t used = 0;
  const std::string s(raw);
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-')
    throw ConfigError("MOCAE_SEED must be a non-negative integer, got \"" + s + "\"");
  return v;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (const char* env = std::getenv("MOCAE_SEED")) cfg.seed = parse_seed_env(env);
  if (a.seed) cfg.seed = *a.seed;
  if (a.out) cfg.output_dir = *a.out;
  if (a.epochs) cfg.train.loss.epochs = *a.epochs;
  if (a.corpus) {
    cfg.corpus = *a.corpus;
    cfg.synth.reset();
  }
  cfg.validate();

  const auto corpus = resolve_corpus(cfg);
  const TrainedRun run = train_from_config(cfg, corpus);

  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  save_checkpoint((dir / "checkpoint.mce").string(), run.checkpoint);
  write_text_file((dir / "train_report.json").string(), dump_json(to_json(run.report)));
  write_text_file((dir / "resolved_config.json").string(), dump_json(to_json(cfg)));
  if (cfg.synth) save_corpus((dir / "corpus.jsonl").string(), corpus);
  std::cerr << "trained " << run.report.epochs.size() << " epochs; train routing accuracy "
            << run.report.routing_accuracy << ", task accuracy " << run.report.task_accuracy << "; wrote "
            << dir.string() << "\n";
  return 0;
}

std::vector<Example> test_split_of(const std::vector<Example>& corpus) {
  auto test = filter_split(corpus, Split::test);
  if (test.empty()) throw ArgumentError("corpus has an empty \"test\" split");
  return test;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& out) {
  const Checkpoint cp = load_checkpoint(checkpoint);
  const auto test = test_split_of(load_corpus(corpus_path));
  const Evaluation ev = evaluate(cp.model, cp.tfidf, test, cp.config.judge, cp.config.ece_bins);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  write_text_file((fs::path(out) / "metrics.json").string(), dump_json(to_json(ev.metrics)));
  write_text_file((fs::path(out) / "activation.csv").string(), to_csv(ev.metrics.activation, dimension_names()));
  return 0;
}

int cmd_route(const std::string& checkpoint, const std::string& text) {
  const Checkpoint cp = load_checkpoint(checkpoint);
  const Model& m = cp.model;
  const Vector h = input_projection(m.bank.backbone, featurize(cp.tfidf, text));
  Rng unused(0);
  const RouteTrace t = route_forward(m.router, h, m.bank, Mode::eval, unused);
  const RouteResult r = route(m.router, h, m.bank, initial_state(m.bank.size()), Mode::eval, unused);
  const Vector class_probs = softmax_temperature(linear_forward(m.head.w, m.head.b, r.y_cal), 1.0);
  const json j = {{"step", r.state.step},
                  {"logits", r.state.logits},
                  {"pi", r.state.probs},
                  {"gamma_tilde", m.bank.weights.normalized},
                  {"alpha", r.state.alpha},
                  {"argmax_expert", argmax(t.probs)},
                  {"predicted_class", argmax(class_probs)}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& what, const std::string& out,
               const std::string& corpus_override) {
  static const std::vector<std::string> valid = {"embeddings", "gamma", "config"};
  if (std::find(valid.begin(), valid.end(), what) == valid.end())
    throw ArgumentError("unknown export target \"" + what + "\" (valid: embeddings, gamma, config)");
  const Checkpoint cp = load_checkpoint(checkpoint);
  if (what == "gamma") {
    write_text_file(out, dump_json(cp.gamma_trajectory));
  } else if (what == "config") {
    write_text_file(out, dump_json(to_json(cp.config)));
  } else {
    const auto test = test_split_of(resolve_corpus(cp.config, corpus_override));
    const Model& m = cp.model;
    std::string csv = "index,dimension";
    for (std::size_t k = 0; k < m.bank.d_model(); ++k) csv += ",e" + std::to_string(k);
    csv += "\n";
    char buf[32];
    Rng unused(0);
    for (std::size_t i = 0; i < test.size(); ++i) {
      const Vector h = input_projection(m.bank.backbone, featurize(cp.tfidf, test[i].text));
      const RouteTrace t = route_forward(m.router, h, m.bank, Mode::eval, unused);
      csv += std::to_string(i) + "," + dimension_names()[test[i].dimension];
      for (double v : t.y_cal) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        csv += buf;
      }
      csv += "\n";
    }
    write_text_file(out, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Routed low-rank alignment experts: train, evaluate, inspect and export."};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Train from a JSON config and write a checkpoint");
  train->add_option("--config", targs.config, "Run configuration (JSON)")->required();
  train->add_option("--seed", targs.seed, "Override the training seed");
  train->add_option("--out", targs.out, "Override the output directory");
  train->add_option("--epochs", targs.epochs, "Override the epoch count");
  train->add_option("--corpus", targs.corpus, "Train on a JSONL corpus instead of the configured source");

  std::string ckpt, corpus, out, text, what;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split of a corpus");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--corpus", corpus)->required();
  eval->add_option("--out", out, "Output directory")->required();

  auto* route_cmd = app.add_subcommand("route", "Print the routing state for one text");
  route_cmd->add_option("--checkpoint", ckpt)->required();
  route_cmd->add_option("--text", text)->required();

  auto* export_cmd = app.add_subcommand("export", "Export embeddings, the gamma trajectory or the config");
  export_cmd->add_option("--checkpoint", ckpt)->required();
  export_cmd->add_option("--what", what, "embeddings, gamma or config")->required();
  export_cmd->add_option("--out", out)->required();
  export_cmd->add_option("--corpus", corpus, "Corpus for embeddings (defaults to the training source)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(targs);
    if (*eval) return cmd_eval(ckpt, corpus, out);
    if (*route_cmd) return cmd_route(ckpt, text);
    if (*export_cmd) return cmd_export(ckpt, what, out, corpus);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// Glue from a RunConfig to a trained checkpoint: corpus resolution,
// featurization, model init and training.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "trinityx/checkpoint.hpp"
#include "trinityx/config.hpp"
#include "trinityx/data.hpp"
#include "trinityx/training.hpp"

namespace trinityx {

/// The corpus named by the config: regenerated from the synth block, or
/// loaded from the JSONL path (optionally overridden).
inline std::vector<Example> resolve_corpus(const RunConfig& cfg, const std::string& override_path = "") {
  if (!override_path.empty()) return load_corpus(override_path);
  if (cfg.synth) return synth_corpus(cfg.synth->seed, cfg.synth->per_dimension, cfg.synth->classes);
  return load_corpus(*cfg.corpus);
}

inline std::vector<FeaturizedExample> featurize_all(const TfidfModel& tfidf, const std::vector<Example>& examples) {
  std::vector<FeaturizedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({featurize(tfidf, e.text), {e.class_label, e.dimension}});
  return out;
}

struct TrainedRun {
  Checkpoint checkpoint;
  TrainReport report;
  std::vector<Example> corpus;
};

inline TrainedRun train_from_config(const RunConfig& cfg, const std::vector<Example>& corpus) {
  cfg.validate();
  const auto train_set = filter_split(corpus, Split::train);
  if (train_set.empty()) throw ArgumentError("corpus has an empty train split");
  for (const auto& e : train_set)
    if (e.class_label >= cfg.dims.n_classes)
      throw ConfigError("class label " + std::to_string(e.class_label) + " exceeds n_classes");

  TrainedRun run;
  run.corpus = corpus;
  auto& cp = run.checkpoint;
  cp.config = cfg;
  cp.tfidf = fit_tfidf(train_set, cfg.dims.d_feat);
  Rng rng(cfg.seed);
  cp.model = Model::init(cfg.dims, cfg.tau, cfg.dropout, rng);
  cp.model.router.top_k = cfg.top_k;
  const auto data = featurize_all(cp.tfidf, train_set);
  run.report = train(cp.model, data, cfg.train, rng);
  for (const auto& e : run.report.epochs) cp.gamma_trajectory.push_back(e.gamma);
  return run;
}

}  // namespace trinityx

// Checkpoint = MCE1 binary container + JSON sidecar (<path>.json).
//
// MCE1 layout (all integers u64, all reals f64, little-endian):
//   "MCE1"
//   config block: d_feat, d_model, hidden, n, tau, lambda1, lambda2, gating_coeff
//   backbone:     matrix W_in, vector b_in
//   n experts:    matrix W1, vector b1, matrix W2, vector b2, TVX1 task vector
//   weights:      vector gamma_raw
//   router:       matrix W_r, vector b_r, vector ln_gain, vector ln_bias,
//                 f64 dropout_p, u64 renormalize_alpha, u64 top_k
//   head:         matrix W_head, vector b_head
// A matrix is rows, cols, values; a vector is length, values.
//
// The sidecar holds the resolved run config, the fitted TF-IDF model and
// the per-epoch gamma trajectory.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trinityx/binary_io.hpp"
#include "trinityx/config.hpp"
#include "trinityx/data.hpp"
#include "trinityx/error.hpp"
#include "trinityx/model.hpp"
#include "trinityx/training.hpp"

namespace trinityx {

inline constexpr std::string_view kBankMagic = "MCE1";

struct BankHeader {
  std::uint64_t d_feat = 0, d_model = 0, hidden = 0, n = 0;
  double tau = 0.7, lambda1 = 0.1, lambda2 = 0.01, gating_coeff = 0.1;
};

inline void write_model(std::ostream& os, const Model& m, const LossConfig& loss) {
  m.validate();
  using namespace binio;
  write_magic(os, kBankMagic);
  write_u64(os, m.bank.backbone.d_feat());
  write_u64(os, m.bank.d_model());
  write_u64(os, m.bank.experts.front().hidden());
  write_u64(os, m.bank.size());
  write_f64(os, m.router.tau);
  write_f64(os, loss.lambda1);
  write_f64(os, loss.lambda2);
  write_f64(os, loss.gating_coeff);
  write_matrix(os, m.bank.backbone.w_in);
  write_vector(os, m.bank.backbone.b_in);
  for (const auto& e : m.bank.experts) {
    write_matrix(os, e.w1);
    write_vector(os, e.b1);
    write_matrix(os, e.w2);
    write_vector(os, e.b2);
    write_task_vector(os, e.task_vector);
  }
  write_vector(os, m.bank.weights.raw);
  write_matrix(os, m.router.w);
  write_vector(os, m.router.b);
  write_vector(os, m.router.ln_gain);
  write_vector(os, m.router.ln_bias);
  write_f64(os, m.router.dropout_p);
  write_u64(os, m.router.renormalize_alpha ? 1 : 0);
  write_u64(os, m.router.top_k);
  write_matrix(os, m.head.w);
  write_vector(os, m.head.b);
}

inline Model read_model(std::istream& is, BankHeader* header_out = nullptr) {
  using namespace binio;
  expect_magic(is, kBankMagic);
  BankHeader h;
  h.d_feat = read_u64(is);
  h.d_model = read_u64(is);
  h.hidden = read_u64(is);
  h.n = read_u64(is);
  if (h.n == 0 || h.n > 64) throw IoError("MCE1: implausible expert count");
  h.tau = read_f64(is);
  h.lambda1 = read_f64(is);
  h.lambda2 = read_f64(is);
  h.gating_coeff = read_f64(is);
  Model m;
  m.bank.backbone.w_in = read_matrix(is);
  m.bank.backbone.b_in = read_vector(is);
  m.bank.backbone.frozen = true;
  for (std::uint64_t i = 0; i < h.n; ++i) {
    ExpertAdapter e;
    e.w1 = read_matrix(is);
    e.b1 = read_vector(is);
    e.w2 = read_matrix(is);
    e.b2 = read_vector(is);
    e.task_vector = read_task_vector(is);
    m.bank.experts.push_back(std::move(e));
  }
  m.bank.weights = normalize_weights(read_vector(is));
  m.router.w = read_matrix(is);
  m.router.b = read_vector(is);
  m.router.ln_gain = read_vector(is);
  m.router.ln_bias = read_vector(is);
  m.router.dropout_p = read_f64(is);
  m.router.renormalize_alpha = read_u64(is) != 0;
  m.router.top_k = read_u64(is);
  m.router.tau = h.tau;
  m.head.w = read_matrix(is);
  m.head.b = read_vector(is);
  if (m.bank.backbone.d_feat() != h.d_feat || m.bank.d_model() != h.d_model ||
      m.bank.experts.front().hidden() != h.hidden)
    throw IoError("MCE1: config block disagrees with stored weights");
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw IoError(std::string("MCE1: inconsistent model: ") + e.what());
  }
  if (header_out) *header_out = h;
  return m;
}

struct Checkpoint {
  Model model;
  RunConfig config;
  TfidfModel tfidf;
  nlohmann::json gamma_trajectory = nlohmann::json::array();
};

inline std::string sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".json"; }

/// JSON dump with a trailing newline; the same bytes for the same value.
inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    write_model(out, cp.model, cp.config.train.loss);
    if (!out) throw IoError("write failed: " + path);
  }
  const nlohmann::json side = {
      {"config", to_json(cp.config)}, {"tfidf", cp.tfidf.to_json()}, {"gamma_trajectory", cp.gamma_trajectory}};
  write_text_file(sidecar_path(path), dump_json(side));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint cp;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    cp.model = read_model(in);
  }
  std::ifstream side_in(sidecar_path(path));
  if (!side_in) throw IoError("cannot open checkpoint sidecar " + sidecar_path(path));
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_in);
    cp.config = parse_run_config(side.at("config"));
    cp.tfidf = TfidfModel::from_json(side.at("tfidf"));
    cp.gamma_trajectory = side.at("gamma_trajectory");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint sidecar: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint sidecar config: ") + e.what());
  }
  if (cp.tfidf.size() != cp.model.bank.backbone.d_feat())
    throw IoError("checkpoint sidecar: TF-IDF width does not match the backbone");
  return cp;
}

}  // namespace trinityx

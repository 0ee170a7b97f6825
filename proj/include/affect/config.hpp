#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "affect/tensor.hpp"

namespace affect {

enum class AttentionMode { none, level1, level2 };
enum class HeadMode { single_v, single_a, mt, mt2 };
enum class LossKind { mse, tukey };

inline std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::none: return "none";
    case AttentionMode::level1: return "level1";
    case AttentionMode::level2: return "level2";
  }
  return "?";
}
inline std::string to_string(HeadMode m) {
  switch (m) {
    case HeadMode::single_v: return "single_v";
    case HeadMode::single_a: return "single_a";
    case HeadMode::mt: return "mt";
    case HeadMode::mt2: return "2mt";
  }
  return "?";
}
inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "tukey"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "level1") return AttentionMode::level1;
  if (s == "level2") return AttentionMode::level2;
  throw ValueError("attention_mode must be none|level1|level2, got '" + s + "'");
}
inline HeadMode parse_head_mode(const std::string& s) {
  if (s == "single_v") return HeadMode::single_v;
  if (s == "single_a") return HeadMode::single_a;
  if (s == "mt") return HeadMode::mt;
  if (s == "2mt") return HeadMode::mt2;
  throw ValueError("head_mode must be single_v|single_a|mt|2mt, got '" + s + "'");
}
inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "tukey") return LossKind::tukey;
  throw ValueError("loss must be mse|tukey, got '" + s + "'");
}

// Architecture and schedule hyperparameters. Defaults are the best reported
// configuration: two attention blocks, both attention levels, two-stage
// multi-task heads, Tukey loss.
struct TrainConfig {
  int blocks = 2;
  AttentionMode attention_mode = AttentionMode::level2;
  HeadMode head_mode = HeadMode::mt2;
  LossKind loss = LossKind::tukey;
  real alpha = 0.5;
  real beta = 0.3;
  real c = 4.685;
  int n_dim = 256;
  int n_cat = 128;
  int embed_d = 64;
  int rnn_u = 64;
  real lr = 1e-3;
  int batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 0;
  int plateau_patience = 1;
  real min_delta = 1e-4;

  void validate() const {
    if (blocks < 1 || blocks > 3)
      throw ValueError("blocks must be 1, 2 or 3, got " + std::to_string(blocks));
    if (alpha < 0.0 || alpha > 1.0) throw ValueError("alpha must lie in [0,1]");
    if (beta < 0.0 || beta > 1.0) throw ValueError("beta must lie in [0,1]");
    if (c <= 0.0) throw ValueError("tukey cutoff c must be positive");
    if (n_dim < 1 || n_cat < 1) throw ValueError("n_dim and n_cat must be >= 1");
    if (embed_d < 1 || rnn_u < 1) throw ValueError("embed_d and rnn_u must be >= 1");
    if (lr <= 0.0) throw ValueError("lr must be positive");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (epochs < 1) throw ValueError("epochs must be >= 1");
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "blocks") blocks = std::stoi(value);
    else if (key == "attention_mode") attention_mode = parse_attention_mode(value);
    else if (key == "head_mode") head_mode = parse_head_mode(value);
    else if (key == "loss") loss = parse_loss_kind(value);
    else if (key == "alpha") alpha = std::stod(value);
    else if (key == "beta") beta = std::stod(value);
    else if (key == "c") c = std::stod(value);
    else if (key == "n_dim") n_dim = std::stoi(value);
    else if (key == "n_cat") n_cat = std::stoi(value);
    else if (key == "embed_d") embed_d = std::stoi(value);
    else if (key == "rnn_u") rnn_u = std::stoi(value);
    else if (key == "lr") lr = std::stod(value);
    else if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "epochs") epochs = std::stoi(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "plateau_patience") plateau_patience = std::stoi(value);
    else if (key == "min_delta") min_delta = std::stod(value);
    else throw ValueError("unknown config key '" + key + "'");
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    const auto fmt = [](real v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    m["blocks"] = std::to_string(blocks);
    m["attention_mode"] = to_string(attention_mode);
    m["head_mode"] = to_string(head_mode);
    m["loss"] = to_string(loss);
    m["alpha"] = fmt(alpha);
    m["beta"] = fmt(beta);
    m["c"] = fmt(c);
    m["n_dim"] = std::to_string(n_dim);
    m["n_cat"] = std::to_string(n_cat);
    m["embed_d"] = std::to_string(embed_d);
    m["rnn_u"] = std::to_string(rnn_u);
    m["lr"] = fmt(lr);
    m["batch_size"] = std::to_string(batch_size);
    m["epochs"] = std::to_string(epochs);
    m["seed"] = std::to_string(seed);
    m["plateau_patience"] = std::to_string(plateau_patience);
    m["min_delta"] = fmt(min_delta);
    return m;
  }
};

// Flat key=value text, one pair per line, '#' starts a comment.
inline void apply_config_line(TrainConfig& cfg, const std::string& line) {
  std::string s = line;
  const auto hash = s.find('#');
  if (hash != std::string::npos) s.erase(hash);
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return;
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ValueError("config line missing '=': " + line);
  std::string key = s.substr(0, eq);
  std::string value = s.substr(eq + 1);
  const auto trim = [](std::string& t) {
    const auto b = t.find_first_not_of(" \t");
    const auto e = t.find_last_not_of(" \t");
    t = b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
  };
  trim(key);
  trim(value);
  cfg.set(key, value);
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) apply_config_line(base, line);
  base.validate();
  return base;
}

}  // namespace affect

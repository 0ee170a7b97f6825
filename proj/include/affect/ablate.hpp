#pragma once

#include <atomic>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "affect/train.hpp"

namespace affect {

// One grid axis: a config key plus the values to sweep. The special
// head_mode value "single" expands to a single_v + single_a run pair whose
// per-target metrics are combined into one row, mirroring how single-task
// baselines report both targets.
struct AblateGrid {
  std::map<std::string, std::vector<std::string>> axes;

  bool empty() const { return axes.empty(); }

  // Cartesian product in sorted-axis order; deterministic row order.
  std::vector<std::map<std::string, std::string>> combinations() const {
    std::vector<std::map<std::string, std::string>> combos = {{}};
    for (const auto& [key, values] : axes) {
      if (values.empty()) throw ValueError("ablate axis '" + key + "' has no values");
      std::vector<std::map<std::string, std::string>> next;
      for (const auto& combo : combos) {
        for (const auto& v : values) {
          auto c = combo;
          c[key] = v;
          next.push_back(std::move(c));
        }
      }
      combos = std::move(next);
    }
    return combos;
  }
};

// "blocks=1,2,3" -> one axis.
inline void add_grid_axis(AblateGrid& grid, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ValueError("grid axis needs key=v1,v2,...: " + spec);
  const std::string key = spec.substr(0, eq);
  std::vector<std::string> values;
  std::string cur;
  for (char ch : spec.substr(eq + 1)) {
    if (ch == ',') {
      values.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  values.push_back(cur);
  grid.axes[key] = std::move(values);
}

struct AblateOptions {
  TrainConfig base;
  AblateGrid grid;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int threads = 0;  // 0 = hardware concurrency
};

struct AblateRow {
  std::string config_desc;
  bool failed = false;
  std::string error;
  EvalMetrics metrics;  // averaged over seeds
};

namespace detail {

inline std::string combo_desc(const std::map<std::string, std::string>& combo) {
  std::string s;
  for (const auto& [k, v] : combo) {
    if (!s.empty()) s += ",";
    s += k + "=" + v;
  }
  return s.empty() ? "base" : s;
}

inline EvalMetrics average_metrics(const std::vector<EvalMetrics>& runs) {
  EvalMetrics avg;
  if (runs.empty()) return avg;
  avg.has_valence = runs.front().has_valence;
  avg.has_arousal = runs.front().has_arousal;
  for (const EvalMetrics& m : runs) {
    avg.ccc_valence += m.ccc_valence;
    avg.ccc_arousal += m.ccc_arousal;
    avg.rmse_valence += m.rmse_valence;
    avg.rmse_arousal += m.rmse_arousal;
  }
  const real inv = 1.0 / static_cast<real>(runs.size());
  avg.ccc_valence *= inv;
  avg.ccc_arousal *= inv;
  avg.rmse_valence *= inv;
  avg.rmse_arousal *= inv;
  return avg;
}

// Trains one configuration for one seed and evaluates the best checkpoint on
// the validation split.
inline EvalMetrics ablate_single_run(TrainConfig cfg, std::uint64_t seed,
                                     const Dataset& train_set, const Dataset& val_set) {
  cfg.seed = seed;
  TrainResult result = train(cfg, train_set, val_set);
  Model best = model_from_checkpoint(result.best);
  return evaluate_model(best, val_set, cfg.batch_size);
}

inline EvalMetrics ablate_run(const TrainConfig& base,
                              const std::map<std::string, std::string>& combo, std::uint64_t seed,
                              const Dataset& train_set, const Dataset& val_set) {
  TrainConfig cfg = base;
  auto it = combo.find("head_mode");
  const bool single_pair = it != combo.end() && it->second == "single";
  for (const auto& [k, v] : combo) {
    if (single_pair && k == "head_mode") continue;
    cfg.set(k, v);
  }
  if (!single_pair) {
    cfg.validate();
    return ablate_single_run(cfg, seed, train_set, val_set);
  }
  TrainConfig cv = cfg, ca = cfg;
  cv.head_mode = HeadMode::single_v;
  ca.head_mode = HeadMode::single_a;
  const EvalMetrics mv = ablate_single_run(cv, seed, train_set, val_set);
  const EvalMetrics ma = ablate_single_run(ca, seed, train_set, val_set);
  EvalMetrics combined;
  combined.has_valence = true;
  combined.has_arousal = true;
  combined.ccc_valence = mv.ccc_valence;
  combined.rmse_valence = mv.rmse_valence;
  combined.ccc_arousal = ma.ccc_arousal;
  combined.rmse_arousal = ma.rmse_arousal;
  return combined;
}

}  // namespace detail

// Sweeps the grid over a shared dataset pair. Runs are independent, so
// (config, seed) cells execute on a small thread pool; row order is fixed by
// the grid, not by completion time.
inline std::vector<AblateRow> ablate(const AblateOptions& opts, const Dataset& train_set,
                                     const Dataset& val_set) {
  const auto combos = opts.grid.combinations();
  if (opts.grid.empty()) return {};
  if (opts.seeds.empty()) throw ValueError("ablate: need at least one seed");

  struct Cell {
    std::size_t combo_idx;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t c = 0; c < combos.size(); ++c)
    for (std::uint64_t s : opts.seeds) cells.push_back({c, s});

  std::vector<EvalMetrics> cell_metrics(cells.size());
  std::vector<std::string> cell_errors(cells.size());

  int threads = opts.threads > 0 ? opts.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        cell_metrics[i] = detail::ablate_run(opts.base, combos[cells[i].combo_idx],
                                             cells[i].seed, train_set, val_set);
      } catch (const std::exception& e) {
        cell_errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::vector<AblateRow> rows;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    AblateRow row;
    row.config_desc = detail::combo_desc(combos[c]);
    std::vector<EvalMetrics> seed_runs;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].combo_idx != c) continue;
      if (!cell_errors[i].empty()) {
        row.failed = true;
        row.error = cell_errors[i];
      } else {
        seed_runs.push_back(cell_metrics[i]);
      }
    }
    if (!row.failed) row.metrics = detail::average_metrics(seed_runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv_header() {
  return "config,status,ccc_valence,ccc_arousal,ccc_mean,rmse_valence,rmse_arousal,rmse_mean";
}

inline std::string ablation_csv_row(const AblateRow& row) {
  if (row.failed) return row.config_desc + ",failed,,,,,,";
  const EvalMetrics& m = row.metrics;
  return row.config_desc + ",ok," + detail::fmt6(m.ccc_valence) + "," +
         detail::fmt6(m.ccc_arousal) + "," + detail::fmt6(m.ccc_mean()) + "," +
         detail::fmt6(m.rmse_valence) + "," + detail::fmt6(m.rmse_arousal) + "," +
         detail::fmt6(m.rmse_mean());
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblateRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write ablation csv: " + path);
  out << ablation_csv_header() << "\n";
  for (const AblateRow& row : rows) out << ablation_csv_row(row) << "\n";
}

}  // namespace affect

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "memfield/common.hpp"

namespace memfield::hapo {

/// Scalarized quality-vs-cell-budget objective. The search maximizes
/// omega * psnr/psnr_max - (1-omega) * cells/n_max; configurations over the
/// cell budget are infeasible. The printed minimize orientation is kept
/// available behind `literal_minimize`.
struct Objective {
  double omega = 0.5;
  double psnr_max = 40.0;
  double n_max = 250000.0;  // cells available with redundancy margin
  bool literal_minimize = false;

  void validate() const;
};

/// Score to MAXIMIZE (sign-flipped when literal_minimize is set);
/// -infinity for infeasible configurations.
double objective_score(double psnr, double n_cells, const Objective& obj);

using ParamSet = std::map<std::string, double>;

struct EvalResult {
  double psnr = 0.0;
  double cells = 0.0;
};
using Evaluator = std::function<EvalResult(const ParamSet&)>;

struct Axis {
  std::string name;
  std::vector<double> values;
};

struct SearchRow {
  ParamSet config;
  double psnr = 0.0;
  double cells = 0.0;
  double score = 0.0;
  int generation = -1;  // population search only
};

struct SearchResult {
  ParamSet best;
  double best_score = 0.0;
  double best_psnr = 0.0;
  double best_cells = 0.0;
  std::vector<SearchRow> table;
};

/// Exhaustive enumeration of the axes (lexicographic order); ties keep the
/// first configuration in enumeration order. Evaluations are cached by
/// configuration, and the full table is returned for persistence.
SearchResult grid_search(const std::vector<Axis>& axes, const ParamSet& fixed,
                         const Evaluator& evaluate, const Objective& obj);

struct PopulationConfig {
  int population = 8;
  int generations = 5;
  std::uint64_t seed = 1;
};

/// Simplified population search: evaluate, keep the top half, refill by
/// perturbing survivors one grid step per axis. Deterministic given the seed;
/// the table doubles as the lineage log.
SearchResult population_search(const std::vector<Axis>& axes,
                               const ParamSet& fixed,
                               const PopulationConfig& cfg,
                               const Evaluator& evaluate, const Objective& obj);

/// Search-results table (config columns sorted by name).
void write_search_csv(const std::string& path, const std::vector<Axis>& axes,
                      const SearchResult& result,
                      const std::string& manifest_hash = "");

}  // namespace memfield::hapo

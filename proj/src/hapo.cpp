#include "memfield/hapo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace memfield::hapo {

void Objective::validate() const {
  if (omega < 0.0 || omega > 1.0) throw ConfigError("omega must be in [0, 1]");
  if (psnr_max <= 0.0) throw ConfigError("psnr_max must be positive");
  if (n_max <= 0.0 || n_max > 512.0 * 512.0)
    throw ConfigError("n_max must be in (0, 512*512]");
}

double objective_score(double psnr, double n_cells, const Objective& obj) {
  obj.validate();
  if (psnr < 0.0 || n_cells < 0.0)
    throw ConfigError("psnr and cell count must be non-negative");
  if (n_cells > obj.n_max) return -std::numeric_limits<double>::infinity();
  const double score =
      obj.omega * psnr / obj.psnr_max - (1.0 - obj.omega) * n_cells / obj.n_max;
  return obj.literal_minimize ? -score : score;
}

namespace {

std::string param_key(const ParamSet& p) {
  std::ostringstream os;
  for (const auto& [k, v] : p) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << k << '=' << buf << ';';
  }
  return os.str();
}

class CachedEvaluator {
 public:
  explicit CachedEvaluator(const Evaluator& fn) : fn_(fn) {}
  EvalResult operator()(const ParamSet& p) {
    const std::string key = param_key(p);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const EvalResult r = fn_(p);
    cache_.emplace(key, r);
    return r;
  }

 private:
  const Evaluator& fn_;
  std::map<std::string, EvalResult> cache_;
};

void check_axes(const std::vector<Axis>& axes) {
  if (axes.empty()) throw ConfigError("empty search space");
  for (const auto& a : axes)
    if (a.values.empty()) throw ConfigError("axis has no values: " + a.name);
}

ParamSet make_config(const std::vector<Axis>& axes, const std::vector<int>& idx,
                     const ParamSet& fixed) {
  ParamSet p = fixed;
  for (std::size_t i = 0; i < axes.size(); ++i)
    p[axes[i].name] = axes[i].values[static_cast<std::size_t>(idx[i])];
  return p;
}

}  // namespace

SearchResult grid_search(const std::vector<Axis>& axes, const ParamSet& fixed,
                         const Evaluator& evaluate, const Objective& obj) {
  check_axes(axes);
  CachedEvaluator cached(evaluate);

  SearchResult result;
  result.best_score = -std::numeric_limits<double>::infinity();

  std::vector<int> idx(axes.size(), 0);
  bool done = false;
  while (!done) {
    const ParamSet config = make_config(axes, idx, fixed);
    const EvalResult ev = cached(config);
    const double score = objective_score(ev.psnr, ev.cells, obj);
    result.table.push_back({config, ev.psnr, ev.cells, score, -1});
    if (score > result.best_score) {
      result.best_score = score;
      result.best = config;
      result.best_psnr = ev.psnr;
      result.best_cells = ev.cells;
    }
    // lexicographic increment
    done = true;
    for (int i = static_cast<int>(axes.size()) - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] <
          static_cast<int>(axes[static_cast<std::size_t>(i)].values.size())) {
        done = false;
        break;
      }
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  if (!std::isfinite(result.best_score))
    throw ConfigError("every grid configuration is infeasible");
  return result;
}

SearchResult population_search(const std::vector<Axis>& axes,
                               const ParamSet& fixed,
                               const PopulationConfig& cfg,
                               const Evaluator& evaluate, const Objective& obj) {
  check_axes(axes);
  if (cfg.population < 2) throw ConfigError("population must be >= 2");
  if (cfg.generations < 1) throw ConfigError("need at least one generation");
  CachedEvaluator cached(evaluate);
  Rng rng = make_rng(cfg.seed, 31);

  using Member = std::vector<int>;
  std::vector<Member> members(static_cast<std::size_t>(cfg.population),
                              Member(axes.size(), 0));
  for (auto& m : members)
    for (std::size_t i = 0; i < axes.size(); ++i) {
      std::uniform_int_distribution<int> pick(
          0, static_cast<int>(axes[i].values.size()) - 1);
      m[i] = pick(rng);
    }

  SearchResult result;
  result.best_score = -std::numeric_limits<double>::infinity();

  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<std::pair<double, int>> ranked;
    for (int k = 0; k < cfg.population; ++k) {
      const ParamSet config = make_config(axes, members[static_cast<std::size_t>(k)], fixed);
      const EvalResult ev = cached(config);
      const double score = objective_score(ev.psnr, ev.cells, obj);
      result.table.push_back({config, ev.psnr, ev.cells, score, gen});
      ranked.emplace_back(score, k);
      if (score > result.best_score) {
        result.best_score = score;
        result.best = config;
        result.best_psnr = ev.psnr;
        result.best_cells = ev.cells;
      }
    }
    if (gen + 1 == cfg.generations) break;

    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first > b.first;
                       return members[static_cast<std::size_t>(a.second)] <
                              members[static_cast<std::size_t>(b.second)];
                     });
    const int survivors = std::max(1, cfg.population / 2);
    std::vector<Member> next;
    for (int k = 0; k < survivors; ++k)
      next.push_back(members[static_cast<std::size_t>(ranked[static_cast<std::size_t>(k)].second)]);
    // refill with one-step perturbations of the survivors
    std::uniform_int_distribution<int> coin(0, 2);
    int parent = 0;
    while (static_cast<int>(next.size()) < cfg.population) {
      Member child = next[static_cast<std::size_t>(parent % survivors)];
      for (std::size_t i = 0; i < axes.size(); ++i) {
        const int move = coin(rng) - 1;  // -1, 0, +1
        child[i] = std::clamp(child[i] + move, 0,
                              static_cast<int>(axes[i].values.size()) - 1);
      }
      next.push_back(std::move(child));
      ++parent;
    }
    members = std::move(next);
  }
  if (!std::isfinite(result.best_score))
    throw ConfigError("every sampled configuration is infeasible");
  return result;
}

void write_search_csv(const std::string& path, const std::vector<Axis>& axes,
                      const SearchResult& result,
                      const std::string& manifest_hash) {
  std::string out;
  if (!manifest_hash.empty()) out += "# manifest=" + manifest_hash + "\n";
  std::vector<std::string> names;
  for (const auto& a : axes) names.push_back(a.name);
  std::sort(names.begin(), names.end());
  out += "generation";
  for (const auto& n : names) out += "," + n;
  out += ",psnr,cells,score\n";
  char buf[160];
  for (const auto& row : result.table) {
    out += std::to_string(row.generation);
    for (const auto& n : names) {
      std::snprintf(buf, sizeof(buf), "%.9g", row.config.at(n));
      out += std::string(",") + buf;
    }
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g", row.psnr, row.cells,
                  row.score);
    out += std::string(",") + buf + "\n";
  }
  atomic_write(path, out);
}

}  // namespace memfield::hapo

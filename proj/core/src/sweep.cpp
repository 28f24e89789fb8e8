#include <algorithm>
#include <cmath>
#include <set>

#include "aicollab/error.hpp"
#include "aicollab/simulation.hpp"
#include "aicollab/text.hpp"

namespace aicollab {

using nlohmann::json;

namespace {

const std::set<std::string>& known_axes() {
  static const std::set<std::string> axes = {"alpha", "beta", "gamma", "lambda", "k", "temperature",
                                             "max_output_tokens"};
  return axes;
}

long long as_integer(const std::string& axis, double v) {
  if (!std::isfinite(v) || std::floor(v) != v) throw ParameterError("sweep axis " + axis + " needs integer values");
  return static_cast<long long>(v);
}

void apply(ExperimentConfig& c, const std::string& axis, double v) {
  auto& w = c.retrieval.weights;
  if (axis == "alpha") {
    w = RetrievalWeights(v, w.beta(), w.gamma());
  } else if (axis == "beta") {
    w = RetrievalWeights(w.alpha(), v, w.gamma());
  } else if (axis == "gamma") {
    w = RetrievalWeights(w.alpha(), w.beta(), v);
  } else if (axis == "lambda") {
    c.retrieval.lambda = v;
  } else if (axis == "k") {
    const auto k = as_integer(axis, v);
    if (k < 1) throw ParameterError("sweep axis k needs values >= 1");
    c.retrieval.k = static_cast<std::size_t>(k);
  } else if (axis == "temperature") {
    c.gateway.temperature = v;
  } else if (axis == "max_output_tokens") {
    c.gateway.max_output_tokens = static_cast<int>(as_integer(axis, v));
  }
}

}  // namespace

double jaccard(const std::vector<MemoryId>& a, const std::vector<MemoryId>& b) {
  const std::set<MemoryId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (auto id : sa) common += sb.count(id);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

std::vector<SweepCell> sweep_parameters(const std::vector<SweepAxis>& grid, const SimulationScript& fixture,
                                        const ExperimentConfig& base, const DescriptorTable& table) {
  if (grid.empty()) throw ParameterError("sweep grid is empty");
  std::set<std::string> seen;
  for (const auto& axis : grid) {
    if (!known_axes().count(axis.name)) throw ParameterError("unknown sweep axis '" + axis.name + "'");
    if (!seen.insert(axis.name).second) throw ParameterError("sweep axis '" + axis.name + "' listed twice");
    if (axis.values.empty()) throw ParameterError("sweep axis '" + axis.name + "' has no values");
  }

  std::vector<SweepCell> cells;
  std::vector<std::size_t> idx(grid.size(), 0);
  for (;;) {
    ExperimentConfig config = base;
    SweepCell cell;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const double v = grid[a].values[idx[a]];
      apply(config, grid[a].name, v);
      cell.params[grid[a].name] = v;
    }
    const auto run = run_simulation(fixture, config, table);
    double age_sum = 0.0;
    std::size_t age_n = 0;
    for (const auto& t : run.retrievals) {
      for (double age : t.ages) age_sum += age;
      age_n += t.ages.size();
    }
    cell.mean_retrieved_age = age_n ? age_sum / static_cast<double>(age_n) : 0.0;
    for (const auto& e : run.events) {
      if (e.kind == EventKind::bot_reply) {
        ++cell.replies;
        cell.reply_lengths.push_back(text::word_count(e.payload.value("text", std::string())));
      } else if (e.kind == EventKind::suppression) {
        ++cell.suppressions;
      }
    }
    cell.retrievals = run.retrievals;
    cells.push_back(std::move(cell));

    // odometer over the axes, last axis fastest
    bool advanced = false;
    for (std::size_t a = grid.size(); a-- > 0 && !advanced;) {
      if (++idx[a] < grid[a].values.size()) {
        advanced = true;
      } else {
        idx[a] = 0;
      }
    }
    if (!advanced) break;
  }

  const auto& reference = cells.front().retrievals;
  for (auto& cell : cells) {
    if (reference.empty() && cell.retrievals.empty()) {
      cell.overlap = 1.0;
      continue;
    }
    const auto n = std::max(reference.size(), cell.retrievals.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      static const std::vector<MemoryId> none;
      const auto& r = i < reference.size() ? reference[i].ids : none;
      const auto& c = i < cell.retrievals.size() ? cell.retrievals[i].ids : none;
      sum += jaccard(r, c);
    }
    cell.overlap = sum / static_cast<double>(n);
  }
  return cells;
}

std::vector<SweepAxis> sweep_grid_from_json(const json& j) {
  std::vector<SweepAxis> grid;
  auto values_of = [](const std::string& name, const json& v) {
    if (!v.is_array()) throw ParameterError("sweep axis '" + name + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ParameterError("sweep axis '" + name + "' must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  };
  if (j.is_array()) {
    for (const auto& axis : j) {
      if (!axis.is_object() || !axis.contains("name")) throw ParameterError("sweep axes need a name and values");
      const auto name = axis.at("name").get<std::string>();
      grid.push_back({name, values_of(name, axis.value("values", json()))});
    }
  } else if (j.is_object()) {
    for (const auto& [name, v] : j.items()) grid.push_back({name, values_of(name, v)});
  } else {
    throw ParameterError("sweep grid must be an array of axes or an object of name -> values");
  }
  return grid;
}

json sweep_to_json(const std::vector<SweepCell>& cells) {
  json rows = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    json retrievals = json::array();
    for (const auto& t : c.retrievals) retrievals.push_back({{"line", t.line}, {"ids", t.ids}});
    rows.push_back({{"cell", i},
                    {"reference", i == 0},
                    {"params", c.params},
                    {"overlap", c.overlap},
                    {"replies", c.replies},
                    {"reply_lengths", c.reply_lengths},
                    {"suppressions", c.suppressions},
                    {"mean_retrieved_age", c.mean_retrieved_age},
                    {"retrievals", retrievals}});
  }
  return rows;
}

}  // namespace aicollab

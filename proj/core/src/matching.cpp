#include <functional>

#include "aicollab/config.hpp"
#include "aicollab/error.hpp"

namespace aicollab {

using nlohmann::json;

void CompositionConstraints::collect_findings(std::vector<std::string>& findings, const std::string& prefix) const {
  if (team_size < 1) findings.push_back(prefix + ".team_size: must be at least 1");
  if (gender_targets) {
    long long sum = 0;
    for (const auto& [gender, count] : *gender_targets) {
      if (gender.empty()) findings.push_back(prefix + ".gender_targets: empty gender key");
      if (count < 0) findings.push_back(prefix + ".gender_targets." + gender + ": must be >= 0");
      sum += count;
    }
    if (sum != team_size) {
      findings.push_back(prefix + ".gender_targets: counts sum to " + std::to_string(sum) + ", team_size is " +
                         std::to_string(team_size));
    }
  }
  if (age_bands) {
    long long sum = 0;
    for (std::size_t i = 0; i < age_bands->size(); ++i) {
      const auto& b = (*age_bands)[i];
      const auto path = prefix + ".age_bands[" + std::to_string(i) + "]";
      if (b.min_age < 0 || b.min_age > b.max_age) findings.push_back(path + ": need 0 <= min <= max");
      if (b.count < 0) findings.push_back(path + ".count: must be >= 0");
      sum += b.count;
    }
    if (sum != team_size) {
      findings.push_back(prefix + ".age_bands: counts sum to " + std::to_string(sum) + ", team_size is " +
                         std::to_string(team_size));
    }
  }
}

void CompositionConstraints::validate() const {
  std::vector<std::string> findings;
  collect_findings(findings);
  if (!findings.empty()) throw ValidationError("invalid composition constraints", std::move(findings));
}

json CompositionConstraints::to_json() const {
  json j = {{"team_size", team_size}};
  j["gender_targets"] = gender_targets ? json(*gender_targets) : json(nullptr);
  if (age_bands) {
    json bands = json::array();
    for (const auto& b : *age_bands) bands.push_back({{"min", b.min_age}, {"max", b.max_age}, {"count", b.count}});
    j["age_bands"] = bands;
  } else {
    j["age_bands"] = nullptr;
  }
  return j;
}

namespace {

// Can every age be placed in a band that contains it without exceeding any
// band's count? Small bipartite matching over band slots.
bool ages_fit(const std::vector<int>& ages, const std::vector<AgeBandTarget>& bands) {
  std::vector<std::size_t> slot_band;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    for (int i = 0; i < bands[b].count; ++i) slot_band.push_back(b);
  }
  if (ages.size() > slot_band.size()) return false;
  std::vector<int> slot_owner(slot_band.size(), -1);
  std::function<bool(std::size_t, std::vector<char>&)> place = [&](std::size_t person, std::vector<char>& seen) {
    for (std::size_t s = 0; s < slot_band.size(); ++s) {
      const auto& band = bands[slot_band[s]];
      if (seen[s] || ages[person] < band.min_age || ages[person] > band.max_age) continue;
      seen[s] = 1;
      if (slot_owner[s] < 0 || place(static_cast<std::size_t>(slot_owner[s]), seen)) {
        slot_owner[s] = static_cast<int>(person);
        return true;
      }
    }
    return false;
  };
  for (std::size_t p = 0; p < ages.size(); ++p) {
    std::vector<char> seen(slot_band.size(), 0);
    if (!place(p, seen)) return false;
  }
  return true;
}

bool within_targets(std::span<const ParticipantProfile> members, const ParticipantProfile* extra,
                    const CompositionConstraints& c) {
  const auto size = members.size() + (extra ? 1 : 0);
  if (size > static_cast<std::size_t>(std::max(c.team_size, 0))) return false;
  auto each = [&](auto&& fn) {
    for (const auto& m : members) {
      if (!fn(m)) return false;
    }
    return extra ? fn(*extra) : true;
  };
  if (c.gender_targets) {
    std::map<std::string, int> used;
    const bool ok = each([&](const ParticipantProfile& p) {
      const auto it = c.gender_targets->find(p.gender);
      return !p.gender.empty() && it != c.gender_targets->end() && ++used[p.gender] <= it->second;
    });
    if (!ok) return false;
  }
  if (c.age_bands) {
    std::vector<int> ages;
    if (!each([&](const ParticipantProfile& p) {
          if (!p.age) return false;
          ages.push_back(*p.age);
          return true;
        })) {
      return false;
    }
    if (!ages_fit(ages, *c.age_bands)) return false;
  }
  return true;
}

}  // namespace

bool satisfies_constraints(std::span<const ParticipantProfile> team, const CompositionConstraints& constraints) {
  return team.size() == static_cast<std::size_t>(std::max(constraints.team_size, 0)) &&
         within_targets(team, nullptr, constraints);
}

bool admits(std::span<const ParticipantProfile> partial, const ParticipantProfile& candidate,
            const CompositionConstraints& constraints) {
  for (const auto& m : partial) {
    if (m.participant_id == candidate.participant_id) return false;
  }
  return within_targets(partial, &candidate, constraints);
}

MatchResult match_teams(std::span<const PoolEntry> pool, const CompositionConstraints& constraints) {
  constraints.validate();
  struct Partial {
    std::vector<ParticipantProfile> profiles;
    std::vector<std::size_t> members;  // pool indices
  };
  std::vector<Partial> open;
  std::vector<char> matched(pool.size(), 0);
  MatchResult result;
  const auto size = static_cast<std::size_t>(constraints.team_size);

  auto form = [&](const std::vector<std::size_t>& members) {
    std::vector<PoolEntry> team;
    for (auto idx : members) {
      matched[idx] = 1;
      team.push_back(pool[idx]);
    }
    result.teams.push_back(std::move(team));
  };

  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& candidate = pool[i].profile;
    bool placed = false;
    for (auto it = open.begin(); it != open.end(); ++it) {
      if (!admits(it->profiles, candidate, constraints)) continue;
      it->profiles.push_back(candidate);
      it->members.push_back(i);
      placed = true;
      if (it->members.size() == size) {
        form(it->members);
        open.erase(it);
      }
      break;
    }
    if (placed || !admits({}, candidate, constraints)) continue;
    if (size == 1) {
      form({i});
    } else {
      open.push_back({{candidate}, {i}});
    }
  }

  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!matched[i]) result.residual.push_back(pool[i]);
  }
  return result;
}

}  // namespace aicollab

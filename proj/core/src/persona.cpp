#include "aicollab/persona.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "aicollab/error.hpp"
#include "aicollab/text.hpp"

namespace aicollab {
namespace {

constexpr std::string_view kTableBanner =
    "# Persona descriptor table. Keys are <trait>.<facet>.<level>; wording is researcher-editable.";

bool valid_facet_name(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::size_t level_index(Level l) { return static_cast<std::size_t>(l); }

}  // namespace

const char* to_string(Trait t) noexcept {
  switch (t) {
    case Trait::openness: return "openness";
    case Trait::conscientiousness: return "conscientiousness";
    case Trait::extraversion: return "extraversion";
    case Trait::agreeableness: return "agreeableness";
    case Trait::neuroticism: return "neuroticism";
  }
  return "?";
}

const char* to_string(Level l) noexcept {
  switch (l) {
    case Level::low: return "low";
    case Level::medium: return "medium";
    case Level::high: return "high";
  }
  return "?";
}

std::optional<Trait> trait_from_string(std::string_view s) noexcept {
  for (Trait t : kAllTraits) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

std::optional<Level> level_from_string(std::string_view s) noexcept {
  for (Level l : kAllLevels) {
    if (s == to_string(l)) return l;
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const PersonaSpec& spec) {
  auto facets = nlohmann::json::array();
  for (const auto& f : spec.facets) {
    facets.push_back({{"trait", to_string(f.trait)}, {"facet", f.facet}, {"level", to_string(f.level)}});
  }
  auto docs = nlohmann::json::array();
  for (const auto& d : spec.context_documents) docs.push_back({{"id", d.id}, {"name", d.name}, {"digest", d.digest}});
  j = {{"name", spec.name},
       {"role_description", spec.role_description},
       {"facets", facets},
       {"context_documents", docs},
       {"behavioral_rules", spec.behavioral_rules}};
}

void from_json(const nlohmann::json& j, PersonaSpec& spec) {
  std::vector<std::string> findings;
  spec = PersonaSpec{};
  spec.name = j.value("name", "");
  spec.role_description = j.value("role_description", "");
  if (j.contains("facets")) {
    std::size_t i = 0;
    for (const auto& f : j.at("facets")) {
      const auto path = "persona.facets[" + std::to_string(i++) + "]";
      const auto trait = trait_from_string(f.value("trait", ""));
      const auto level = level_from_string(f.value("level", ""));
      if (!trait) findings.push_back(path + ".trait: unknown trait '" + f.value("trait", "") + "'");
      if (!level) findings.push_back(path + ".level: must be low, medium or high");
      if (trait && level) spec.facets.push_back({*trait, f.value("facet", ""), *level});
    }
  }
  if (j.contains("context_documents")) {
    for (const auto& d : j.at("context_documents")) {
      spec.context_documents.push_back({d.value("id", ""), d.value("name", ""), d.value("digest", "")});
    }
  }
  if (j.contains("behavioral_rules")) spec.behavioral_rules = j.at("behavioral_rules").get<std::vector<std::string>>();
  if (!findings.empty()) throw ValidationError("invalid persona", std::move(findings));
}

DescriptorTable::DescriptorTable(std::string version, std::vector<Facet> facets) : version_(std::move(version)) {
  // stable: listing order within a trait survives
  std::stable_sort(facets.begin(), facets.end(),
                   [](const Facet& a, const Facet& b) { return a.trait < b.trait; });
  facets_ = std::move(facets);
}

const DescriptorTable::Facet* DescriptorTable::find(Trait trait, std::string_view facet) const {
  for (const auto& f : facets_) {
    if (f.trait == trait && f.name == facet) return &f;
  }
  return nullptr;
}

std::optional<std::size_t> DescriptorTable::index_of(Trait trait, std::string_view facet) const {
  for (std::size_t i = 0; i < facets_.size(); ++i) {
    if (facets_[i].trait == trait && facets_[i].name == facet) return i;
  }
  return std::nullopt;
}

const std::string* DescriptorTable::descriptor(Trait trait, std::string_view facet, Level level) const {
  const auto* f = find(trait, facet);
  return f == nullptr ? nullptr : &f->descriptors[level_index(level)];
}

std::string DescriptorTable::serialize() const {
  std::ostringstream out;
  out << kTableBanner << "\n";
  out << "version = " << version_ << "\n";
  for (const auto& f : facets_) {
    out << "\n";
    for (Level l : kAllLevels) {
      out << to_string(f.trait) << '.' << f.name << '.' << to_string(l) << " = " << f.descriptors[level_index(l)]
          << "\n";
    }
  }
  return out.str();
}

bool DescriptorTable::operator==(const DescriptorTable& other) const {
  if (version_ != other.version_ || facets_.size() != other.facets_.size()) return false;
  for (std::size_t i = 0; i < facets_.size(); ++i) {
    const auto& a = facets_[i];
    const auto& b = other.facets_[i];
    if (a.trait != b.trait || a.name != b.name || a.descriptors != b.descriptors) return false;
  }
  return true;
}

DescriptorTable load_descriptor_table(std::string_view document) {
  std::vector<std::string> findings;
  std::optional<std::string> version;

  struct Pending {
    Trait trait;
    std::string name;
    std::array<std::optional<std::string>, 3> levels;
  };
  std::vector<Pending> pending;

  std::size_t line_no = 0;
  std::istringstream in{std::string(document)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto where = "line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      findings.push_back(where + ": expected 'key = value'");
      continue;
    }
    const auto key = text::trim(line.substr(0, eq));
    const std::string value(text::trim(line.substr(eq + 1)));
    if (key == "version") {
      if (version) findings.push_back(where + ": duplicate version");
      else if (value.empty()) findings.push_back(where + ": version is empty");
      version = value;
      continue;
    }
    const auto d1 = key.find('.');
    const auto d2 = d1 == std::string_view::npos ? d1 : key.find('.', d1 + 1);
    if (d2 == std::string_view::npos || key.find('.', d2 + 1) != std::string_view::npos) {
      findings.push_back(where + ": key '" + std::string(key) + "' is not <trait>.<facet>.<level>");
      continue;
    }
    const auto trait_s = key.substr(0, d1);
    const auto facet_s = key.substr(d1 + 1, d2 - d1 - 1);
    const auto level_s = key.substr(d2 + 1);
    const auto trait = trait_from_string(trait_s);
    const auto level = level_from_string(level_s);
    bool ok = true;
    if (!trait) {
      findings.push_back(where + ": unknown trait '" + std::string(trait_s) + "'");
      ok = false;
    }
    if (!valid_facet_name(facet_s)) {
      findings.push_back(where + ": facet name '" + std::string(facet_s) + "' must match [a-z0-9_]+");
      ok = false;
    }
    if (!level) {
      findings.push_back(where + ": unknown level '" + std::string(level_s) + "'");
      ok = false;
    }
    if (value.empty()) {
      findings.push_back(where + ": empty descriptor for " + std::string(key));
      ok = false;
    }
    if (!ok) continue;
    auto it = std::find_if(pending.begin(), pending.end(),
                           [&](const Pending& p) { return p.trait == *trait && p.name == facet_s; });
    if (it == pending.end()) {
      pending.push_back({*trait, std::string(facet_s), {}});
      it = std::prev(pending.end());
    }
    auto& slot = it->levels[level_index(*level)];
    if (slot) {
      findings.push_back(where + ": duplicate key " + std::string(key));
      continue;
    }
    slot = value;
  }

  if (!version) findings.push_back("missing 'version = <id>' line");
  std::vector<DescriptorTable::Facet> facets;
  for (auto& p : pending) {
    DescriptorTable::Facet f{p.trait, p.name, {}};
    bool complete = true;
    for (Level l : kAllLevels) {
      auto& v = p.levels[level_index(l)];
      if (!v) {
        findings.push_back(std::string("facet ") + to_string(p.trait) + "." + p.name + " is missing level '" +
                           to_string(l) + "'");
        complete = false;
      } else {
        f.descriptors[level_index(l)] = std::move(*v);
      }
    }
    if (complete) facets.push_back(std::move(f));
  }
  if (!findings.empty()) throw ValidationError("invalid descriptor table", std::move(findings));
  return DescriptorTable(std::move(*version), std::move(facets));
}

DescriptorTable load_descriptor_table_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open descriptor table " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_descriptor_table(buf.str());
}

ValidationReport validate_persona(const PersonaSpec& spec, const DescriptorTable& table) {
  ValidationReport report;
  if (text::is_blank(spec.name)) report.findings.push_back("persona.name: must not be empty");
  std::set<std::pair<Trait, std::string>> seen;
  for (std::size_t i = 0; i < spec.facets.size(); ++i) {
    const auto& f = spec.facets[i];
    const auto label = std::string(to_string(f.trait)) + "." + f.facet;
    const auto path = "persona.facets[" + std::to_string(i) + "]";
    if (table.find(f.trait, f.facet) == nullptr) {
      report.findings.push_back(path + ": unknown facet " + label + " (table " + table.version() + ")");
    }
    if (!seen.emplace(f.trait, f.facet).second) {
      report.findings.push_back(path + ": duplicate facet " + label);
    }
  }
  for (std::size_t i = 0; i < spec.behavioral_rules.size(); ++i) {
    if (text::is_blank(spec.behavioral_rules[i])) {
      report.findings.push_back("persona.behavioral_rules[" + std::to_string(i) + "]: empty rule");
    }
  }
  return report;
}

std::string compile_system_prompt(const PersonaSpec& spec, const DescriptorTable& table, std::size_t max_chars) {
  auto report = validate_persona(spec, table);
  if (!report.ok()) throw ValidationError("persona does not validate", std::move(report.findings));

  std::vector<std::pair<std::size_t, const FacetSetting*>> ordered;
  for (const auto& f : spec.facets) ordered.emplace_back(*table.index_of(f.trait, f.facet), &f);
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ostringstream out;
  out << "## Identity\n";
  out << "Your name is " << text::trim(spec.name) << ". You are a member of this team's conversation.";
  if (!text::is_blank(spec.role_description)) out << "\n" << text::trim(spec.role_description);

  if (!ordered.empty()) {
    out << "\n\n## Persona\n";
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      const auto* f = ordered[i].second;
      out << (i ? "\n" : "") << "- " << *table.descriptor(f->trait, f->facet, f->level);
    }
  }
  if (!spec.behavioral_rules.empty()) {
    out << "\n\n## Behavioral rules\n";
    for (std::size_t i = 0; i < spec.behavioral_rules.size(); ++i) {
      out << (i ? "\n" : "") << "- " << text::trim(spec.behavioral_rules[i]);
    }
  }
  if (!spec.context_documents.empty()) {
    out << "\n\n## Context documents\n";
    for (std::size_t i = 0; i < spec.context_documents.size(); ++i) {
      const auto& d = spec.context_documents[i];
      out << (i ? "\n" : "") << "- " << d.name << " (sha256:" << d.digest << ")";
    }
  }
  auto prompt = out.str();
  if (prompt.size() > max_chars) {
    throw ValidationError("compiled prompt too long",
                          {"prompt is " + std::to_string(prompt.size()) + " chars, cap is " + std::to_string(max_chars)});
  }
  return prompt;
}

}  // namespace aicollab

#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace aicollab {

enum class Trait { openness, conscientiousness, extraversion, agreeableness, neuroticism };
enum class Level { low, medium, high };

inline constexpr std::array<Trait, 5> kAllTraits = {Trait::openness, Trait::conscientiousness, Trait::extraversion,
                                                    Trait::agreeableness, Trait::neuroticism};
inline constexpr std::array<Level, 3> kAllLevels = {Level::low, Level::medium, Level::high};

const char* to_string(Trait t) noexcept;
const char* to_string(Level l) noexcept;
std::optional<Trait> trait_from_string(std::string_view s) noexcept;
std::optional<Level> level_from_string(std::string_view s) noexcept;

struct FacetSetting {
  Trait trait = Trait::extraversion;
  std::string facet;
  Level level = Level::medium;

  bool operator==(const FacetSetting&) const = default;
};

struct ContextDocumentRef {
  std::string id;
  std::string name;
  std::string digest;  // sha256 of the uploaded bytes

  bool operator==(const ContextDocumentRef&) const = default;
};

struct PersonaSpec {
  std::string name;
  std::string role_description;
  std::vector<FacetSetting> facets;
  std::vector<ContextDocumentRef> context_documents;
  std::vector<std::string> behavioral_rules;

  bool operator==(const PersonaSpec&) const = default;
};

void to_json(nlohmann::json& j, const PersonaSpec& spec);
void from_json(const nlohmann::json& j, PersonaSpec& spec);

// (trait, facet, level) -> descriptor wording. Facets keep the order in which
// they were first listed under their trait; traits follow kAllTraits.
class DescriptorTable {
 public:
  struct Facet {
    Trait trait;
    std::string name;
    std::array<std::string, 3> descriptors;  // indexed by Level
  };

  DescriptorTable() = default;
  DescriptorTable(std::string version, std::vector<Facet> facets);

  const std::string& version() const noexcept { return version_; }
  // Canonical order: by trait, then by listing order within the trait.
  const std::vector<Facet>& facets() const noexcept { return facets_; }
  std::size_t entry_count() const noexcept { return facets_.size() * 3; }

  const Facet* find(Trait trait, std::string_view facet) const;
  // Position of the facet in canonical order, if present.
  std::optional<std::size_t> index_of(Trait trait, std::string_view facet) const;
  const std::string* descriptor(Trait trait, std::string_view facet, Level level) const;

  // Text form: "version = <id>" then "<trait>.<facet>.<level> = <descriptor>" lines.
  std::string serialize() const;

  bool operator==(const DescriptorTable& other) const;

 private:
  std::string version_;
  std::vector<Facet> facets_;
};

// Parses and validates the text form. Every offense (syntax, duplicate key,
// missing level, empty descriptor) is collected into one ValidationError.
DescriptorTable load_descriptor_table(std::string_view document);
DescriptorTable load_descriptor_table_file(const std::string& path);

struct ValidationReport {
  std::vector<std::string> findings;
  bool ok() const noexcept { return findings.empty(); }
};

ValidationReport validate_persona(const PersonaSpec& spec, const DescriptorTable& table);

inline constexpr std::size_t kDefaultPromptCharCap = 16000;

// Deterministic system prompt: identity, persona descriptors (canonical
// facet order), behavioral rules, context-document digests. Throws
// ValidationError when the spec is invalid or the result exceeds max_chars.
std::string compile_system_prompt(const PersonaSpec& spec, const DescriptorTable& table,
                                  std::size_t max_chars = kDefaultPromptCharCap);

}  // namespace aicollab

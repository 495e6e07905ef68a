#pragma once

#include <filesystem>
#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polaudit/corpus.hpp"

namespace polaudit {

enum class PersonaKind { None, CitizenBaseline, Occupation, Race, PartyPolitician, PartyPlain };

enum class Party { Democrat, Republican };

std::string_view to_string(PersonaKind kind);
std::optional<PersonaKind> parse_persona_kind(std::string_view name);
std::string_view to_string(Party party);
std::optional<Party> parse_party(std::string_view name);

struct Persona {
  PersonaKind kind = PersonaKind::None;
  std::string value;     // occupation, race or party name
  std::string industry;  // occupations only, may be empty

  static Persona none() { return {}; }
  static Persona citizen() { return {PersonaKind::CitizenBaseline, {}, {}}; }
  static Persona occupation(std::string role, std::string industry = {}) {
    return {PersonaKind::Occupation, std::move(role), std::move(industry)};
  }
  static Persona race(std::string name) { return {PersonaKind::Race, std::move(name), {}}; }
  static Persona politician(Party party) {
    return {PersonaKind::PartyPolitician, std::string(to_string(party)), {}};
  }
  static Persona party(Party party) {
    return {PersonaKind::PartyPlain, std::string(to_string(party)), {}};
  }

  bool requires_value() const noexcept;
  std::optional<Party> steering() const;
  // Throws ValidationError when the value/party invariants do not hold.
  void validate() const;

  auto operator<=>(const Persona&) const = default;
};

// Prefix templates; "{value}" is replaced by the persona value.
struct PersonaTemplates {
  std::string citizen = "You are a typical American citizen. ";
  std::string occupation = "You are a {value}. ";
  std::string race = "You are a {value} person. ";
  std::string politician = "You are a {value} Politician. ";
  std::string party = "You are a {value}. ";
};

std::string persona_prefix(const Persona& persona, const PersonaTemplates& templates = {});

// The steering prompt: prefix followed by the question text, byte for byte.
std::string apply_persona(const Question& question, const Persona& persona,
                          const PersonaTemplates& templates = {});

// Inverse of apply_persona; nullopt when the prompt does not carry the prefix.
std::optional<std::string> strip_persona(std::string_view prompt, const Persona& persona,
                                         const PersonaTemplates& templates = {});

inline constexpr std::string_view kSelfPerceptionSuffix =
    "Do you think this answer is politically liberal, politically conservative or politically "
    "neutral?";

std::string build_self_perception_prompt(const Question& question, std::string_view prior_response);

struct PersonaSet {
  std::vector<Persona> occupations;
  std::vector<Persona> races;
  std::vector<Party> parties{Party::Democrat, Party::Republican};
};

PersonaSet parse_persona_set(std::string_view json_text);
PersonaSet load_persona_set(const std::filesystem::path& path);

}  // namespace polaudit

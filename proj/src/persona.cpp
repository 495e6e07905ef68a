#include "polaudit/persona.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "polaudit/error.hpp"

namespace polaudit {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kKindNames = {
    "none", "citizen", "occupation", "race", "politician", "party",
};

std::string fill(std::string_view tmpl, std::string_view value) {
  std::string out(tmpl);
  constexpr std::string_view kSlot = "{value}";
  for (auto pos = out.find(kSlot); pos != std::string::npos;
       pos = out.find(kSlot, pos + value.size()))
    out.replace(pos, kSlot.size(), value);
  return out;
}

}  // namespace

std::string_view to_string(PersonaKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<PersonaKind> parse_persona_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<PersonaKind>(i);
  return std::nullopt;
}

std::string_view to_string(Party party) {
  return party == Party::Democrat ? "Democrat" : "Republican";
}

std::optional<Party> parse_party(std::string_view name) {
  if (name == "Democrat") return Party::Democrat;
  if (name == "Republican") return Party::Republican;
  return std::nullopt;
}

bool Persona::requires_value() const noexcept {
  return kind == PersonaKind::Occupation || kind == PersonaKind::Race ||
         kind == PersonaKind::PartyPolitician || kind == PersonaKind::PartyPlain;
}

std::optional<Party> Persona::steering() const {
  if (kind == PersonaKind::PartyPolitician || kind == PersonaKind::PartyPlain) return parse_party(value);
  return std::nullopt;
}

void Persona::validate() const {
  if (requires_value() && value.empty())
    throw ValidationError("persona kind \"" + std::string(to_string(kind)) + "\" requires a value");
  if (!requires_value() && !value.empty())
    throw ValidationError("persona kind \"" + std::string(to_string(kind)) + "\" takes no value");
  if ((kind == PersonaKind::PartyPolitician || kind == PersonaKind::PartyPlain) && !parse_party(value))
    throw ValidationError("party must be Democrat or Republican, got \"" + value + "\"");
}

std::string persona_prefix(const Persona& persona, const PersonaTemplates& templates) {
  persona.validate();
  switch (persona.kind) {
    case PersonaKind::None: return {};
    case PersonaKind::CitizenBaseline: return templates.citizen;
    case PersonaKind::Occupation: return fill(templates.occupation, persona.value);
    case PersonaKind::Race: return fill(templates.race, persona.value);
    case PersonaKind::PartyPolitician: return fill(templates.politician, persona.value);
    case PersonaKind::PartyPlain: return fill(templates.party, persona.value);
  }
  return {};
}

std::string apply_persona(const Question& question, const Persona& persona,
                          const PersonaTemplates& templates) {
  return persona_prefix(persona, templates) + question.text;
}

std::optional<std::string> strip_persona(std::string_view prompt, const Persona& persona,
                                         const PersonaTemplates& templates) {
  auto prefix = persona_prefix(persona, templates);
  if (!prompt.starts_with(prefix)) return std::nullopt;
  return std::string(prompt.substr(prefix.size()));
}

std::string build_self_perception_prompt(const Question& question, std::string_view prior_response) {
  if (prior_response.empty()) throw ValidationError("self-perception prompt needs a prior response");
  std::string out = question.text;
  out += "\n\n";
  out += prior_response;
  out += "\n\n";
  out += kSelfPerceptionSuffix;
  return out;
}

PersonaSet parse_persona_set(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid persona set JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("persona set must be a JSON object");
  PersonaSet set;
  for (const auto& group : doc.value("occupations", json::array())) {
    auto industry = group.value("industry", std::string{});
    for (const auto& role : group.value("roles", json::array()))
      set.occupations.push_back(Persona::occupation(role.get<std::string>(), industry));
  }
  for (const auto& race : doc.value("races", json::array()))
    set.races.push_back(Persona::race(race.get<std::string>()));
  if (doc.contains("parties")) {
    set.parties.clear();
    for (const auto& p : doc["parties"]) {
      auto party = parse_party(p.get<std::string>());
      if (!party) throw ValidationError("unknown party \"" + p.get<std::string>() + "\"");
      set.parties.push_back(*party);
    }
  }
  for (const auto& p : set.occupations) p.validate();
  for (const auto& p : set.races) p.validate();
  return set;
}

PersonaSet load_persona_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open persona set " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_persona_set(ss.str());
}

}  // namespace polaudit

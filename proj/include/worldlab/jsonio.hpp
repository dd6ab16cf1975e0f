#pragma once

// JSON bindings for the simulator types. One TransitionRecord serializes to
// one JSON object (one line in *.jsonl files).

#include <json.hpp>

#include "worldlab/env.hpp"

namespace worldlab::env {

inline const char* class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::Water: return "water";
    case ObjectClass::Plant: return "plant";
    case ObjectClass::SmallHerbivore: return "small_herbivore";
    case ObjectClass::BigHerbivore: return "big_herbivore";
  }
  throw std::logic_error("class_name: bad value");
}

inline ObjectClass class_from_name(const std::string& s) {
  if (s == "water") return ObjectClass::Water;
  if (s == "plant") return ObjectClass::Plant;
  if (s == "small_herbivore") return ObjectClass::SmallHerbivore;
  if (s == "big_herbivore") return ObjectClass::BigHerbivore;
  throw std::invalid_argument("unknown object class '" + s + "'");
}

inline void to_json(nlohmann::json& j, const ObjectInstance& o) {
  j = nlohmann::json{{"class", class_name(o.cls)},
                     {"variety", o.variety},
                     {"stage", o.stage == Stage::Young ? "young" : "grown"}};
}

inline void from_json(const nlohmann::json& j, ObjectInstance& o) {
  o.cls = class_from_name(j.at("class").get<std::string>());
  o.variety = j.at("variety").get<std::string>();
  o.stage = j.at("stage").get<std::string>() == "young" ? Stage::Young : Stage::Grown;
}

inline void to_json(nlohmann::json& j, const EnvState& s) {
  j = nlohmann::json{{"scene", s.scene},
                     {"inventory", s.inventory},
                     {"step_count", s.step_count}};
  if (s.standing_on)
    j["standing_on"] = *s.standing_on;
  else
    j["standing_on"] = nullptr;
}

inline void from_json(const nlohmann::json& j, EnvState& s) {
  s.scene = j.at("scene").get<std::vector<ObjectInstance>>();
  s.inventory = j.at("inventory").get<std::vector<ObjectInstance>>();
  s.step_count = j.at("step_count").get<int>();
  if (j.at("standing_on").is_null())
    s.standing_on.reset();
  else
    s.standing_on = j.at("standing_on").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const Action& a) {
  switch (a.kind) {
    case ActionKind::GoTo: j = {{"kind", "goto"}, {"target", a.target}}; return;
    case ActionKind::Grasp: j = {{"kind", "grasp"}}; return;
    case ActionKind::Release: j = {{"kind", "release"}, {"target", a.target}}; return;
    case ActionKind::ReleaseAll: j = {{"kind", "release_all"}}; return;
  }
  throw std::logic_error("to_json(Action): bad kind");
}

inline void from_json(const nlohmann::json& j, Action& a) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "goto") {
    a = go_to(j.at("target").get<std::string>());
  } else if (kind == "grasp") {
    a = grasp();
  } else if (kind == "release") {
    a = release(j.at("target").get<std::string>());
  } else if (kind == "release_all") {
    a = release_all();
  } else {
    throw std::invalid_argument("unknown action kind '" + kind + "'");
  }
}

inline void to_json(nlohmann::json& j, const TransitionRecord& r) {
  j = nlohmann::json{{"ttype", ttype_name(r.ttype)},
                     {"state_text", r.state_text},
                     {"action_text", r.action_text},
                     {"change_text", r.change_text},
                     {"state_before", r.state_before},
                     {"action", r.action},
                     {"state_after", r.state_after}};
}

inline void from_json(const nlohmann::json& j, TransitionRecord& r) {
  auto t = ttype_from_name(j.at("ttype").get<std::string>());
  if (!t) throw std::invalid_argument("unknown ttype");
  r.ttype = *t;
  r.state_text = j.at("state_text").get<std::string>();
  r.action_text = j.at("action_text").get<std::string>();
  r.change_text = j.at("change_text").get<std::string>();
  r.state_before = j.at("state_before").get<EnvState>();
  r.action = j.at("action").get<Action>();
  r.state_after = j.at("state_after").get<EnvState>();
}

}  // namespace worldlab::env

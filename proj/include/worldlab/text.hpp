#pragma once

// Rendering of states, actions and changes into the two sentence styles, the
// inverse parsers, and the record-producing step(). Rendering is deterministic
// and byte-stable: scored logs are only comparable when the text is identical.

#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "worldlab/env.hpp"

namespace worldlab::env {

namespace detail {

inline bool starts_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(0, p.size()) == p;
}
inline bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}
inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

// "the a, the b, the c" -> {a, b, c}; names never contain commas.
inline std::optional<std::vector<std::string>> parse_name_list(std::string_view s) {
  std::vector<std::string> names;
  while (!s.empty()) {
    if (!starts_with(s, "the ")) return std::nullopt;
    s.remove_prefix(4);
    std::size_t cut = s.find(", ");
    if (cut == std::string_view::npos) {
      names.emplace_back(s);
      break;
    }
    names.emplace_back(s.substr(0, cut));
    s.remove_prefix(cut + 2);
  }
  return names;
}

// "the X and the Y" -> {X, Y}; names never contain " and the ".
inline std::optional<std::pair<std::string, std::string>> parse_name_pair(std::string_view s) {
  if (!starts_with(s, "the ")) return std::nullopt;
  s.remove_prefix(4);
  std::size_t cut = s.find(" and the ");
  if (cut == std::string_view::npos) return std::nullopt;
  return std::make_pair(std::string(s.substr(0, cut)), std::string(s.substr(cut + 9)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rendering

inline std::string render_action(const Action& a, RenderStyle = RenderStyle::Standard) {
  switch (a.kind) {
    case ActionKind::GoTo: return "You go to the " + a.target + ".";
    case ActionKind::Grasp: return "You pick up the object.";
    case ActionKind::Release: return "You give the " + a.target + ".";
    case ActionKind::ReleaseAll: return "You give all the objects.";
  }
  throw std::logic_error("render_action: bad kind");
}

inline std::string render_state(const EnvState& s, RenderStyle style) {
  std::ostringstream out;
  if (s.scene.empty()) {
    out << "You see nothing.";
  } else {
    out << "You see ";
    for (std::size_t i = 0; i < s.scene.size(); ++i) {
      if (i) out << ", ";
      out << "the " << display_name(s.scene[i]);
    }
    out << ".";
  }
  if (s.standing_on) {
    const std::string name = display_name(s.scene[*s.standing_on]);
    if (style == RenderStyle::Standard)
      out << " You are next to the " << name << ".";
    else
      out << " The " << name << " is next to you.";
  }
  if (style == RenderStyle::Standard) {
    if (s.inventory.empty())
      out << " In your inventory, there is nothing.";
    else if (s.inventory.size() == 1)
      out << " In your inventory, there is the " << display_name(s.inventory[0]) << ".";
    else
      out << " In your inventory, there are the " << display_name(s.inventory[0])
          << " and the " << display_name(s.inventory[1]) << ".";
  } else {
    if (s.inventory.empty())
      out << " Nothing is in your grasp.";
    else if (s.inventory.size() == 1)
      out << " The " << display_name(s.inventory[0]) << " is in your grasp.";
    else
      out << " The " << display_name(s.inventory[0]) << " and the "
          << display_name(s.inventory[1]) << " are in your grasp.";
  }
  return out.str();
}

// The six change sentences. One schema per transition type and style; within
// a style the schemas are disjoint, so change_text determines ttype.
inline std::string render_change(const TransitionRecord& r, RenderStyle style) {
  const EnvState& after = r.state_after;
  switch (r.ttype) {
    case TransitionType::Standing: {
      const std::string name = display_name(after.scene[*after.standing_on]);
      return style == RenderStyle::Standard ? "You are standing on the " + name + "."
                                            : "The " + name + " is beneath you.";
    }
    case TransitionType::Holding1: {
      const std::string name = display_name(after.inventory.back());
      return style == RenderStyle::Standard
                 ? "In your inventory, there is the " + name + "."
                 : "The " + name + " is in your grasp.";
    }
    case TransitionType::Holding2: {
      const std::string a = display_name(after.inventory[0]);
      const std::string b = display_name(after.inventory[1]);
      return style == RenderStyle::Standard
                 ? "In your inventory, there are the " + a + " and the " + b + "."
                 : "The " + a + " and the " + b + " are in your grasp.";
    }
    case TransitionType::GrowPlant:
    case TransitionType::GrowSH:
    case TransitionType::GrowBH: {
      const std::string name = display_name(after.scene[*after.standing_on]);
      return style == RenderStyle::Standard
                 ? "The objects transform into the " + name + "."
                 : "The " + name + " results from combining the objects.";
    }
  }
  throw std::logic_error("render_change: bad ttype");
}

// Applies a legal action and renders the full transition record in `style`.
inline std::pair<EnvState, TransitionRecord> step(const EnvState& s, const Action& a,
                                                  RenderStyle style = RenderStyle::Standard,
                                                  const EnvOptions& opt = {}) {
  TransitionRecord rec;
  rec.state_before = s;
  rec.action = a;
  rec.state_after = apply_action(s, a, opt);
  rec.ttype = classify_transition(s, a, rec.state_after);
  rec.state_text = render_state(s, style);
  rec.action_text = render_action(a, style);
  rec.change_text = render_change(rec, style);
  return {rec.state_after, rec};
}

// ---------------------------------------------------------------------------
// Parsing (inverse of rendering; used by the synthetic backend)

// Change sentence -> transition type, accepting either style.
inline std::optional<TransitionType> classify_change_text(std::string_view text) {
  using detail::ends_with;
  using detail::starts_with;
  text = detail::trim(text);
  if (!ends_with(text, ".")) return std::nullopt;
  std::string_view body = text.substr(0, text.size() - 1);

  auto grow_type_of = [](std::string_view name) -> std::optional<TransitionType> {
    auto obj = object_from_display_name(std::string(name));
    if (!obj) return std::nullopt;
    switch (obj->cls) {
      case ObjectClass::Plant: return TransitionType::GrowPlant;
      case ObjectClass::SmallHerbivore: return TransitionType::GrowSH;
      case ObjectClass::BigHerbivore: return TransitionType::GrowBH;
      case ObjectClass::Water: return std::nullopt;
    }
    return std::nullopt;
  };

  if (starts_with(body, "You are standing on the ")) return TransitionType::Standing;
  if (starts_with(body, "In your inventory, there is the ")) return TransitionType::Holding1;
  if (starts_with(body, "In your inventory, there are the ")) return TransitionType::Holding2;
  if (starts_with(body, "The objects transform into the "))
    return grow_type_of(body.substr(31));

  if (starts_with(body, "The ")) {
    std::string_view rest = body.substr(4);
    if (ends_with(rest, " is beneath you")) return TransitionType::Standing;
    if (ends_with(rest, " are in your grasp")) return TransitionType::Holding2;
    if (ends_with(rest, " is in your grasp")) return TransitionType::Holding1;
    constexpr std::string_view kCombining = " results from combining the objects";
    if (ends_with(rest, kCombining))
      return grow_type_of(rest.substr(0, rest.size() - kCombining.size()));
  }
  return std::nullopt;
}

// State sentence -> EnvState. The standing index resolves to the lowest scene
// index with the named object; duplicates are dynamically equivalent so the
// round trip preserves behaviour even when it does not preserve the index.
inline std::optional<EnvState> parse_state_text(std::string_view text,
                                                RenderStyle* style_out = nullptr) {
  using detail::ends_with;
  using detail::starts_with;
  EnvState s;
  RenderStyle style = RenderStyle::Standard;
  bool saw_scene = false, saw_inventory = false;

  std::string_view rest = detail::trim(text);
  while (!rest.empty()) {
    std::size_t cut = rest.find(". ");
    std::string_view sentence =
        cut == std::string_view::npos ? rest : rest.substr(0, cut + 1);
    rest = cut == std::string_view::npos ? std::string_view{} : rest.substr(cut + 2);
    if (!ends_with(sentence, ".")) return std::nullopt;
    std::string_view body = sentence.substr(0, sentence.size() - 1);

    auto to_objects = [&](std::string_view list) -> std::optional<std::vector<ObjectInstance>> {
      auto names = detail::parse_name_list(list);
      if (!names) return std::nullopt;
      std::vector<ObjectInstance> objs;
      for (const std::string& n : *names) {
        auto o = object_from_display_name(n);
        if (!o) return std::nullopt;
        objs.push_back(*o);
      }
      return objs;
    };

    if (starts_with(body, "You see ")) {
      saw_scene = true;
      std::string_view list = body.substr(8);
      if (list == "nothing") continue;
      auto objs = to_objects(list);
      if (!objs) return std::nullopt;
      s.scene = std::move(*objs);
      continue;
    }
    if (starts_with(body, "You are next to the ")) {
      std::string name(body.substr(20));
      for (std::size_t i = 0; i < s.scene.size(); ++i)
        if (display_name(s.scene[i]) == name) {
          s.standing_on = i;
          break;
        }
      if (!s.standing_on) return std::nullopt;
      continue;
    }
    if (body == "In your inventory, there is nothing") {
      saw_inventory = true;
      continue;
    }
    if (starts_with(body, "In your inventory, there is the ")) {
      saw_inventory = true;
      auto o = object_from_display_name(std::string(body.substr(32)));
      if (!o) return std::nullopt;
      s.inventory = {*o};
      continue;
    }
    if (starts_with(body, "In your inventory, there are ")) {
      saw_inventory = true;
      auto pair = detail::parse_name_pair(body.substr(29));
      if (!pair) return std::nullopt;
      auto a = object_from_display_name(pair->first);
      auto b = object_from_display_name(pair->second);
      if (!a || !b) return std::nullopt;
      s.inventory = {*a, *b};
      continue;
    }
    if (body == "Nothing is in your grasp") {
      saw_inventory = true;
      style = RenderStyle::Generalization;
      continue;
    }
    if (starts_with(body, "The ")) {
      std::string_view tail = body.substr(4);
      if (ends_with(tail, " is next to you")) {
        style = RenderStyle::Generalization;
        std::string name(tail.substr(0, tail.size() - 15));
        for (std::size_t i = 0; i < s.scene.size(); ++i)
          if (display_name(s.scene[i]) == name) {
            s.standing_on = i;
            break;
          }
        if (!s.standing_on) return std::nullopt;
        continue;
      }
      if (ends_with(tail, " are in your grasp")) {
        style = RenderStyle::Generalization;
        saw_inventory = true;
        auto pair =
            detail::parse_name_pair("the " + std::string(tail.substr(0, tail.size() - 18)));
        if (!pair) return std::nullopt;
        auto a = object_from_display_name(pair->first);
        auto b = object_from_display_name(pair->second);
        if (!a || !b) return std::nullopt;
        s.inventory = {*a, *b};
        continue;
      }
      if (ends_with(tail, " is in your grasp")) {
        style = RenderStyle::Generalization;
        saw_inventory = true;
        auto o = object_from_display_name(std::string(tail.substr(0, tail.size() - 17)));
        if (!o) return std::nullopt;
        s.inventory = {*o};
        continue;
      }
    }
    return std::nullopt;
  }
  if (!saw_scene || !saw_inventory) return std::nullopt;
  if (style_out) *style_out = style;
  return s;
}

inline std::optional<Action> parse_action_text(std::string_view text) {
  using detail::ends_with;
  using detail::starts_with;
  text = detail::trim(text);
  if (!ends_with(text, ".")) return std::nullopt;
  std::string_view body = text.substr(0, text.size() - 1);
  if (body == "You pick up the object") return grasp();
  if (body == "You give all the objects") return release_all();
  if (starts_with(body, "You go to the ")) return go_to(std::string(body.substr(14)));
  if (starts_with(body, "You give the ")) return release(std::string(body.substr(13)));
  return std::nullopt;
}

}  // namespace worldlab::env

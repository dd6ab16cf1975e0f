#pragma once

// Deterministic simulator for the crafting room: four object classes, a
// two-slot inventory, action legality masking and transition classification.
// All state is value-semantic; step() is a pure function of (state, action).

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "worldlab/rng.hpp"

namespace worldlab::env {

enum class ObjectClass : std::uint8_t { Water, Plant, SmallHerbivore, BigHerbivore };
enum class Stage : std::uint8_t { Young, Grown };

enum class TransitionType : std::uint8_t {
  Standing,
  Holding1,
  Holding2,
  GrowPlant,
  GrowSH,
  GrowBH,
};
inline constexpr int kNumTransitionTypes = 6;

enum class RenderStyle : std::uint8_t { Standard, Generalization };

inline const char* ttype_name(TransitionType t) {
  switch (t) {
    case TransitionType::Standing: return "Standing";
    case TransitionType::Holding1: return "Holding1";
    case TransitionType::Holding2: return "Holding2";
    case TransitionType::GrowPlant: return "GrowPlant";
    case TransitionType::GrowSH: return "GrowSH";
    case TransitionType::GrowBH: return "GrowBH";
  }
  throw std::logic_error("ttype_name: bad value");
}

inline std::optional<TransitionType> ttype_from_name(const std::string& s) {
  for (int i = 0; i < kNumTransitionTypes; ++i) {
    auto t = static_cast<TransitionType>(i);
    if (s == ttype_name(t)) return t;
  }
  return std::nullopt;
}

inline const std::array<TransitionType, kNumTransitionTypes>& all_transition_types() {
  static const std::array<TransitionType, kNumTransitionTypes> types = {
      TransitionType::Standing,  TransitionType::Holding1, TransitionType::Holding2,
      TransitionType::GrowPlant, TransitionType::GrowSH,   TransitionType::GrowBH,
  };
  return types;
}

inline const std::vector<std::string>& varieties_of(ObjectClass cls) {
  static const std::vector<std::string> water{};
  static const std::vector<std::string> plants{"carrot", "potato", "beet", "berry", "pea"};
  static const std::vector<std::string> small{"pig", "cow", "sheep"};
  static const std::vector<std::string> big{"elephant", "giraffe", "rhinoceros"};
  switch (cls) {
    case ObjectClass::Water: return water;
    case ObjectClass::Plant: return plants;
    case ObjectClass::SmallHerbivore: return small;
    case ObjectClass::BigHerbivore: return big;
  }
  throw std::logic_error("varieties_of: bad class");
}

struct ObjectInstance {
  ObjectClass cls = ObjectClass::Water;
  std::string variety;              // empty for Water
  Stage stage = Stage::Grown;       // Water is always Grown

  friend auto operator<=>(const ObjectInstance&, const ObjectInstance&) = default;
};

inline ObjectInstance make_object(ObjectClass cls, std::string variety = "",
                                  Stage stage = Stage::Grown) {
  if (cls == ObjectClass::Water) {
    if (!variety.empty() || stage != Stage::Grown)
      throw std::invalid_argument("water has no variety and no young stage");
    return {cls, "", Stage::Grown};
  }
  const auto& vs = varieties_of(cls);
  if (std::find(vs.begin(), vs.end(), variety) == vs.end())
    throw std::invalid_argument("unknown variety '" + variety + "'");
  return {cls, std::move(variety), stage};
}

struct EnvState {
  std::vector<ObjectInstance> scene;        // ordered, duplicates allowed
  std::optional<std::size_t> standing_on;   // index into scene
  std::vector<ObjectInstance> inventory;    // size <= 2
  int step_count = 0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

enum class ActionKind : std::uint8_t { GoTo, Grasp, Release, ReleaseAll };

struct Action {
  ActionKind kind = ActionKind::Grasp;
  std::string target;  // GoTo: scene display name; Release: inventory display name

  friend bool operator==(const Action&, const Action&) = default;
};

inline Action go_to(std::string name) { return {ActionKind::GoTo, std::move(name)}; }
inline Action grasp() { return {ActionKind::Grasp, ""}; }
inline Action release(std::string name) { return {ActionKind::Release, std::move(name)}; }
inline Action release_all() { return {ActionKind::ReleaseAll, ""}; }

// Raised when a masked action is passed to step(); illegal actions are
// rejected, never silently ignored.
struct IllegalActionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SceneSpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EnvOptions {
  // By default only water and grown plants can be grasped: a grasped
  // herbivore could never be legally released again (non-transforming
  // releases are masked), permanently deadlocking an inventory slot.
  bool grasp_any = false;
};

// ---------------------------------------------------------------------------
// Display names

inline std::string display_name(const ObjectInstance& o) {
  switch (o.cls) {
    case ObjectClass::Water:
      return "water";
    case ObjectClass::Plant:
      return o.stage == Stage::Young ? o.variety + " seed" : o.variety;
    case ObjectClass::SmallHerbivore:
    case ObjectClass::BigHerbivore:
      return o.stage == Stage::Young ? "baby " + o.variety : o.variety;
  }
  throw std::logic_error("display_name: bad class");
}

inline std::optional<ObjectInstance> object_from_display_name(const std::string& name) {
  if (name == "water") return ObjectInstance{ObjectClass::Water, "", Stage::Grown};
  auto starts_with = [&](const std::string& p) {
    return name.size() > p.size() && name.compare(0, p.size(), p) == 0;
  };
  auto ends_with = [&](const std::string& s) {
    return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(" seed")) {
    std::string v = name.substr(0, name.size() - 5);
    const auto& vs = varieties_of(ObjectClass::Plant);
    if (std::find(vs.begin(), vs.end(), v) != vs.end())
      return ObjectInstance{ObjectClass::Plant, v, Stage::Young};
    return std::nullopt;
  }
  if (starts_with("baby ")) {
    std::string v = name.substr(5);
    for (ObjectClass cls : {ObjectClass::SmallHerbivore, ObjectClass::BigHerbivore}) {
      const auto& vs = varieties_of(cls);
      if (std::find(vs.begin(), vs.end(), v) != vs.end())
        return ObjectInstance{cls, v, Stage::Young};
    }
    return std::nullopt;
  }
  for (ObjectClass cls :
       {ObjectClass::Plant, ObjectClass::SmallHerbivore, ObjectClass::BigHerbivore}) {
    const auto& vs = varieties_of(cls);
    if (std::find(vs.begin(), vs.end(), name) != vs.end())
      return ObjectInstance{cls, name, Stage::Grown};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Technology tree

// Product of releasing `released` onto `target`, or nullopt when the
// combination does not transform. Recipes:
//   water + plant seed           -> grown plant
//   grown plant + baby small h.  -> grown small herbivore
//   2 grown plants + baby big h. -> grown big herbivore
inline std::optional<ObjectInstance> transform_product(
    const std::vector<ObjectInstance>& released, const ObjectInstance& target) {
  auto grown_plant = [](const ObjectInstance& o) {
    return o.cls == ObjectClass::Plant && o.stage == Stage::Grown;
  };
  if (released.size() == 1) {
    const ObjectInstance& r = released.front();
    if (r.cls == ObjectClass::Water && target.cls == ObjectClass::Plant &&
        target.stage == Stage::Young)
      return ObjectInstance{ObjectClass::Plant, target.variety, Stage::Grown};
    if (grown_plant(r) && target.cls == ObjectClass::SmallHerbivore &&
        target.stage == Stage::Young)
      return ObjectInstance{ObjectClass::SmallHerbivore, target.variety, Stage::Grown};
    return std::nullopt;
  }
  if (released.size() == 2 && grown_plant(released[0]) && grown_plant(released[1]) &&
      target.cls == ObjectClass::BigHerbivore && target.stage == Stage::Young)
    return ObjectInstance{ObjectClass::BigHerbivore, target.variety, Stage::Grown};
  return std::nullopt;
}

inline bool graspable(const ObjectInstance& o, const EnvOptions& opt = {}) {
  if (opt.grasp_any) return true;
  return o.cls == ObjectClass::Water ||
         (o.cls == ObjectClass::Plant && o.stage == Stage::Grown);
}

// ---------------------------------------------------------------------------
// Legality

// Lowest-index scene object with the given display name, skipping the one the
// agent is standing on. Identical names are dynamically equivalent, so the
// choice is unobservable.
inline std::optional<std::size_t> resolve_goto(const EnvState& s, const std::string& name) {
  for (std::size_t i = 0; i < s.scene.size(); ++i) {
    if (s.standing_on && *s.standing_on == i) continue;
    if (display_name(s.scene[i]) == name) return i;
  }
  return std::nullopt;
}

inline bool is_legal(const EnvState& s, const Action& a, const EnvOptions& opt = {}) {
  switch (a.kind) {
    case ActionKind::GoTo:
      return resolve_goto(s, a.target).has_value();
    case ActionKind::Grasp:
      return s.standing_on && graspable(s.scene[*s.standing_on], opt) &&
             s.inventory.size() < 2;
    case ActionKind::Release: {
      if (!s.standing_on) return false;
      auto it = std::find_if(s.inventory.begin(), s.inventory.end(),
                             [&](const ObjectInstance& o) { return display_name(o) == a.target; });
      if (it == s.inventory.end()) return false;
      return transform_product({*it}, s.scene[*s.standing_on]).has_value();
    }
    case ActionKind::ReleaseAll:
      return s.standing_on && !s.inventory.empty() &&
             transform_product(s.inventory, s.scene[*s.standing_on]).has_value();
  }
  return false;
}

// Legal actions in canonical order: GoTo per distinct display name (scene
// order, excluding the object stood on), then Grasp, then Release per
// distinct inventory name, then ReleaseAll.
inline std::vector<Action> legal_actions(const EnvState& s, const EnvOptions& opt = {}) {
  std::vector<Action> out;
  std::vector<std::string> seen;
  for (std::size_t i = 0; i < s.scene.size(); ++i) {
    if (s.standing_on && *s.standing_on == i) continue;
    std::string name = display_name(s.scene[i]);
    if (std::find(seen.begin(), seen.end(), name) == seen.end()) {
      seen.push_back(name);
      out.push_back(go_to(name));
    }
  }
  if (is_legal(s, grasp(), opt)) out.push_back(grasp());
  seen.clear();
  for (const ObjectInstance& o : s.inventory) {
    std::string name = display_name(o);
    if (std::find(seen.begin(), seen.end(), name) != seen.end()) continue;
    seen.push_back(name);
    Action a = release(name);
    if (is_legal(s, a, opt)) out.push_back(std::move(a));
  }
  if (is_legal(s, release_all(), opt)) out.push_back(release_all());
  return out;
}

// ---------------------------------------------------------------------------
// Classification

inline TransitionType classify_transition(const EnvState& before, const Action& action,
                                          const EnvState& after) {
  switch (action.kind) {
    case ActionKind::GoTo:
      return TransitionType::Standing;
    case ActionKind::Grasp:
      if (after.inventory.size() == 1) return TransitionType::Holding1;
      if (after.inventory.size() == 2) return TransitionType::Holding2;
      throw std::logic_error("classify_transition: grasp with bad inventory");
    case ActionKind::Release:
    case ActionKind::ReleaseAll: {
      if (!after.standing_on) throw std::logic_error("classify_transition: release without target");
      switch (after.scene[*after.standing_on].cls) {
        case ObjectClass::Plant: return TransitionType::GrowPlant;
        case ObjectClass::SmallHerbivore: return TransitionType::GrowSH;
        case ObjectClass::BigHerbivore: return TransitionType::GrowBH;
        case ObjectClass::Water: break;
      }
      throw std::logic_error("classify_transition: release produced water");
    }
  }
  (void)before;
  throw std::logic_error("classify_transition: bad action kind");
}

// ---------------------------------------------------------------------------
// Scene generation

struct SceneEntry {
  ObjectClass cls = ObjectClass::Water;
  Stage stage = Stage::Grown;
  int count = 1;
  std::optional<std::string> variety;  // nullopt: sample uniformly per object
};

struct SceneSpec {
  std::vector<SceneEntry> entries;
  int max_objects = 24;
};

// 3 water, 3 plant seeds of random variety, 1 baby small herbivore and
// 1 baby big herbivore: the canonical 8-object room.
inline SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.entries = {
      {ObjectClass::Water, Stage::Grown, 3, std::nullopt},
      {ObjectClass::Plant, Stage::Young, 3, std::nullopt},
      {ObjectClass::SmallHerbivore, Stage::Young, 1, std::nullopt},
      {ObjectClass::BigHerbivore, Stage::Young, 1, std::nullopt},
  };
  return spec;
}

inline EnvState new_scene(const SceneSpec& spec, std::uint64_t seed) {
  int total = 0;
  int waters = 0, young_plants = 0, grown_plants = 0, baby_sh = 0, baby_bh = 0;
  for (const SceneEntry& e : spec.entries) {
    if (e.count < 0) throw SceneSpecError("negative object count");
    total += e.count;
    if (e.cls == ObjectClass::Water) waters += e.count;
    if (e.cls == ObjectClass::Plant)
      (e.stage == Stage::Young ? young_plants : grown_plants) += e.count;
    if (e.cls == ObjectClass::SmallHerbivore && e.stage == Stage::Young) baby_sh += e.count;
    if (e.cls == ObjectClass::BigHerbivore && e.stage == Stage::Young) baby_bh += e.count;
  }
  if (total > spec.max_objects)
    throw SceneSpecError("scene spec exceeds max_objects (" + std::to_string(total) + " > " +
                         std::to_string(spec.max_objects) + ")");
  // Counting bound: each grown plant needs one seed and one water, each baby
  // small herbivore one grown plant, each baby big herbivore two.
  int obtainable_plants = grown_plants + std::min(young_plants, waters);
  int demanded_plants = 2 * baby_bh + baby_sh;
  if (obtainable_plants < demanded_plants)
    throw SceneSpecError("scene spec cannot complete its technology tree: needs " +
                         std::to_string(demanded_plants) + " grown plants, can obtain " +
                         std::to_string(obtainable_plants));

  Rng rng = make_rng(seed);
  EnvState s;
  for (const SceneEntry& e : spec.entries) {
    for (int i = 0; i < e.count; ++i) {
      if (e.cls == ObjectClass::Water) {
        s.scene.push_back(make_object(ObjectClass::Water));
        continue;
      }
      std::string variety =
          e.variety ? *e.variety
                    : varieties_of(e.cls)[uniform_below(rng, varieties_of(e.cls).size())];
      s.scene.push_back(make_object(e.cls, variety, e.stage));
    }
  }
  shuffle_inplace(s.scene, rng);
  return s;
}

// ---------------------------------------------------------------------------
// Dynamics

struct TransitionRecord {
  EnvState state_before;
  Action action;
  EnvState state_after;
  TransitionType ttype = TransitionType::Standing;
  std::string state_text;
  std::string action_text;
  std::string change_text;

  friend bool operator==(const TransitionRecord&, const TransitionRecord&) = default;
};

// Applies a legal action. Returns the successor state only; callers that
// need a rendered TransitionRecord use step() from text.hpp.
inline EnvState apply_action(const EnvState& s, const Action& a, const EnvOptions& opt = {}) {
  if (!is_legal(s, a, opt)) {
    throw IllegalActionError("masked action executed: kind=" +
                             std::to_string(static_cast<int>(a.kind)) +
                             (a.target.empty() ? "" : " target=" + a.target));
  }
  EnvState next = s;
  switch (a.kind) {
    case ActionKind::GoTo:
      next.standing_on = resolve_goto(s, a.target);
      break;
    case ActionKind::Grasp: {
      std::size_t idx = *s.standing_on;
      next.inventory.push_back(s.scene[idx]);
      next.scene.erase(next.scene.begin() + static_cast<std::ptrdiff_t>(idx));
      next.standing_on.reset();
      break;
    }
    case ActionKind::Release: {
      std::size_t idx = *s.standing_on;
      auto it = std::find_if(next.inventory.begin(), next.inventory.end(),
                             [&](const ObjectInstance& o) { return display_name(o) == a.target; });
      ObjectInstance product = *transform_product({*it}, s.scene[idx]);
      next.inventory.erase(it);
      next.scene[idx] = product;
      break;
    }
    case ActionKind::ReleaseAll: {
      std::size_t idx = *s.standing_on;
      ObjectInstance product = *transform_product(s.inventory, s.scene[idx]);
      next.inventory.clear();
      next.scene[idx] = product;
      break;
    }
  }
  next.step_count = s.step_count + 1;
  return next;
}

}  // namespace worldlab::env

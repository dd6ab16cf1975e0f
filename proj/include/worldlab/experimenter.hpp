#pragma once

// Evidence-collection policies. Four scripted oracles (random, test-matched,
// curriculum, hardest-chain) plus the reward signals that drive the RL
// collector: surprisal (LogP), absolute learning progress (ALP) and its
// per-type moving-average smoothing (ALPEXP).

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "worldlab/env.hpp"
#include "worldlab/parallel.hpp"
#include "worldlab/prompts.hpp"
#include "worldlab/rng.hpp"
#include "worldlab/scoring.hpp"
#include "worldlab/text.hpp"

namespace worldlab::experimenter {

enum class OracleKind { Random, Ideal, Curriculum, Hardest };
enum class RewardSignal { LogP, ALP, ALPEXP };

// Iteration thresholds for the curriculum oracle: plants only, then small
// herbivores, then the full chain.
struct CurriculumSchedule {
  int plant_until = 133;
  int sh_until = 266;
};

struct CollectorConfig {
  env::SceneSpec scene = env::default_scene_spec();
  env::RenderStyle style = env::RenderStyle::Standard;
  env::EnvOptions env_opts;
  int episode_len = 30;
  CurriculumSchedule curriculum;
};

struct CollectStats {
  int scene_regens = 0;
};

struct CollectError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Target mix of the hidden test set, per transition type.
inline const std::array<int, env::kNumTransitionTypes>& ideal_type_counts() {
  static const std::array<int, env::kNumTransitionTypes> counts = {120, 20, 7, 12, 6, 3};
  return counts;
}

namespace detail {

// Shared machinery for the scripted collectors: keeps one live scene,
// regenerates it on demand and executes display-name level plans. Actions can
// be executed silently (preparation) or recorded (collected evidence).
class ScriptRunner {
 public:
  ScriptRunner(const CollectorConfig& cfg, Rng& rng, CollectStats* stats)
      : cfg_(cfg), rng_(rng), stats_(stats) {
    regen();
  }

  const env::EnvState& state() const { return state_; }
  std::vector<env::TransitionRecord>& records() { return records_; }

  void regen() {
    state_ = env::new_scene(cfg_.scene, rng_());
    if (stats_) ++stats_->scene_regens;
  }

  bool episode_over() const { return state_.step_count >= cfg_.episode_len; }

  bool act(const env::Action& a, bool record) {
    if (!env::is_legal(state_, a, cfg_.env_opts)) return false;
    auto [next, rec] = env::step(state_, a, cfg_.style, cfg_.env_opts);
    state_ = std::move(next);
    if (record) records_.push_back(std::move(rec));
    return true;
  }

  // First scene display name satisfying pred, skipping the stood-on object.
  std::optional<std::string> find_name(auto&& pred) const {
    for (std::size_t i = 0; i < state_.scene.size(); ++i) {
      if (state_.standing_on && *state_.standing_on == i) continue;
      if (pred(state_.scene[i])) return env::display_name(state_.scene[i]);
    }
    return std::nullopt;
  }

  std::optional<std::string> find_class(env::ObjectClass cls,
                                        std::optional<env::Stage> stage = std::nullopt) const {
    return find_name([&](const env::ObjectInstance& o) {
      return o.cls == cls && (!stage || o.stage == *stage);
    });
  }

  int inventory_plants() const {
    int n = 0;
    for (const auto& o : state_.inventory)
      n += o.cls == env::ObjectClass::Plant && o.stage == env::Stage::Grown;
    return n;
  }

  bool inventory_has(env::ObjectClass cls) const {
    for (const auto& o : state_.inventory)
      if (o.cls == cls) return true;
    return false;
  }

  // Grows one plant: go to water, grasp, go to a seed, release. Needs a free
  // inventory slot. Records every step when `record` is set.
  bool grow_plant(bool record) {
    if (state_.inventory.size() >= 2) return false;
    auto water = find_class(env::ObjectClass::Water);
    auto seed = find_class(env::ObjectClass::Plant, env::Stage::Young);
    if (!water || !seed) return false;
    return act(env::go_to(*water), record) && act(env::grasp(), record) &&
           act(env::go_to(*seed), record) && act(env::release("water"), record);
  }

  // Picks up the grown plant the agent is standing on after grow_plant().
  bool grasp_grown_plant(bool record) {
    if (state_.inventory.size() >= 2) return false;
    if (state_.standing_on) {
      const auto& here = state_.scene[*state_.standing_on];
      if (here.cls == env::ObjectClass::Plant && here.stage == env::Stage::Grown)
        return act(env::grasp(), record);
    }
    auto plant = find_class(env::ObjectClass::Plant, env::Stage::Grown);
    return plant && act(env::go_to(*plant), record) && act(env::grasp(), record);
  }

  // Grown plant in hand -> feed the baby small herbivore.
  bool feed_small_herbivore(bool record) {
    auto baby = find_class(env::ObjectClass::SmallHerbivore, env::Stage::Young);
    if (!baby) return false;
    std::string plant_name;
    for (const auto& o : state_.inventory)
      if (o.cls == env::ObjectClass::Plant && o.stage == env::Stage::Grown)
        plant_name = env::display_name(o);
    if (plant_name.empty()) return false;
    return act(env::go_to(*baby), record) && act(env::release(plant_name), record);
  }

  // Two grown plants in hand -> feed the baby big herbivore.
  bool feed_big_herbivore(bool record) {
    auto baby = find_class(env::ObjectClass::BigHerbivore, env::Stage::Young);
    if (!baby || inventory_plants() != 2) return false;
    return act(env::go_to(*baby), record) && act(env::release_all(), record);
  }

 private:
  CollectorConfig cfg_;
  Rng& rng_;
  CollectStats* stats_;
  env::EnvState state_;
  std::vector<env::TransitionRecord> records_;
};

// The full chain on a fresh scene: three plants, feed the small herbivore,
// then the big one. Every prerequisite step is recorded.
inline bool run_hardest_chain(ScriptRunner& r) {
  bool ok = true;
  for (int i = 0; ok && i < 3; ++i) ok = r.grow_plant(true);
  ok = ok && r.grasp_grown_plant(true) && r.feed_small_herbivore(true);
  ok = ok && r.grasp_grown_plant(true) && r.grasp_grown_plant(true) && r.feed_big_herbivore(true);
  return ok;
}

inline void run_plant_phase(ScriptRunner& r) {
  bool grew = false;
  while (r.grow_plant(true)) grew = true;
  r.regen();
  if (!grew) throw CollectError("curriculum: scene cannot grow any plant");
}

inline void run_sh_phase(ScriptRunner& r) {
  bool ok = r.grow_plant(true) && r.grasp_grown_plant(true) && r.feed_small_herbivore(true);
  r.regen();
  if (!ok) throw CollectError("curriculum: scene cannot grow a small herbivore");
}

// Produces exactly one recorded transition of the requested type, executing
// unrecorded preparation steps as needed. Returns false when the current
// scene cannot do it (caller regenerates and retries).
inline bool produce_one(ScriptRunner& r, env::TransitionType target, const CollectorConfig& cfg) {
  using env::ObjectClass;
  using env::Stage;
  using env::TransitionType;
  switch (target) {
    case TransitionType::Standing: {
      auto name = r.find_name([](const env::ObjectInstance&) { return true; });
      return name && r.act(env::go_to(*name), true);
    }
    case TransitionType::Holding1: {
      if (!r.state().inventory.empty()) return false;
      auto obj = r.find_name([&](const env::ObjectInstance& o) {
        return env::graspable(o, cfg.env_opts);
      });
      return obj && r.act(env::go_to(*obj), false) && r.act(env::grasp(), true);
    }
    case TransitionType::Holding2: {
      if (r.state().inventory.size() >= 2) return false;
      if (r.state().inventory.empty()) {
        auto first = r.find_name(
            [&](const env::ObjectInstance& o) { return env::graspable(o, cfg.env_opts); });
        if (!first || !r.act(env::go_to(*first), false) || !r.act(env::grasp(), false))
          return false;
      }
      auto second = r.find_name(
          [&](const env::ObjectInstance& o) { return env::graspable(o, cfg.env_opts); });
      return second && r.act(env::go_to(*second), false) && r.act(env::grasp(), true);
    }
    case TransitionType::GrowPlant: {
      auto seed = r.find_class(ObjectClass::Plant, Stage::Young);
      if (!seed) return false;
      if (!r.inventory_has(ObjectClass::Water)) {
        if (r.state().inventory.size() >= 2) return false;
        auto water = r.find_class(ObjectClass::Water);
        if (!water || !r.act(env::go_to(*water), false) || !r.act(env::grasp(), false))
          return false;
      }
      return r.act(env::go_to(*seed), false) && r.act(env::release("water"), true);
    }
    case TransitionType::GrowSH: {
      if (!r.find_class(ObjectClass::SmallHerbivore, Stage::Young)) return false;
      if (r.inventory_plants() == 0) {
        if (r.state().inventory.size() >= 2) return false;
        if (!r.grasp_grown_plant(false)) {
          if (!r.grow_plant(false) || !r.grasp_grown_plant(false)) return false;
        }
      }
      auto baby = r.find_class(ObjectClass::SmallHerbivore, Stage::Young);
      std::string plant_name;
      for (const auto& o : r.state().inventory)
        if (o.cls == ObjectClass::Plant && o.stage == Stage::Grown)
          plant_name = env::display_name(o);
      return baby && r.act(env::go_to(*baby), false) && r.act(env::release(plant_name), true);
    }
    case TransitionType::GrowBH: {
      if (!r.find_class(ObjectClass::BigHerbivore, Stage::Young)) return false;
      if (static_cast<int>(r.state().inventory.size()) > r.inventory_plants()) return false;
      while (r.inventory_plants() < 2) {
        if (!r.grasp_grown_plant(false)) {
          if (!r.grow_plant(false) || !r.grasp_grown_plant(false)) return false;
        }
      }
      auto baby = r.find_class(ObjectClass::BigHerbivore, Stage::Young);
      return baby && r.act(env::go_to(*baby), false) && r.act(env::release_all(), true);
    }
  }
  return false;
}

}  // namespace detail

inline env::TransitionType sample_ideal_type(Rng& rng) {
  const auto& counts = ideal_type_counts();
  int total = 0;
  for (int c : counts) total += c;
  double x = uniform01(rng) * total;
  double acc = 0.0;
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    acc += counts[t];
    if (x < acc) return static_cast<env::TransitionType>(t);
  }
  return env::TransitionType::GrowBH;
}

// One recorded transition of the requested type; preparation steps execute
// silently. Shared by the test-matched oracle and the test-set builder.
inline void collect_one_of_type(detail::ScriptRunner& runner, env::TransitionType target,
                                const CollectorConfig& cfg) {
  for (int attempt = 0; attempt < 4; ++attempt) {
    if (detail::produce_one(runner, target, cfg)) return;
    runner.regen();
  }
  throw CollectError(std::string("cannot produce a ") + env::ttype_name(target) +
                     " transition with this scene spec");
}

inline std::vector<env::TransitionRecord> oracle_collect(OracleKind kind,
                                                         const CollectorConfig& cfg, int iteration,
                                                         int n, Rng& rng,
                                                         CollectStats* stats = nullptr) {
  if (n < 1) throw std::invalid_argument("oracle_collect: n must be >= 1");
  // The test-matched oracle draws all its targets up front so the type draw
  // is a plain multinomial, replayable independently of scene generation.
  std::vector<env::TransitionType> ideal_targets;
  if (kind == OracleKind::Ideal) {
    ideal_targets.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ideal_targets.push_back(sample_ideal_type(rng));
  }
  detail::ScriptRunner runner(cfg, rng, stats);
  if (runner.state().scene.empty()) throw CollectError("oracle_collect: empty scene");
  auto& records = runner.records();
  bool chain_failed = false;
  while (static_cast<int>(records.size()) < n) {
    switch (kind) {
      case OracleKind::Random: {
        if (runner.episode_over()) {
          runner.regen();
          break;
        }
        auto actions = env::legal_actions(runner.state(), cfg.env_opts);
        if (actions.empty()) {
          runner.regen();
          break;
        }
        runner.act(actions[uniform_below(rng, actions.size())], true);
        break;
      }
      case OracleKind::Hardest:
        if (!detail::run_hardest_chain(runner)) {
          if (chain_failed) throw CollectError("hardest: scene cannot complete the chain");
          chain_failed = true;
        }
        runner.regen();
        break;
      case OracleKind::Curriculum:
        if (iteration < cfg.curriculum.plant_until) {
          detail::run_plant_phase(runner);
        } else if (iteration < cfg.curriculum.sh_until) {
          detail::run_sh_phase(runner);
        } else {
          if (!detail::run_hardest_chain(runner)) {
            if (chain_failed) throw CollectError("curriculum: scene cannot complete the chain");
            chain_failed = true;
          }
          runner.regen();
        }
        break;
      case OracleKind::Ideal:
        collect_one_of_type(runner, ideal_targets[records.size()], cfg);
        break;
    }
  }
  records.resize(n);
  return std::move(records);
}

// ---------------------------------------------------------------------------
// Reward signals

// Per-record log-likelihoods under h, fanned out over workers.
inline std::vector<double> score_records(scoring::ScorerBackend& backend,
                                         const scoring::HypothesisSet& h,
                                         const std::vector<env::TransitionRecord>& records,
                                         int workers = 1) {
  std::vector<double> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    auto bundle = prompts::build_statistician_prompt(h, records[i].state_text,
                                                     records[i].action_text,
                                                     records[i].change_text);
    out[i] = backend.score(bundle).total_logprob;
  });
  return out;
}

// Surprisal: r = -log P(s'|s,a,H). Non-negative.
inline double reward_logp(scoring::ScorerBackend& backend, const scoring::HypothesisSet& h,
                          const env::TransitionRecord& record) {
  auto bundle = prompts::build_statistician_prompt(h, record.state_text, record.action_text,
                                                   record.change_text);
  return -backend.score(bundle).total_logprob;
}

// Absolute learning progress between consecutive hypothesis sets; the
// absolute value tracks forgetting as well as progress.
inline double reward_alp(scoring::ScorerBackend& backend, const scoring::HypothesisSet& h_prev,
                         const scoring::HypothesisSet& h_cur,
                         const env::TransitionRecord& record) {
  return std::abs(-reward_logp(backend, h_prev, record) + reward_logp(backend, h_cur, record));
}

struct TypeStats {
  std::array<double, env::kNumTransitionTypes> m{};  // moving-average ALP per type
  double alpha = 0.9;
};

inline void to_json(nlohmann::json& j, const TypeStats& s) {
  j = nlohmann::json{{"alpha", s.alpha}, {"m", s.m}};
}
inline void from_json(const nlohmann::json& j, TypeStats& s) {
  s.alpha = j.at("alpha").get<double>();
  auto m = j.at("m").get<std::vector<double>>();
  if (m.size() != s.m.size()) throw std::invalid_argument("TypeStats: bad m length");
  std::copy(m.begin(), m.end(), s.m.begin());
}

struct AlpexpResult {
  std::vector<double> rewards;
  TypeStats stats;
};

// Per record tau: r = alpha * m[type(tau)] + (1-alpha) * alp(tau), using the
// moving averages from before this batch; afterwards each present type's
// average is pulled toward its batch mean. Absent types keep their average.
inline AlpexpResult reward_alpexp(const std::vector<env::TransitionRecord>& records,
                                  const std::vector<double>& per_record_alp, TypeStats stats) {
  if (records.size() != per_record_alp.size())
    throw std::invalid_argument("reward_alpexp: records/alp size mismatch");
  const double a = stats.alpha;
  AlpexpResult out;
  out.rewards.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.rewards[i] = a * stats.m[static_cast<int>(records[i].ttype)] + (1.0 - a) * per_record_alp[i];
  }
  std::array<double, env::kNumTransitionTypes> sum{};
  std::array<int, env::kNumTransitionTypes> count{};
  for (std::size_t i = 0; i < records.size(); ++i) {
    sum[static_cast<int>(records[i].ttype)] += per_record_alp[i];
    ++count[static_cast<int>(records[i].ttype)];
  }
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    if (count[t] == 0) continue;
    stats.m[t] = a * stats.m[t] + (1.0 - a) * (sum[t] / count[t]);
  }
  out.stats = stats;
  return out;
}

inline std::array<int, env::kNumTransitionTypes> type_histogram(
    const std::vector<env::TransitionRecord>& records) {
  std::array<int, env::kNumTransitionTypes> h{};
  for (const auto& r : records) ++h[static_cast<int>(r.ttype)];
  return h;
}

}  // namespace worldlab::experimenter

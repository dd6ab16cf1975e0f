#pragma once

// Prompt templates and builders for the two LLM roles: the forward model
// that scores "the change" as a continuation, and the theory generator that
// proposes rule sets from collected trajectories.
//
// The fixed template text below is load-bearing: scores are only comparable
// across runs that used identical bytes, so the wording — including the
// intentional spellings "porato" and "ship" — must not be edited. Bump
// kTemplateVersion for any change.

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "worldlab/env.hpp"
#include "worldlab/scoring.hpp"

namespace worldlab::prompts {

inline constexpr int kTemplateVersion = 1;

inline constexpr std::string_view kSystemPrompt =
    "You like doing a lot of puzzles. Please answer with a brief answer and be as "
    "precise as you can.";

inline constexpr std::string_view kEnvIntro =
    "You are in an environment that contains multiple objects. It can contain water, "
    "plant seeds(carrot, porato, beet, berry and pea seeds), small herbivores(pig, cow "
    "and ship) and large herbivores(elephant, giraffe, rhinoceros). You can move "
    "objects, like water, plants or herbivores and release them on another object to "
    "make them interact and transform into a new object.";

inline constexpr std::string_view kKnowThat = " You know that:\n";
inline constexpr std::string_view kObjective =
    "\nYour objective is to predict the next change in the environment given the state "
    "of the environment and the action taken.\n";
inline constexpr std::string_view kLastState = "The last state was:\n";
inline constexpr std::string_view kLastAction = "The last action was:\n";
inline constexpr std::string_view kTheChangeIs = "The change is:";

inline constexpr std::string_view kExperiencesWere = " Your previous experiences were:\n";
inline constexpr std::string_view kFindHypotheses =
    "\nCan you find a set of easily understandable and concise hypotheses to predict "
    "how the environment will change based on these trajectories? You can take "
    "inspiration from the previous rules:\n";
inline constexpr std::string_view kFailedMost =
    "\nYou also know that the previous set of rules failed the most on those "
    "trajectories:\n";
inline constexpr std::string_view kAnswerWith = "\nAnswer with just the hypothesis.";
inline constexpr std::string_view kNoneYet = "None yet.";

// Forward-model prompt. With an empty hypothesis set the "You know that:"
// clause and the hypothesis block are omitted entirely (baseline prompt).
inline scoring::PromptBundle build_statistician_prompt(const scoring::HypothesisSet& h,
                                                       const std::string& state_text,
                                                       const std::string& action_text,
                                                       const std::string& change_text) {
  scoring::PromptBundle b;
  b.system = std::string(kSystemPrompt);
  b.user.reserve(kEnvIntro.size() + h.text.size() + state_text.size() + action_text.size() + 160);
  b.user += kEnvIntro;
  if (!h.empty()) {
    b.user += kKnowThat;
    b.user += h.text;
  }
  b.user += kObjective;
  b.user += kLastState;
  b.user += state_text;
  b.user += "\n";
  b.user += kLastAction;
  b.user += action_text;
  b.user += "\n";
  b.user += kTheChangeIs;
  b.target = change_text;
  return b;
}

inline std::string render_transition_block(const env::TransitionRecord& r) {
  return "State: " + r.state_text + "\nAction: " + r.action_text + "\nChange: " + r.change_text;
}

inline std::string render_transition_blocks(const std::vector<env::TransitionRecord>& records) {
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) out += "\n\n";
    out += render_transition_block(records[i]);
  }
  return out;
}

// Context-budget subsampling: drop exact duplicate (state, action, change)
// triples, then keep up to `budget` records allocated across transition
// types proportionally to their frequency (largest remainder, at least one
// per present type). Within a type the most recent records win; the result
// keeps collection order. Deterministic.
inline std::vector<env::TransitionRecord> subsample_for_context(
    const std::vector<env::TransitionRecord>& records, std::size_t budget) {
  std::vector<std::size_t> kept;
  {
    std::vector<std::array<const std::string*, 3>> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      bool dup = std::any_of(seen.begin(), seen.end(), [&](const auto& k) {
        return *k[0] == r.state_text && *k[1] == r.action_text && *k[2] == r.change_text;
      });
      if (dup) continue;
      seen.push_back({&r.state_text, &r.action_text, &r.change_text});
      kept.push_back(i);
    }
  }
  if (kept.size() <= budget || budget == 0) {
    std::vector<env::TransitionRecord> out;
    out.reserve(kept.size());
    for (std::size_t i : kept) out.push_back(records[i]);
    return out;
  }

  std::array<std::vector<std::size_t>, env::kNumTransitionTypes> by_type;
  for (std::size_t i : kept) by_type[static_cast<int>(records[i].ttype)].push_back(i);

  const double total = static_cast<double>(kept.size());
  std::array<std::size_t, env::kNumTransitionTypes> alloc{};
  std::array<double, env::kNumTransitionTypes> frac{};
  std::size_t used = 0;
  int present = 0;
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    if (by_type[t].empty()) continue;
    ++present;
    double share = static_cast<double>(budget) * static_cast<double>(by_type[t].size()) / total;
    alloc[t] = std::max<std::size_t>(1, static_cast<std::size_t>(share));
    alloc[t] = std::min(alloc[t], by_type[t].size());
    frac[t] = share - static_cast<double>(alloc[t]);
    used += alloc[t];
  }
  if (budget < static_cast<std::size_t>(present)) {
    // Degenerate budget; keep one of each of the first `budget` present types.
    used = 0;
    for (int t = 0; t < env::kNumTransitionTypes; ++t) {
      alloc[t] = (!by_type[t].empty() && used < budget) ? 1 : 0;
      used += alloc[t];
    }
  }
  while (used < budget) {  // hand out remainders, largest fraction first
    int best = -1;
    for (int t = 0; t < env::kNumTransitionTypes; ++t) {
      if (by_type[t].empty() || alloc[t] >= by_type[t].size()) continue;
      if (best < 0 || frac[t] > frac[best]) best = t;
    }
    if (best < 0) break;
    ++alloc[best];
    frac[best] -= 1.0;
    ++used;
  }
  while (used > budget) {  // reclaim, biggest allocation first, floor of 1
    int best = -1;
    for (int t = 0; t < env::kNumTransitionTypes; ++t) {
      if (alloc[t] <= 1) continue;
      if (best < 0 || alloc[t] > alloc[best]) best = t;
    }
    if (best < 0) break;
    --alloc[best];
    --used;
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(budget);
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    const auto& idxs = by_type[t];
    for (std::size_t j = idxs.size() - alloc[t]; j < idxs.size(); ++j) chosen.push_back(idxs[j]);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<env::TransitionRecord> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(records[i]);
  return out;
}

// Theory-generator prompt: collected trajectories (after context subsampling),
// the previously accepted rules, and the records they scored worst on.
inline scoring::PromptBundle build_scientist_prompt(
    const std::vector<env::TransitionRecord>& trajectories, const scoring::HypothesisSet& prev,
    const std::vector<env::TransitionRecord>& worst, std::size_t context_budget = 30) {
  scoring::PromptBundle b;
  b.system = std::string(kSystemPrompt);
  b.user += kEnvIntro;
  b.user += kExperiencesWere;
  b.user += render_transition_blocks(subsample_for_context(trajectories, context_budget));
  b.user += kFindHypotheses;
  b.user += prev.empty() ? std::string(kNoneYet) : prev.text;
  b.user += kFailedMost;
  b.user += worst.empty() ? std::string(kNoneYet) : render_transition_blocks(worst);
  b.user += kAnswerWith;
  b.target.clear();
  return b;
}

}  // namespace worldlab::prompts

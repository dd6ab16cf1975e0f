#pragma once

// Deterministic stand-in for the language model. The scorer re-simulates the
// transition described by the prompt and applies a closed-form score:
//
//   true change,   covered type:  -1.0
//   true change, uncovered type:  -(4.0 + difficulty)   difficulty 0..5
//   any other candidate:         -12.0
//
// "Covered" means the hypothesis text contains every keyword of the type's
// canonical rule. Difficulty rises along Standing < Holding1 < Holding2 <
// GrowPlant < GrowSH < GrowBH, so longer crafting chains look harder to
// predict, and adding a covering rule always raises the true-change score by
// exactly the type's bonus. The generator emits the canonical rule sentence
// of each transition type present in the prompt's trajectories independently
// with probability 0.7 under the call's seed.

#include <array>
#include <cctype>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "worldlab/env.hpp"
#include "worldlab/rng.hpp"
#include "worldlab/scoring.hpp"
#include "worldlab/text.hpp"

namespace worldlab::scoring {

inline constexpr double kCoveredScore = -1.0;
inline constexpr double kUncoveredBase = -4.0;
inline constexpr double kWrongCandidateScore = -12.0;
inline constexpr double kRuleInclusionProb = 0.7;

inline double type_difficulty(env::TransitionType t) {
  return static_cast<double>(static_cast<int>(t));
}

struct CanonicalRule {
  env::TransitionType type;
  std::string_view sentence;
  std::vector<std::string_view> keywords;
};

inline const std::array<CanonicalRule, env::kNumTransitionTypes>& canonical_rules() {
  static const std::array<CanonicalRule, env::kNumTransitionTypes> rules = {{
      {env::TransitionType::Standing,
       "Going to an object makes you stand on it.",
       {"go", "stand"}},
      {env::TransitionType::Holding1,
       "Picking up an object puts it in your inventory.",
       {"pick", "inventory"}},
      {env::TransitionType::Holding2,
       "Picking up another object fills the second inventory slot.",
       {"pick", "inventory", "second"}},
      {env::TransitionType::GrowPlant,
       "Releasing water on a seed transforms it into a grown plant.",
       {"water", "seed", "transform"}},
      {env::TransitionType::GrowSH,
       "Releasing a grown plant on a baby small herbivore transforms it into a grown "
       "small herbivore.",
       {"plant", "small herbivore", "transform"}},
      {env::TransitionType::GrowBH,
       "Releasing two grown plants on a baby big herbivore transforms it into a grown "
       "big herbivore.",
       {"two", "plant", "big herbivore", "transform"}},
  }};
  return rules;
}

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Slice of `text` strictly between `begin_mark` and `end_mark` (or end).
inline std::optional<std::string_view> between(std::string_view text, std::string_view begin_mark,
                                               std::string_view end_mark) {
  std::size_t b = text.find(begin_mark);
  if (b == std::string_view::npos) return std::nullopt;
  b += begin_mark.size();
  std::size_t e = end_mark.empty() ? text.size() : text.find(end_mark, b);
  if (e == std::string_view::npos) return std::nullopt;
  return text.substr(b, e - b);
}

inline int word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::string w;
  int n = 0;
  while (in >> w) ++n;
  return n;
}

}  // namespace detail

// Case-insensitive "contains every keyword of the type's canonical rule".
inline bool hypothesis_covers(std::string_view hypothesis, env::TransitionType t) {
  if (hypothesis.empty()) return false;
  const std::string h = detail::lowercase(hypothesis);
  for (std::string_view kw : canonical_rules()[static_cast<int>(t)].keywords) {
    if (h.find(detail::lowercase(kw)) == std::string::npos) return false;
  }
  return true;
}

// Fields of a forward-model prompt, recovered from the rendered user text.
struct StatisticianPromptView {
  std::string hypothesis;  // empty when the prompt had no hypothesis block
  std::string state_text;
  std::string action_text;
};

inline std::optional<StatisticianPromptView> parse_statistician_user(std::string_view user) {
  StatisticianPromptView v;
  if (auto h = detail::between(user, "You know that:\n", "\nYour objective is to predict"))
    v.hypothesis = std::string(*h);
  auto state = detail::between(user, "The last state was:\n", "\nThe last action was:\n");
  if (!state) return std::nullopt;
  auto action = detail::between(user, "The last action was:\n", "\nThe change is:");
  if (!action) return std::nullopt;
  v.state_text = std::string(*state);
  v.action_text = std::string(*action);
  return v;
}

// Re-simulates the prompt's (state, action) and returns the change the
// environment would actually produce, rendered in the prompt's style.
struct TrueChange {
  std::string change_text;
  env::TransitionType ttype;
};

inline TrueChange simulate_true_change(const std::string& state_text,
                                       const std::string& action_text,
                                       const env::EnvOptions& opt = {}) {
  env::RenderStyle style = env::RenderStyle::Standard;
  auto state = env::parse_state_text(state_text, &style);
  if (!state) throw BackendError("synthetic scorer: unparseable state text: " + state_text);
  auto action = env::parse_action_text(action_text);
  if (!action) throw BackendError("synthetic scorer: unparseable action text: " + action_text);
  try {
    auto [next, rec] = env::step(*state, *action, style, opt);
    return {rec.change_text, rec.ttype};
  } catch (const env::IllegalActionError& e) {
    throw BackendError(std::string("synthetic scorer: illegal action in prompt: ") + e.what());
  }
}

class SyntheticBackend final : public ScorerBackend {
 public:
  explicit SyntheticBackend(env::EnvOptions opt = {}) : opt_(opt) {}

  ScoredContinuation score(const PromptBundle& bundle) override {
    if (bundle.target.empty())
      throw std::invalid_argument("score() requires a nonempty target");
    auto view = parse_statistician_user(bundle.user);
    if (!view) throw BackendError("synthetic scorer: unrecognized prompt layout");
    TrueChange truth = simulate_true_change(view->state_text, view->action_text, opt_);
    const int tokens = std::max(1, detail::word_count(bundle.target));
    if (bundle.target != truth.change_text)
      return make_scored(kWrongCandidateScore, tokens);
    if (hypothesis_covers(view->hypothesis, truth.ttype))
      return make_scored(kCoveredScore, tokens);
    return make_scored(kUncoveredBase - type_difficulty(truth.ttype), tokens);
  }

  std::string generate(const PromptBundle& bundle, const GenerationParams& params) override {
    if (!bundle.target.empty())
      throw std::invalid_argument("generate() requires an empty target");
    auto trajectories =
        detail::between(bundle.user, "Your previous experiences were:\n",
                        "\nCan you find a set of easily understandable");
    if (!trajectories) throw BackendError("synthetic generator: unrecognized prompt layout");

    std::array<bool, env::kNumTransitionTypes> present{};
    std::string_view rest = *trajectories;
    while (!rest.empty()) {
      std::size_t eol = rest.find('\n');
      std::string_view line = rest.substr(0, eol);
      rest = eol == std::string_view::npos ? std::string_view{} : rest.substr(eol + 1);
      if (line.substr(0, 8) != "Change: ") continue;
      if (auto t = env::classify_change_text(line.substr(8)))
        present[static_cast<int>(*t)] = true;
    }

    Rng rng = make_rng(params.seed);
    std::string out;
    int words = 0;
    for (const CanonicalRule& rule : canonical_rules()) {
      if (!present[static_cast<int>(rule.type)]) continue;
      if (uniform01(rng) >= kRuleInclusionProb) continue;
      for (std::string_view w : split_words(rule.sentence)) {
        if (words >= params.max_tokens) return out;
        if (!out.empty()) out += ' ';
        out += w;
        ++words;
      }
    }
    return out;
  }

 private:
  static std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && s[i] == ' ') ++i;
      std::size_t j = i;
      while (j < s.size() && s[j] != ' ') ++j;
      if (j > i) out.push_back(s.substr(i, j - i));
      i = j;
    }
    return out;
  }

  env::EnvOptions opt_;
};

}  // namespace worldlab::scoring

#pragma once

// Metropolis refinement of the hypothesis set against collected evidence.
// A proposal H' drawn from the generator replaces the current H when
// log(u) < score(H') - score(H), u ~ U(0,1): a symmetric-proposal Metropolis
// chain with a uniform prior, accepted on likelihood ratio alone. One chain,
// never reset.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "worldlab/env.hpp"
#include "worldlab/parallel.hpp"
#include "worldlab/prompts.hpp"
#include "worldlab/rng.hpp"
#include "worldlab/scoring.hpp"

namespace worldlab::scientist {

struct MetropolisState {
  scoring::HypothesisSet current;
  double current_score = 0.0;  // sum of per-record log-likelihoods on D_t
};

struct ProposalRecord {
  int iteration = 0;
  int step = 0;
  std::string candidate_text;
  std::optional<double> candidate_score;  // nullopt: generation failed / empty
  std::optional<double> u;
  double score_before = 0.0;
  bool accepted = false;
};

inline void to_json(nlohmann::json& j, const ProposalRecord& p) {
  j = nlohmann::json{{"iteration", p.iteration},
                     {"step", p.step},
                     {"candidate_text", p.candidate_text},
                     {"candidate_score", p.candidate_score ? nlohmann::json(*p.candidate_score)
                                                           : nlohmann::json(nullptr)},
                     {"u", p.u ? nlohmann::json(*p.u) : nlohmann::json(nullptr)},
                     {"score_before", p.score_before},
                     {"accepted", p.accepted}};
}

inline void from_json(const nlohmann::json& j, ProposalRecord& p) {
  p.iteration = j.at("iteration").get<int>();
  p.step = j.at("step").get<int>();
  p.candidate_text = j.at("candidate_text").get<std::string>();
  p.candidate_score = j.at("candidate_score").is_null()
                          ? std::nullopt
                          : std::optional(j.at("candidate_score").get<double>());
  p.u = j.at("u").is_null() ? std::nullopt : std::optional(j.at("u").get<double>());
  p.score_before = j.at("score_before").get<double>();
  p.accepted = j.at("accepted").get<bool>();
}

// The accept/reject rule, kept as a single expression so it can be checked
// bit-for-bit against an independent oracle.
inline bool accept_proposal(double delta, double u) { return std::log(u) < delta; }

// Memoizes per-(hypothesis text, record) scores for one evidence set. The
// chain re-scores its unchanged current H every step; the cache makes that
// free. Scoring of uncached records fans out across `workers` threads.
class CachedScorer {
 public:
  CachedScorer(scoring::ScorerBackend& backend, const std::vector<env::TransitionRecord>& data,
               int workers = 1)
      : backend_(backend), data_(data), workers_(workers) {}

  const std::vector<env::TransitionRecord>& data() const { return data_; }

  double record_score(const scoring::HypothesisSet& h, std::size_t index) {
    return scores_for(h)[index];
  }

  double total(const scoring::HypothesisSet& h) {
    const auto& s = scores_for(h);
    double sum = 0.0;
    for (double v : s) sum += v;
    return sum;
  }

 private:
  const std::vector<double>& scores_for(const scoring::HypothesisSet& h) {
    auto [it, inserted] = cache_.try_emplace(h.text);
    if (!inserted) return it->second;
    auto& scores = it->second;
    scores.resize(data_.size());
    parallel_for(data_.size(), workers_, [&](std::size_t i) {
      auto bundle = prompts::build_statistician_prompt(h, data_[i].state_text,
                                                       data_[i].action_text, data_[i].change_text);
      scores[i] = backend_.score(bundle).total_logprob;
    });
    return scores;
  }

  scoring::ScorerBackend& backend_;
  const std::vector<env::TransitionRecord>& data_;
  int workers_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

// Sum over `data` of the forward model's log-likelihood under h.
// Order-independent; partial sums are never observable.
inline double evaluate_hypotheses(scoring::ScorerBackend& backend,
                                  const scoring::HypothesisSet& h,
                                  const std::vector<env::TransitionRecord>& data,
                                  int workers = 1) {
  if (data.empty()) throw std::invalid_argument("evaluate_hypotheses: empty data");
  CachedScorer scorer(backend, data, workers);
  return scorer.total(h);
}

// k records with the lowest per-record score under h; ties keep collection
// order. k larger than the data clamps.
inline std::vector<env::TransitionRecord> select_worst(scoring::ScorerBackend& backend,
                                                       const scoring::HypothesisSet& h,
                                                       const std::vector<env::TransitionRecord>& data,
                                                       std::size_t k, CachedScorer* cache = nullptr) {
  if (k == 0) throw std::invalid_argument("select_worst: k must be >= 1");
  std::optional<CachedScorer> own;
  if (!cache) {
    own.emplace(backend, data);
    cache = &*own;
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cache->record_score(h, a) < cache->record_score(h, b);
  });
  std::vector<env::TransitionRecord> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.push_back(data[order[i]]);
  return out;
}

struct RefineOptions {
  int n_steps = 5;
  std::size_t worst_k = 5;
  std::size_t context_budget = 30;
  scoring::GenerationParams generation;  // seed is drawn per call from the chain rng
  int workers = 1;
};

class Refiner {
 public:
  Refiner(scoring::ScorerBackend& statistician, scoring::ScorerBackend& scientist,
          RefineOptions options = {})
      : statistician_(statistician), scientist_(scientist), options_(options) {}

  // One proposal: generate, score, accept or reject.
  std::pair<MetropolisState, ProposalRecord> step(const MetropolisState& state,
                                                  CachedScorer& cache, Rng& rng, int iteration,
                                                  int step_index) {
    ProposalRecord rec;
    rec.iteration = iteration;
    rec.step = step_index;
    rec.score_before = state.current_score;

    scoring::GenerationParams params = options_.generation;
    params.seed = rng();

    std::string text;
    try {
      auto worst =
          select_worst(statistician_, state.current, cache.data(), options_.worst_k, &cache);
      auto bundle = prompts::build_scientist_prompt(cache.data(), state.current, worst,
                                                    options_.context_budget);
      text = scientist_.generate(bundle, params);
    } catch (const scoring::BackendError&) {
      return {state, rec};  // logged as rejected, chain untouched
    }
    rec.candidate_text = text;
    if (text.empty()) return {state, rec};

    scoring::HypothesisSet candidate{text, iteration, step_index};
    rec.candidate_score = cache.total(candidate);
    rec.u = uniform01(rng);
    rec.accepted = accept_proposal(*rec.candidate_score - state.current_score, *rec.u);
    if (!rec.accepted) return {state, rec};
    return {MetropolisState{candidate, *rec.candidate_score}, rec};
  }

  // n_steps proposals threaded through the chain; the final state is the
  // iteration's accepted hypothesis set.
  std::pair<MetropolisState, std::vector<ProposalRecord>> refine(
      scoring::HypothesisSet start, const std::vector<env::TransitionRecord>& data, Rng& rng,
      int iteration) {
    if (options_.n_steps < 1) throw std::invalid_argument("refine: n_steps must be >= 1");
    if (data.empty()) throw std::invalid_argument("refine: empty data");
    CachedScorer cache(statistician_, data, options_.workers);
    MetropolisState state{std::move(start), 0.0};
    state.current_score = cache.total(state.current);

    std::vector<ProposalRecord> proposals;
    proposals.reserve(static_cast<std::size_t>(options_.n_steps));
    for (int i = 0; i < options_.n_steps; ++i) {
      auto [next, rec] = step(state, cache, rng, iteration, i);
      proposals.push_back(std::move(rec));
      state = std::move(next);
    }
    return {state, proposals};
  }

 private:
  scoring::ScorerBackend& statistician_;
  scoring::ScorerBackend& scientist_;
  RefineOptions options_;
};

}  // namespace worldlab::scientist

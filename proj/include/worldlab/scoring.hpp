#pragma once

// Sequence scorer/generator abstraction. Everything that talks to a language
// model — scoring a continuation or free-form generation — goes through
// ScorerBackend, so the whole loop runs against either a live endpoint or the
// deterministic synthetic backend.

#include <cstdint>
#include <stdexcept>
#include <string>

namespace worldlab::scoring {

struct PromptBundle {
  std::string system;
  std::string user;
  std::string target;  // continuation to score; empty for generation

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

struct ScoredContinuation {
  double total_logprob = 0.0;  // sum over continuation tokens, nats; <= 0
  int token_count = 1;         // >= 1
};

inline ScoredContinuation make_scored(double total_logprob, int token_count) {
  if (token_count < 1) throw std::invalid_argument("token_count must be >= 1");
  // Endpoints occasionally report tiny positive sums through rounding.
  return {total_logprob > 0.0 ? 0.0 : total_logprob, token_count};
}

// The natural-language theory block injected into the forward-model prompt;
// the quantity the whole framework optimizes. Empty text is the
// no-hypotheses baseline.
struct HypothesisSet {
  std::string text;
  int created_iteration = 0;
  int created_step = 0;

  bool empty() const { return text.empty(); }

  friend bool operator==(const HypothesisSet&, const HypothesisSet&) = default;
};

struct GenerationParams {
  int max_tokens = 200;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;

  // Summed log-probability of bundle.target following (system, user).
  // Deterministic for identical inputs; safe to call concurrently.
  virtual ScoredContinuation score(const PromptBundle& bundle) = 0;

  // Free-form continuation of (system, user). Deterministic given
  // params.seed on the synthetic backend; best-effort seeded over HTTP.
  virtual std::string generate(const PromptBundle& bundle, const GenerationParams& params) = 0;
};

}  // namespace worldlab::scoring

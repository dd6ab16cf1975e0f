#pragma once

// Scorer backend for any OpenAI-compatible completions endpoint that can
// return per-token log-probabilities for the prompt (echo mode). Scoring
// sends chat-templated prompt + target as one completion with max_tokens 0
// and sums the token logprobs whose text offset falls inside the target.
//
// The endpoint must tokenize prompt and target independently at their
// boundary for the offset cut to be exact; ending the chat template with a
// newline makes common tokenizers break there.

#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "worldlab/scoring.hpp"

namespace worldlab::scoring {

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string completions_path = "/v1/completions";
  std::string model;
  std::string api_key_env = "WORLDLAB_API_KEY";  // name of the env var, not the key

  // Applied to every prompt; {system} and {user} are substituted verbatim.
  std::string chat_template = "{system}\n\n{user}\n";

  int max_retries = 3;
  double backoff_initial_s = 0.5;
  int max_in_flight = 4;
  int timeout_s = 120;
  int logprobs_value = 0;  // some dialects want 1 here

  // Field names, overridable to bridge OpenAI-compatible dialects.
  struct Fields {
    std::string model = "model";
    std::string prompt = "prompt";
    std::string max_tokens = "max_tokens";
    std::string temperature = "temperature";
    std::string logprobs = "logprobs";
    std::string echo = "echo";
    std::string seed = "seed";
    std::string choices = "choices";
    std::string text = "text";
    std::string resp_logprobs = "logprobs";
    std::string token_logprobs = "token_logprobs";
    std::string text_offset = "text_offset";
  } fields;
};

class HttpBackend final : public ScorerBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg)
      : cfg_(std::move(cfg)), inflight_(std::max(1, cfg_.max_in_flight)) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  ScoredContinuation score(const PromptBundle& bundle) override {
    if (bundle.target.empty())
      throw std::invalid_argument("score() requires a nonempty target");
    const std::string prompt = render_template(bundle);
    const std::string full = prompt + bundle.target;

    nlohmann::json body;
    body[cfg_.fields.model] = cfg_.model;
    body[cfg_.fields.prompt] = full;
    body[cfg_.fields.max_tokens] = 0;
    body[cfg_.fields.echo] = true;
    body[cfg_.fields.logprobs] = cfg_.logprobs_value;

    nlohmann::json response = post_with_retries(body, [&](const nlohmann::json& r) {
      return extract_score(r, prompt.size());
    });
    return extract_score(response, prompt.size());
  }

  std::string generate(const PromptBundle& bundle, const GenerationParams& params) override {
    if (!bundle.target.empty())
      throw std::invalid_argument("generate() requires an empty target");
    nlohmann::json body;
    body[cfg_.fields.model] = cfg_.model;
    body[cfg_.fields.prompt] = render_template(bundle);
    body[cfg_.fields.max_tokens] = params.max_tokens;
    body[cfg_.fields.temperature] = params.temperature;
    body[cfg_.fields.seed] = params.seed;  // best effort; dialects may ignore it

    nlohmann::json response = post_with_retries(body, [&](const nlohmann::json& r) {
      extract_text(r);
      return ScoredContinuation{};
    });
    return extract_text(response);
  }

  const HttpBackendConfig& config() const { return cfg_; }

 private:
  std::string render_template(const PromptBundle& bundle) const {
    std::string out = cfg_.chat_template;
    auto substitute = [&](const std::string& slot, const std::string& value) {
      std::size_t pos = out.find(slot);
      if (pos != std::string::npos) out.replace(pos, slot.size(), value);
    };
    substitute("{system}", bundle.system);
    substitute("{user}", bundle.user);
    return out;
  }

  struct InFlightSlot {
    std::counting_semaphore<>& sem;
    explicit InFlightSlot(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
    ~InFlightSlot() { sem.release(); }
  };

  // Issues the request up to max_retries times with exponential backoff.
  // `validate` must throw BackendError on responses that parse but are
  // unusable (e.g. missing logprobs); those retry like transport errors.
  // Retries are pure re-issues; nothing is mutated on failure.
  template <typename Validate>
  nlohmann::json post_with_retries(const nlohmann::json& body, Validate&& validate) {
    std::string last_error;
    for (int attempt = 0; attempt < cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        auto delay = std::chrono::duration<double>(cfg_.backoff_initial_s * (1 << (attempt - 1)));
        std::this_thread::sleep_for(delay);
      }
      httplib::Result res = [&] {
        InFlightSlot slot(inflight_);
        httplib::Client client(cfg_.base_url);
        client.set_read_timeout(cfg_.timeout_s, 0);
        client.set_connection_timeout(10, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        return client.Post(cfg_.completions_path, headers, body.dump(), "application/json");
      }();
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        continue;
      }
      nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) {
        last_error = "response is not JSON";
        continue;
      }
      try {
        validate(parsed);
      } catch (const BackendError& e) {
        last_error = e.what();
        continue;
      }
      return parsed;
    }
    throw BackendError("endpoint failed after " + std::to_string(cfg_.max_retries) +
                       " attempts: " + last_error);
  }

  ScoredContinuation extract_score(const nlohmann::json& response,
                                   std::size_t prompt_bytes) const {
    const nlohmann::json* lp = nullptr;
    try {
      lp = &response.at(cfg_.fields.choices).at(0).at(cfg_.fields.resp_logprobs);
    } catch (const nlohmann::json::exception&) {
      throw BackendError("response carries no logprobs field");
    }
    if (lp->is_null()) throw BackendError("response carries null logprobs");
    const auto& token_logprobs = lp->at(cfg_.fields.token_logprobs);
    const auto& text_offset = lp->at(cfg_.fields.text_offset);
    if (!token_logprobs.is_array() || !text_offset.is_array() ||
        token_logprobs.size() != text_offset.size())
      throw BackendError("malformed logprobs arrays");

    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < token_logprobs.size(); ++i) {
      if (text_offset[i].get<std::size_t>() < prompt_bytes) continue;
      if (token_logprobs[i].is_null())
        throw BackendError("null logprob inside the scored continuation");
      total += token_logprobs[i].get<double>();
      ++count;
    }
    if (count == 0) throw BackendError("no tokens fell inside the scored continuation");
    return make_scored(total, count);
  }

  std::string extract_text(const nlohmann::json& response) const {
    try {
      return response.at(cfg_.fields.choices).at(0).at(cfg_.fields.text).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw BackendError("response carries no generated text");
    }
  }

  HttpBackendConfig cfg_;
  std::string api_key_;
  std::counting_semaphore<> inflight_;
};

}  // namespace worldlab::scoring

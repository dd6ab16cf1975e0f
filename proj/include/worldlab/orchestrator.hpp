#pragma once

// The outer loop: alternate evidence collection and hypothesis refinement
// for T iterations, with seeded reproducibility, append-only run logs and
// crash-safe resume. One run directory per (config, seed).
//
// Layout:
//   config.snapshot              frozen config + seed (JSON)
//   state.json                   last completed iteration + chain state
//   iterations.jsonl             one summary line per iteration
//   hypotheses.jsonl             every Metropolis proposal
//   hypotheses_accepted.jsonl    the accepted hypothesis set per iteration
//   transitions/t####.jsonl      evidence handed to the theory generator
//   collection_stats.csv         per-iteration collected-type histogram
//   eval/####.csv, eval/summary.csv
//   ppo/checkpoint.bin, ppo/ppo_stats.csv

#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "worldlab/env.hpp"
#include "worldlab/evalsuite.hpp"
#include "worldlab/experimenter.hpp"
#include "worldlab/http_backend.hpp"
#include "worldlab/jsonio.hpp"
#include "worldlab/policy.hpp"
#include "worldlab/prompts.hpp"
#include "worldlab/rng.hpp"
#include "worldlab/scientist.hpp"
#include "worldlab/scoring.hpp"
#include "worldlab/synthetic.hpp"
#include "worldlab/text.hpp"

namespace worldlab::orchestrator {

namespace fs = std::filesystem;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  int iterations = 400;  // T
  int n_steps = 5;       // Metropolis steps per iteration; 0 skips refinement
  int collect_n = 150;   // transitions handed to the theory generator
  int episode_len = 30;

  std::string experimenter = "o-random";
  double alpha = 0.9;  // ALPEXP retention factor
  experimenter::CurriculumSchedule curriculum;

  int n_envs = 15;
  int episodes_per_env = 8;
  rl::PpoConfig ppo;

  int eval_every = 10;
  bool eval_topk = true;
  std::uint64_t test_seed = 0;
  int retention_window = 25;

  std::size_t context_budget = 30;
  std::size_t worst_k = 5;
  scoring::GenerationParams generation;
  int replay_window = 1;  // iterations of evidence kept for the generator

  env::SceneSpec scene = env::default_scene_spec();
  env::RenderStyle style = env::RenderStyle::Standard;
  env::EnvOptions env_opts;

  std::string backend = "synthetic";
  scoring::HttpBackendConfig http;

  std::vector<std::uint64_t> seeds = {0};
  int workers = 1;
};

inline bool is_rl(const std::string& experimenter) {
  return experimenter.rfind("rl-", 0) == 0;
}

inline int rl_collect_n(const RunConfig& cfg) {
  return cfg.n_envs * cfg.episodes_per_env * cfg.episode_len;
}

inline experimenter::OracleKind oracle_kind(const std::string& name) {
  if (name == "o-random") return experimenter::OracleKind::Random;
  if (name == "o-ideal") return experimenter::OracleKind::Ideal;
  if (name == "o-curriculum") return experimenter::OracleKind::Curriculum;
  if (name == "o-hardest") return experimenter::OracleKind::Hardest;
  throw ConfigError("unknown oracle experimenter '" + name + "'");
}

inline experimenter::RewardSignal reward_signal(const std::string& name) {
  if (name == "rl-logp") return experimenter::RewardSignal::LogP;
  if (name == "rl-alp") return experimenter::RewardSignal::ALP;
  if (name == "rl-alpexp") return experimenter::RewardSignal::ALPEXP;
  throw ConfigError("unknown rl experimenter '" + name + "'");
}

inline void validate(const RunConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (cfg.n_steps < 0) throw ConfigError("n_steps must be >= 0");
  if (cfg.collect_n < 1) throw ConfigError("collect_n must be >= 1");
  if (cfg.episode_len < 1) throw ConfigError("episode_len must be >= 1");
  if (cfg.replay_window < 1) throw ConfigError("replay_window must be >= 1");
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (is_rl(cfg.experimenter)) {
    reward_signal(cfg.experimenter);
    if (rl_collect_n(cfg) < cfg.collect_n)
      throw ConfigError("rl collection (n_envs*episodes_per_env*episode_len) "
                        "must cover collect_n");
  } else {
    oracle_kind(cfg.experimenter);
  }
  if (cfg.backend != "synthetic" && cfg.backend != "http")
    throw ConfigError("backend must be 'synthetic' or 'http'");
}

// ---------------------------------------------------------------------------
// Config JSON

inline void to_json(nlohmann::json& j, const RunConfig& cfg) {
  nlohmann::json scene = nlohmann::json::array();
  for (const auto& e : cfg.scene.entries) {
    nlohmann::json entry{{"class", env::class_name(e.cls)},
                         {"stage", e.stage == env::Stage::Young ? "young" : "grown"},
                         {"count", e.count}};
    if (e.variety) entry["variety"] = *e.variety;
    scene.push_back(entry);
  }
  j = nlohmann::json{
      {"iterations", cfg.iterations},
      {"n_steps", cfg.n_steps},
      {"collect_n", cfg.collect_n},
      {"episode_len", cfg.episode_len},
      {"experimenter", cfg.experimenter},
      {"alpha", cfg.alpha},
      {"curriculum",
       {{"plant_until", cfg.curriculum.plant_until}, {"sh_until", cfg.curriculum.sh_until}}},
      {"rl",
       {{"n_envs", cfg.n_envs},
        {"episodes_per_env", cfg.episodes_per_env},
        {"rl_collect_n", rl_collect_n(cfg)},
        {"ppo",
         {{"lr", cfg.ppo.lr},
          {"gamma", cfg.ppo.gamma},
          {"gae_lambda", cfg.ppo.gae_lambda},
          {"clip_ratio", cfg.ppo.clip_ratio},
          {"vf_coef", cfg.ppo.vf_coef},
          {"ent_coef", cfg.ppo.ent_coef},
          {"max_grad_norm", cfg.ppo.max_grad_norm},
          {"epochs", cfg.ppo.epochs},
          {"minibatch_size", cfg.ppo.minibatch_size},
          {"hidden", cfg.ppo.hidden}}}}},
      {"eval",
       {{"every", cfg.eval_every},
        {"topk", cfg.eval_topk},
        {"test_seed", cfg.test_seed},
        {"retention_window", cfg.retention_window}}},
      {"scientist",
       {{"context_budget", cfg.context_budget},
        {"worst_k", cfg.worst_k},
        {"max_tokens", cfg.generation.max_tokens},
        {"temperature", cfg.generation.temperature},
        {"replay_window", cfg.replay_window}}},
      {"env",
       {{"style", cfg.style == env::RenderStyle::Standard ? "standard" : "generalization"},
        {"grasp_any", cfg.env_opts.grasp_any},
        {"max_objects", cfg.scene.max_objects},
        {"scene", scene}}},
      {"backend",
       {{"kind", cfg.backend},
        {"http",
         {{"base_url", cfg.http.base_url},
          {"completions_path", cfg.http.completions_path},
          {"model", cfg.http.model},
          {"api_key_env", cfg.http.api_key_env},
          {"chat_template", cfg.http.chat_template},
          {"max_retries", cfg.http.max_retries},
          {"backoff_initial_s", cfg.http.backoff_initial_s},
          {"max_in_flight", cfg.http.max_in_flight},
          {"timeout_s", cfg.http.timeout_s},
          {"logprobs_value", cfg.http.logprobs_value}}}}},
      {"seeds", cfg.seeds},
      {"workers", cfg.workers},
  };
}

inline void from_json(const nlohmann::json& j, RunConfig& cfg) {
  cfg = RunConfig{};
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.n_steps = j.value("n_steps", cfg.n_steps);
  cfg.collect_n = j.value("collect_n", cfg.collect_n);
  cfg.episode_len = j.value("episode_len", cfg.episode_len);
  cfg.experimenter = j.value("experimenter", cfg.experimenter);
  cfg.alpha = j.value("alpha", cfg.alpha);
  if (j.contains("curriculum")) {
    cfg.curriculum.plant_until = j["curriculum"].value("plant_until", cfg.curriculum.plant_until);
    cfg.curriculum.sh_until = j["curriculum"].value("sh_until", cfg.curriculum.sh_until);
  }
  if (j.contains("rl")) {
    const auto& r = j["rl"];
    cfg.n_envs = r.value("n_envs", cfg.n_envs);
    cfg.episodes_per_env = r.value("episodes_per_env", cfg.episodes_per_env);
    if (r.contains("ppo")) {
      const auto& p = r["ppo"];
      cfg.ppo.lr = p.value("lr", cfg.ppo.lr);
      cfg.ppo.gamma = p.value("gamma", cfg.ppo.gamma);
      cfg.ppo.gae_lambda = p.value("gae_lambda", cfg.ppo.gae_lambda);
      cfg.ppo.clip_ratio = p.value("clip_ratio", cfg.ppo.clip_ratio);
      cfg.ppo.vf_coef = p.value("vf_coef", cfg.ppo.vf_coef);
      cfg.ppo.ent_coef = p.value("ent_coef", cfg.ppo.ent_coef);
      cfg.ppo.max_grad_norm = p.value("max_grad_norm", cfg.ppo.max_grad_norm);
      cfg.ppo.epochs = p.value("epochs", cfg.ppo.epochs);
      cfg.ppo.minibatch_size = p.value("minibatch_size", cfg.ppo.minibatch_size);
      cfg.ppo.hidden = p.value("hidden", cfg.ppo.hidden);
    }
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    cfg.eval_every = e.value("every", cfg.eval_every);
    cfg.eval_topk = e.value("topk", cfg.eval_topk);
    cfg.test_seed = e.value("test_seed", cfg.test_seed);
    cfg.retention_window = e.value("retention_window", cfg.retention_window);
  }
  if (j.contains("scientist")) {
    const auto& s = j["scientist"];
    cfg.context_budget = s.value("context_budget", cfg.context_budget);
    cfg.worst_k = s.value("worst_k", cfg.worst_k);
    cfg.generation.max_tokens = s.value("max_tokens", cfg.generation.max_tokens);
    cfg.generation.temperature = s.value("temperature", cfg.generation.temperature);
    cfg.replay_window = s.value("replay_window", cfg.replay_window);
  }
  if (j.contains("env")) {
    const auto& e = j["env"];
    cfg.style = e.value("style", std::string("standard")) == "generalization"
                    ? env::RenderStyle::Generalization
                    : env::RenderStyle::Standard;
    cfg.env_opts.grasp_any = e.value("grasp_any", false);
    cfg.scene.max_objects = e.value("max_objects", cfg.scene.max_objects);
    if (e.contains("scene")) {
      cfg.scene.entries.clear();
      for (const auto& entry : e["scene"]) {
        env::SceneEntry se;
        se.cls = env::class_from_name(entry.at("class").get<std::string>());
        se.stage =
            entry.value("stage", std::string("grown")) == "young" ? env::Stage::Young
                                                                  : env::Stage::Grown;
        se.count = entry.value("count", 1);
        if (entry.contains("variety")) se.variety = entry["variety"].get<std::string>();
        cfg.scene.entries.push_back(std::move(se));
      }
    }
  }
  if (j.contains("backend")) {
    const auto& b = j["backend"];
    cfg.backend = b.value("kind", cfg.backend);
    if (b.contains("http")) {
      const auto& h = b["http"];
      cfg.http.base_url = h.value("base_url", cfg.http.base_url);
      cfg.http.completions_path = h.value("completions_path", cfg.http.completions_path);
      cfg.http.model = h.value("model", cfg.http.model);
      cfg.http.api_key_env = h.value("api_key_env", cfg.http.api_key_env);
      cfg.http.chat_template = h.value("chat_template", cfg.http.chat_template);
      cfg.http.max_retries = h.value("max_retries", cfg.http.max_retries);
      cfg.http.backoff_initial_s = h.value("backoff_initial_s", cfg.http.backoff_initial_s);
      cfg.http.max_in_flight = h.value("max_in_flight", cfg.http.max_in_flight);
      cfg.http.timeout_s = h.value("timeout_s", cfg.http.timeout_s);
      cfg.http.logprobs_value = h.value("logprobs_value", cfg.http.logprobs_value);
    }
  }
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.workers = j.value("workers", cfg.workers);
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  RunConfig cfg = j.get<RunConfig>();
  validate(cfg);
  return cfg;
}

inline std::unique_ptr<scoring::ScorerBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend == "synthetic") return std::make_unique<scoring::SyntheticBackend>(cfg.env_opts);
  return std::make_unique<scoring::HttpBackend>(cfg.http);
}

// ---------------------------------------------------------------------------
// Run directory helpers

namespace detail {

inline std::string zero_pad(int n, int width = 4) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%0*d", width, n);
  return buf;
}

inline void append_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw std::runtime_error("short write to " + path.string());
}

// Rewrites a JSONL file keeping only well-formed lines whose `iteration`
// field is <= last. Drops partially written tails after a crash.
inline void trim_jsonl(const fs::path& path, int last) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("iteration")) continue;
    if (j["iteration"].get<int>() <= last) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

// Same for a CSV with a leading header and the iteration in column one.
inline void trim_csv(const fs::path& path, int last) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  if (std::getline(in, line)) keep.push_back(line);
  while (std::getline(in, line)) {
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) continue;
    int it;
    try {
      it = std::stoi(line.substr(0, comma));
    } catch (...) {
      continue;
    }
    if (it <= last) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

inline void write_atomically(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

}  // namespace detail

// ---------------------------------------------------------------------------

class Run {
 public:
  // Fresh run into `dir` (created; must not contain a previous run).
  Run(RunConfig cfg, fs::path dir, std::uint64_t seed)
      : cfg_(std::move(cfg)), dir_(std::move(dir)), seed_(seed) {
    validate(cfg_);
    if (fs::exists(dir_ / "state.json"))
      throw ConfigError("run directory already contains a run; use resume");
    fs::create_directories(dir_ / "transitions");
    fs::create_directories(dir_ / "eval");
    if (is_rl(cfg_.experimenter)) fs::create_directories(dir_ / "ppo");

    nlohmann::json snapshot = cfg_;
    snapshot["seed"] = seed_;
    detail::write_atomically(dir_ / "config.snapshot", snapshot.dump(2) + "\n");
    detail::append_lines(dir_ / "collection_stats.csv",
                         {"iteration,Standing,Holding1,Holding2,GrowPlant,GrowSH,GrowBH,"
                          "scene_regens"});
    if (is_rl(cfg_.experimenter))
      detail::append_lines(dir_ / "ppo" / "ppo_stats.csv",
                           {"iteration,policy_loss,value_loss,entropy,approx_kl,mean_reward"});
    init_components();
    eval_snapshot(0);
    checkpoint(0);
  }

  // Continues a run from its last completed iteration, discarding any
  // partial output beyond it.
  static Run resume(const fs::path& dir) {
    std::ifstream snap(dir / "config.snapshot");
    if (!snap) throw ConfigError("no config.snapshot in " + dir.string());
    nlohmann::json j = nlohmann::json::parse(snap);
    RunConfig cfg = j.get<RunConfig>();
    std::uint64_t seed = j.at("seed").get<std::uint64_t>();

    std::ifstream state_in(dir / "state.json");
    if (!state_in) throw ConfigError("no state.json in " + dir.string() + "; cannot resume");
    nlohmann::json state = nlohmann::json::parse(state_in);

    Run run(Resuming{}, std::move(cfg), dir, seed);
    run.completed_ = state.at("iteration").get<int>();
    run.hypothesis_.text = state.at("hypothesis").at("text").get<std::string>();
    run.hypothesis_.created_iteration = state.at("hypothesis").at("created_iteration").get<int>();
    run.hypothesis_.created_step = state.at("hypothesis").at("created_step").get<int>();
    run.type_stats_ = state.at("type_stats").get<experimenter::TypeStats>();

    detail::trim_jsonl(dir / "hypotheses.jsonl", run.completed_);
    detail::trim_jsonl(dir / "hypotheses_accepted.jsonl", run.completed_);
    detail::trim_jsonl(dir / "iterations.jsonl", run.completed_);
    detail::trim_csv(dir / "collection_stats.csv", run.completed_);
    detail::trim_csv(dir / "ppo" / "ppo_stats.csv", run.completed_);
    for (const auto& entry : fs::directory_iterator(dir / "transitions")) {
      int idx = std::stoi(entry.path().stem().string().substr(1));
      if (idx > run.completed_) fs::remove(entry.path());
    }
    for (const auto& entry : fs::directory_iterator(dir / "eval")) {
      if (entry.path().filename() == "summary.csv") continue;
      int idx = std::stoi(entry.path().stem().string());
      if (idx > run.completed_) fs::remove(entry.path());
    }
    if (run.agent_ && fs::exists(dir / "ppo" / "checkpoint.bin"))
      run.agent_->load(dir / "ppo" / "checkpoint.bin");
    run.reload_replay_buffer();
    return run;
  }

  // Runs iterations until T (or `stop_after` more in this process, for
  // crash/resume testing). Writes eval/summary.csv once T is reached.
  void execute(std::optional<int> stop_after = std::nullopt) {
    int budget = stop_after.value_or(cfg_.iterations);
    while (completed_ < cfg_.iterations && budget > 0) {
      run_iteration(completed_ + 1);
      --budget;
    }
    if (completed_ == cfg_.iterations) write_summary();
  }

  const fs::path& dir() const { return dir_; }
  int completed_iterations() const { return completed_; }
  const scoring::HypothesisSet& hypothesis() const { return hypothesis_; }
  const rl::PpoAgent* agent() const { return agent_.get(); }

 private:
  struct Resuming {};
  Run(Resuming, RunConfig cfg, fs::path dir, std::uint64_t seed)
      : cfg_(std::move(cfg)), dir_(std::move(dir)), seed_(seed) {
    init_components();
  }

  void init_components() {
    backend_ = make_backend(cfg_);
    testset_ = evalsuite::build_testset(cfg_.test_seed, cfg_.scene, cfg_.env_opts);
    if (is_rl(cfg_.experimenter)) {
      agent_ = std::make_unique<rl::PpoAgent>(cfg_.ppo, derive_seed(seed_, 0x9901));
      type_stats_.alpha = cfg_.alpha;
    }
  }

  // One full iteration t in 1..T.
  void run_iteration(int t) {
    Rng rng = make_rng(derive_seed(seed_, static_cast<std::uint64_t>(t), 0x11e2));
    experimenter::CollectStats collect_stats;

    std::vector<env::TransitionRecord> collected;
    RolloutTape tape;
    if (is_rl(cfg_.experimenter)) {
      collected = rollout(t, tape);
      collect_stats.scene_regens = cfg_.n_envs * cfg_.episodes_per_env;
    } else {
      collected = experimenter::oracle_collect(oracle_kind(cfg_.experimenter), collector_config(),
                                               t - 1, cfg_.collect_n, rng, &collect_stats);
    }

    // The theory generator sees only the tail of the collection.
    std::vector<env::TransitionRecord> slice(
        collected.end() - std::min<std::size_t>(collected.size(), cfg_.collect_n),
        collected.end());

    std::vector<env::TransitionRecord> evidence;
    for (const auto& past : replay_) evidence.insert(evidence.end(), past.begin(), past.end());
    evidence.insert(evidence.end(), slice.begin(), slice.end());

    scoring::HypothesisSet h_prev = hypothesis_;
    std::vector<scientist::ProposalRecord> proposals;
    std::optional<double> accepted_score;
    if (cfg_.n_steps > 0) {
      scientist::RefineOptions opts;
      opts.n_steps = cfg_.n_steps;
      opts.worst_k = cfg_.worst_k;
      opts.context_budget = cfg_.context_budget;
      opts.generation = cfg_.generation;
      opts.workers = cfg_.workers;
      scientist::Refiner refiner(*backend_, *backend_, opts);
      auto [state, recs] = refiner.refine(hypothesis_, evidence, rng, t);
      for (auto& p : recs) proposals.push_back(std::move(p));
      hypothesis_ = state.current;
      accepted_score = state.current_score;
    }

    rl::UpdateStats ppo_stats;
    double mean_reward = 0.0;
    if (is_rl(cfg_.experimenter)) {
      mean_reward = train_policy(collected, tape, h_prev, rng, ppo_stats);
    }

    persist_iteration(t, collected, slice, proposals, accepted_score, collect_stats, ppo_stats,
                      mean_reward);

    if (cfg_.replay_window > 1) {
      replay_.push_back(std::move(slice));
      while (static_cast<int>(replay_.size()) >= cfg_.replay_window) replay_.pop_front();
    }

    completed_ = t;
    bool eval_due = t % cfg_.eval_every == 0 || t == cfg_.iterations;
    if (eval_due) eval_snapshot(t);
    checkpoint(t);
  }

  experimenter::CollectorConfig collector_config() const {
    experimenter::CollectorConfig c;
    c.scene = cfg_.scene;
    c.style = cfg_.style;
    c.env_opts = cfg_.env_opts;
    c.episode_len = cfg_.episode_len;
    c.curriculum = cfg_.curriculum;
    return c;
  }

  // Per-step policy data recorded during collection, per environment.
  struct RolloutTape {
    std::vector<std::vector<std::array<double, rl::kObsDim>>> obs;
    std::vector<std::vector<std::array<bool, rl::kNumActions>>> masks;
    std::vector<std::vector<int>> actions;
    std::vector<std::vector<double>> logprobs;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<env::TransitionRecord>> records;
  };

  // Steps n_envs environments for episodes_per_env episodes each and returns
  // the records in time-major order (the tail is the freshest evidence).
  std::vector<env::TransitionRecord> rollout(int t, RolloutTape& tape) {
    const int steps_per_env = cfg_.episodes_per_env * cfg_.episode_len;
    tape.obs.assign(cfg_.n_envs, {});
    tape.masks.assign(cfg_.n_envs, {});
    tape.actions.assign(cfg_.n_envs, {});
    tape.logprobs.assign(cfg_.n_envs, {});
    tape.values.assign(cfg_.n_envs, {});
    tape.records.assign(cfg_.n_envs, {});

    for (int e = 0; e < cfg_.n_envs; ++e) {
      Rng env_rng = make_rng(derive_seed(seed_, static_cast<std::uint64_t>(t),
                                         0xe000 + static_cast<std::uint64_t>(e)));
      for (int episode = 0; episode < cfg_.episodes_per_env; ++episode) {
        env::EnvState state = env::new_scene(cfg_.scene, env_rng());
        for (int step = 0; step < cfg_.episode_len; ++step) {
          auto obs = rl::encode_obs(state);
          auto mask = rl::action_mask(state, cfg_.env_opts);
          auto [dist, value] = agent_->forward(obs, mask);
          int head = rl::sample_action(dist, env_rng);
          auto action = rl::head_to_action(state, head, cfg_.env_opts);
          auto [next, rec] = env::step(state, *action, cfg_.style, cfg_.env_opts);

          tape.obs[e].push_back(obs);
          tape.masks[e].push_back(mask);
          tape.actions[e].push_back(head);
          tape.logprobs[e].push_back(dist.logprobs[head]);
          tape.values[e].push_back(value);
          tape.records[e].push_back(std::move(rec));
          state = std::move(next);
        }
      }
    }

    std::vector<env::TransitionRecord> time_major;
    time_major.reserve(static_cast<std::size_t>(steps_per_env) * cfg_.n_envs);
    for (int step = 0; step < steps_per_env; ++step)
      for (int e = 0; e < cfg_.n_envs; ++e) time_major.push_back(tape.records[e][step]);
    return time_major;
  }

  // Rewards under the fresh hypotheses, advantage estimation, one PPO update.
  double train_policy(const std::vector<env::TransitionRecord>& collected,
                      const RolloutTape& tape, const scoring::HypothesisSet& h_prev, Rng& rng,
                      rl::UpdateStats& stats_out) {
    (void)collected;
    const auto signal = reward_signal(cfg_.experimenter);
    const int steps_per_env = cfg_.episodes_per_env * cfg_.episode_len;

    // Score per environment sequence (flatten env-major for the batch).
    std::vector<env::TransitionRecord> flat;
    flat.reserve(static_cast<std::size_t>(steps_per_env) * cfg_.n_envs);
    for (int e = 0; e < cfg_.n_envs; ++e)
      flat.insert(flat.end(), tape.records[e].begin(), tape.records[e].end());

    std::vector<double> rewards;
    if (signal == experimenter::RewardSignal::LogP) {
      auto scores = experimenter::score_records(*backend_, hypothesis_, flat, cfg_.workers);
      rewards.resize(scores.size());
      for (std::size_t i = 0; i < scores.size(); ++i) rewards[i] = -scores[i];
    } else {
      auto prev_scores = experimenter::score_records(*backend_, h_prev, flat, cfg_.workers);
      auto cur_scores = experimenter::score_records(*backend_, hypothesis_, flat, cfg_.workers);
      std::vector<double> alp(flat.size());
      for (std::size_t i = 0; i < alp.size(); ++i)
        alp[i] = std::abs(prev_scores[i] - cur_scores[i]);
      if (signal == experimenter::RewardSignal::ALP) {
        rewards = std::move(alp);
      } else {
        auto result = experimenter::reward_alpexp(flat, alp, type_stats_);
        rewards = std::move(result.rewards);
        type_stats_ = result.stats;
      }
    }

    rl::Batch batch;
    double reward_sum = 0.0;
    for (int e = 0; e < cfg_.n_envs; ++e) {
      std::vector<double> env_rewards(rewards.begin() + e * steps_per_env,
                                      rewards.begin() + (e + 1) * steps_per_env);
      std::vector<double> values = tape.values[e];
      values.push_back(0.0);  // episodes end exactly at the tape boundary
      std::vector<std::uint8_t> dones(steps_per_env, 0);
      for (int episode = 1; episode <= cfg_.episodes_per_env; ++episode)
        dones[episode * cfg_.episode_len - 1] = 1;
      auto g = rl::gae(env_rewards, values, dones, cfg_.ppo.gamma, cfg_.ppo.gae_lambda);
      for (int i = 0; i < steps_per_env; ++i) {
        batch.obs.push_back(tape.obs[e][i]);
        batch.actions.push_back(tape.actions[e][i]);
        batch.masks.push_back(tape.masks[e][i]);
        batch.logprobs.push_back(tape.logprobs[e][i]);
        batch.advantages.push_back(g.advantages[i]);
        batch.returns.push_back(g.returns[i]);
        reward_sum += env_rewards[i];
      }
    }
    stats_out = agent_->update(std::move(batch), rng);
    return reward_sum / (static_cast<double>(steps_per_env) * cfg_.n_envs);
  }

  void persist_iteration(int t, const std::vector<env::TransitionRecord>& collected,
                         const std::vector<env::TransitionRecord>& slice,
                         const std::vector<scientist::ProposalRecord>& proposals,
                         std::optional<double> accepted_score,
                         const experimenter::CollectStats& collect_stats,
                         const rl::UpdateStats& ppo_stats, double mean_reward) {
    std::vector<std::string> lines;
    for (const auto& rec : slice) lines.push_back(nlohmann::json(rec).dump());
    detail::write_atomically(dir_ / "transitions" / ("t" + detail::zero_pad(t) + ".jsonl"),
                             [&] {
                               std::string blob;
                               for (const auto& l : lines) blob += l + "\n";
                               return blob;
                             }());

    lines.clear();
    for (const auto& p : proposals) lines.push_back(nlohmann::json(p).dump());
    detail::append_lines(dir_ / "hypotheses.jsonl", lines);

    nlohmann::json accepted{{"iteration", t},
                            {"text", hypothesis_.text},
                            {"created_iteration", hypothesis_.created_iteration},
                            {"created_step", hypothesis_.created_step},
                            {"score", accepted_score ? nlohmann::json(*accepted_score)
                                                     : nlohmann::json(nullptr)}};
    detail::append_lines(dir_ / "hypotheses_accepted.jsonl", {accepted.dump()});

    auto hist = experimenter::type_histogram(collected);
    std::string row = std::to_string(t);
    for (int c : hist) row += "," + std::to_string(c);
    row += "," + std::to_string(collect_stats.scene_regens);
    detail::append_lines(dir_ / "collection_stats.csv", {row});

    int accepted_count = 0;
    for (const auto& p : proposals) accepted_count += p.accepted;
    nlohmann::json iter_log{
        {"iteration", t},
        {"histogram", hist},
        {"accepted_proposals", accepted_count},
        {"hypothesis_text", hypothesis_.text},
        {"eval_snapshot",
         (t % cfg_.eval_every == 0 || t == cfg_.iterations)
             ? nlohmann::json("eval/" + detail::zero_pad(t) + ".csv")
             : nlohmann::json(nullptr)}};
    detail::append_lines(dir_ / "iterations.jsonl", {iter_log.dump()});

    if (is_rl(cfg_.experimenter)) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g", t,
                    ppo_stats.policy_loss, ppo_stats.value_loss, ppo_stats.entropy,
                    ppo_stats.approx_kl, mean_reward);
      detail::append_lines(dir_ / "ppo" / "ppo_stats.csv", {buf});
    }
  }

  void eval_snapshot(int t) {
    evalsuite::EvalSnapshot snap;
    snap.iteration = t;
    const scoring::HypothesisSet& h = t == 0 ? empty_hypothesis() : hypothesis_;
    snap.mean_ll = evalsuite::eval_loglik(*backend_, h, testset_, cfg_.style, cfg_.workers);
    if (cfg_.eval_topk)
      snap.top3 = evalsuite::constrained_topk(*backend_, h, testset_, 3, cfg_.style,
                                              cfg_.env_opts, cfg_.workers);
    evalsuite::write_eval_csv(dir_ / "eval" / (detail::zero_pad(t) + ".csv"), snap);
  }

  static const scoring::HypothesisSet& empty_hypothesis() {
    static const scoring::HypothesisSet empty;
    return empty;
  }

  void checkpoint(int t) {
    if (agent_) agent_->save(dir_ / "ppo" / "checkpoint.bin");
    nlohmann::json state{{"iteration", t},
                         {"hypothesis",
                          {{"text", hypothesis_.text},
                           {"created_iteration", hypothesis_.created_iteration},
                           {"created_step", hypothesis_.created_step}}},
                         {"type_stats", type_stats_}};
    detail::write_atomically(dir_ / "state.json", state.dump(2) + "\n");
  }

  void write_summary() {
    auto snaps = evalsuite::read_eval_csvs(dir_ / "eval");
    if (snaps.empty()) return;
    auto aucs = evalsuite::auc_from_snapshots(snaps, cfg_.iterations);
    evalsuite::write_summary_csv(dir_ / "eval" / "summary.csv", aucs);
  }

  void reload_replay_buffer() {
    replay_.clear();
    if (cfg_.replay_window <= 1) return;
    for (int t = std::max(1, completed_ - cfg_.replay_window + 2); t <= completed_; ++t) {
      fs::path path = dir_ / "transitions" / ("t" + detail::zero_pad(t) + ".jsonl");
      if (!fs::exists(path)) continue;
      std::ifstream in(path);
      std::string line;
      std::vector<env::TransitionRecord> records;
      while (std::getline(in, line)) {
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded()) records.push_back(j.get<env::TransitionRecord>());
      }
      replay_.push_back(std::move(records));
    }
  }

  RunConfig cfg_;
  fs::path dir_;
  std::uint64_t seed_ = 0;
  int completed_ = 0;
  scoring::HypothesisSet hypothesis_;
  experimenter::TypeStats type_stats_;
  std::unique_ptr<scoring::ScorerBackend> backend_;
  std::unique_ptr<rl::PpoAgent> agent_;
  evalsuite::TestSet testset_;
  std::deque<std::vector<env::TransitionRecord>> replay_;
};

}  // namespace worldlab::orchestrator

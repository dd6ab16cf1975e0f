#pragma once

// Masked PPO over symbolic observations. The policy never sees text: states
// encode to a 17-dim count/one-hot vector and actions collapse to 11 bucketed
// heads (varieties and duplicate objects are dynamically equivalent).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "worldlab/env.hpp"
#include "worldlab/mlp.hpp"
#include "worldlab/rng.hpp"

namespace worldlab::rl {

inline constexpr int kNumBuckets = 7;   // water, seed, plant, baby SH, SH, baby BH, BH
inline constexpr int kObsDim = 17;      // 7 counts + 8 standing one-hot + 2 inventory counts
inline constexpr int kNumActions = 11;  // 7 goto buckets + grasp + 2 releases + release-all

enum HeadAction : int {
  kGoToBucket0 = 0,  // .. kGoToBucket0 + 6
  kGrasp = 7,
  kReleaseWater = 8,
  kReleasePlant = 9,
  kReleaseAll = 10,
};

inline int bucket_of(const env::ObjectInstance& o) {
  switch (o.cls) {
    case env::ObjectClass::Water: return 0;
    case env::ObjectClass::Plant: return o.stage == env::Stage::Young ? 1 : 2;
    case env::ObjectClass::SmallHerbivore: return o.stage == env::Stage::Young ? 3 : 4;
    case env::ObjectClass::BigHerbivore: return o.stage == env::Stage::Young ? 5 : 6;
  }
  throw std::logic_error("bucket_of: bad class");
}

inline std::array<double, kObsDim> encode_obs(const env::EnvState& s) {
  std::array<double, kObsDim> obs{};
  for (const auto& o : s.scene) obs[bucket_of(o)] += 1.0;
  int standing = s.standing_on ? bucket_of(s.scene[*s.standing_on]) : kNumBuckets;
  obs[kNumBuckets + standing] = 1.0;
  for (const auto& o : s.inventory) {
    if (o.cls == env::ObjectClass::Water) obs[15] += 1.0;
    if (o.cls == env::ObjectClass::Plant && o.stage == env::Stage::Grown) obs[16] += 1.0;
  }
  return obs;
}

// Concrete action a head index maps to in this state, if any. GoTo heads
// resolve to the lowest-index scene object of the bucket, skipping the one
// stood on; release heads pick the first matching inventory item.
inline std::optional<env::Action> head_to_action(const env::EnvState& s, int head,
                                                 const env::EnvOptions& opt = {}) {
  if (head < 0 || head >= kNumActions) throw std::invalid_argument("bad head action index");
  if (head < kNumBuckets) {
    for (std::size_t i = 0; i < s.scene.size(); ++i) {
      if (s.standing_on && *s.standing_on == i) continue;
      if (bucket_of(s.scene[i]) == head) return env::go_to(env::display_name(s.scene[i]));
    }
    return std::nullopt;
  }
  if (head == kGrasp) {
    env::Action a = env::grasp();
    return env::is_legal(s, a, opt) ? std::optional(a) : std::nullopt;
  }
  if (head == kReleaseAll) {
    env::Action a = env::release_all();
    return env::is_legal(s, a, opt) ? std::optional(a) : std::nullopt;
  }
  for (const auto& o : s.inventory) {
    bool match = head == kReleaseWater
                     ? o.cls == env::ObjectClass::Water
                     : o.cls == env::ObjectClass::Plant && o.stage == env::Stage::Grown;
    if (!match) continue;
    env::Action a = env::release(env::display_name(o));
    return env::is_legal(s, a, opt) ? std::optional(a) : std::nullopt;
  }
  return std::nullopt;
}

// mask[i] <=> some legal concrete action maps to head i.
inline std::array<bool, kNumActions> action_mask(const env::EnvState& s,
                                                 const env::EnvOptions& opt = {}) {
  std::array<bool, kNumActions> mask{};
  for (int i = 0; i < kNumActions; ++i) mask[i] = head_to_action(s, i, opt).has_value();
  return mask;
}

// ---------------------------------------------------------------------------
// Masked categorical distribution

struct MaskedDistribution {
  std::array<double, kNumActions> probs{};     // exactly zero on masked entries
  std::array<double, kNumActions> logprobs{};  // -inf on masked entries
  double entropy = 0.0;
};

inline MaskedDistribution masked_softmax(std::span<const double> logits,
                                         const std::array<bool, kNumActions>& mask) {
  MaskedDistribution d;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kNumActions; ++i)
    if (mask[i]) max_logit = std::max(max_logit, logits[i]);
  if (std::isinf(max_logit)) throw std::logic_error("masked_softmax: no legal action");
  double z = 0.0;
  for (int i = 0; i < kNumActions; ++i)
    if (mask[i]) z += std::exp(logits[i] - max_logit);
  const double log_z = std::log(z) + max_logit;
  for (int i = 0; i < kNumActions; ++i) {
    if (!mask[i]) {
      d.probs[i] = 0.0;
      d.logprobs[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    d.logprobs[i] = logits[i] - log_z;
    d.probs[i] = std::exp(d.logprobs[i]);
    d.entropy -= d.probs[i] * d.logprobs[i];
  }
  return d;
}

// Samples over legal entries only; masked actions carry exactly zero mass.
inline int sample_action(const MaskedDistribution& d, Rng& rng) {
  double x = uniform01(rng);
  double acc = 0.0;
  int last_legal = -1;
  for (int i = 0; i < kNumActions; ++i) {
    if (d.probs[i] <= 0.0) continue;
    last_legal = i;
    acc += d.probs[i];
    if (x < acc) return i;
  }
  if (last_legal < 0) throw std::logic_error("sample_action: no legal action");
  return last_legal;  // x landed in the rounding tail
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values carries one bootstrap entry beyond the last step; dones[t] marks
// episode ends (no bootstrap across them). Advantages are raw here; the PPO
// update normalizes per batch.
inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
                     const std::vector<std::uint8_t>& dones, double gamma, double lambda) {
  if (values.size() != rewards.size() + 1)
    throw std::invalid_argument("gae: values must have a bootstrap entry");
  if (dones.size() != rewards.size()) throw std::invalid_argument("gae: dones size mismatch");
  GaeResult out;
  out.advantages.assign(rewards.size(), 0.0);
  out.returns.assign(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double nonterminal = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t];
    acc = delta + gamma * lambda * nonterminal * acc;
    out.advantages[t] = acc;
    out.returns[t] = acc + values[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPO

struct PpoConfig {
  double lr = 5e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.01;
  double max_grad_norm = 0.5;
  int epochs = 20;
  int minibatch_size = 256;
  int hidden = 64;
};

// One flattened rollout ready for updates.
struct Batch {
  std::vector<std::array<double, kObsDim>> obs;
  std::vector<int> actions;
  std::vector<std::array<bool, kNumActions>> masks;
  std::vector<double> logprobs;    // behavior log-probs at collection time
  std::vector<double> advantages;  // raw; normalized inside update()
  std::vector<double> returns;

  std::size_t size() const { return obs.size(); }
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  int minibatches = 0;
  bool aborted = false;
};

struct LossParts {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
};

// Clipped-surrogate loss over `indices`, with analytic gradients accumulated
// into the two flat gradient vectors. Exposed as a free function so tests can
// compare it against finite differences.
inline double ppo_minibatch_loss(const Mlp& actor, const Mlp& critic, const Batch& batch,
                                 std::span<const std::size_t> indices, const PpoConfig& cfg,
                                 std::span<double> actor_grad, std::span<double> critic_grad,
                                 LossParts* parts = nullptr) {
  const double inv_n = 1.0 / static_cast<double>(indices.size());
  LossParts acc;
  for (std::size_t idx : indices) {
    const auto& obs = batch.obs[idx];
    const int action = batch.actions[idx];
    const double adv = batch.advantages[idx];

    Mlp::Trace actor_trace;
    std::vector<double> logits = actor.forward(obs, &actor_trace);
    MaskedDistribution dist = masked_softmax(logits, batch.masks[idx]);
    const double logp_new = dist.logprobs[action];
    const double logratio = logp_new - batch.logprobs[idx];
    const double ratio = std::exp(logratio);
    acc.approx_kl += inv_n * ((ratio - 1.0) - logratio);

    const double unclipped = -adv * ratio;
    const double clipped =
        -adv * std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    const double pg = std::max(unclipped, clipped);
    // d pg / d logp_new: the clipped branch is constant in the parameters.
    const double dpg_dlogp = unclipped >= clipped ? -adv * ratio : 0.0;

    Mlp::Trace critic_trace;
    const double value = critic.forward(obs, &critic_trace)[0];
    const double verr = value - batch.returns[idx];

    acc.policy += inv_n * pg;
    acc.value += inv_n * verr * verr;
    acc.entropy += inv_n * dist.entropy;

    std::vector<double> dlogits(kNumActions, 0.0);
    for (int j = 0; j < kNumActions; ++j) {
      if (!batch.masks[idx][j]) continue;
      const double dlogp_dlj = (j == action ? 1.0 : 0.0) - dist.probs[j];
      const double dent_dlj = -dist.probs[j] * (dist.logprobs[j] + dist.entropy);
      dlogits[j] = inv_n * (dpg_dlogp * dlogp_dlj - cfg.ent_coef * dent_dlj);
    }
    actor.backward(obs, actor_trace, dlogits, actor_grad);

    std::array<double, 1> dvalue{inv_n * cfg.vf_coef * 2.0 * verr};
    critic.backward(obs, critic_trace, dvalue, critic_grad);
  }
  if (parts) *parts = acc;
  return acc.policy + cfg.vf_coef * acc.value - cfg.ent_coef * acc.entropy;
}

class PpoAgent {
 public:
  PpoAgent(PpoConfig cfg, std::uint64_t seed)
      : cfg_(cfg),
        actor_({kObsDim, cfg.hidden, cfg.hidden, kNumActions}),
        critic_({kObsDim, cfg.hidden, cfg.hidden, 1}),
        actor_opt_(actor_.param_count(), {.lr = cfg.lr}),
        critic_opt_(critic_.param_count(), {.lr = cfg.lr}) {
    Rng rng = make_rng(derive_seed(seed, 0xac7031));
    // Small final policy layer keeps the initial policy near uniform.
    actor_.init_orthogonal(rng, std::sqrt(2.0), 0.01);
    critic_.init_orthogonal(rng, std::sqrt(2.0), 1.0);
  }

  const PpoConfig& config() const { return cfg_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }

  std::pair<MaskedDistribution, double> forward(const std::array<double, kObsDim>& obs,
                                                const std::array<bool, kNumActions>& mask) const {
    bool any = false;
    for (bool b : mask) any |= b;
    if (!any) throw std::logic_error("policy forward: empty action mask");
    MaskedDistribution dist = masked_softmax(actor_.forward(obs), mask);
    double value = critic_.forward(obs)[0];
    return {dist, value};
  }

  double value(const std::array<double, kObsDim>& obs) const { return critic_.forward(obs)[0]; }

  // 20 epochs of shuffled clipped-surrogate minibatches; advantages are
  // normalized once over the whole batch. A non-finite loss aborts the
  // update and restores the previous parameters.
  UpdateStats update(Batch batch, Rng& rng) {
    if (batch.size() == 0) throw std::invalid_argument("ppo update: empty batch");
    normalize(batch.advantages);

    const std::vector<double> actor_snapshot = actor_.params();
    const std::vector<double> critic_snapshot = critic_.params();

    UpdateStats stats;
    std::vector<std::size_t> order(batch.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> actor_grad(actor_.param_count());
    std::vector<double> critic_grad(critic_.param_count());

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      shuffle_inplace(order, rng);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg_.minibatch_size)) {
        std::size_t len = std::min(static_cast<std::size_t>(cfg_.minibatch_size),
                                   order.size() - start);
        std::span<const std::size_t> indices(order.data() + start, len);
        std::fill(actor_grad.begin(), actor_grad.end(), 0.0);
        std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
        LossParts parts;
        double loss = ppo_minibatch_loss(actor_, critic_, batch, indices, cfg_, actor_grad,
                                         critic_grad, &parts);
        if (!std::isfinite(loss)) {
          actor_.params() = actor_snapshot;
          critic_.params() = critic_snapshot;
          stats.aborted = true;
          return stats;
        }
        clip_grad_norm(actor_grad, critic_grad);
        actor_opt_.step(actor_.params(), actor_grad);
        critic_opt_.step(critic_.params(), critic_grad);

        stats.policy_loss += parts.policy;
        stats.value_loss += parts.value;
        stats.entropy += parts.entropy;
        stats.approx_kl += parts.approx_kl;
        ++stats.minibatches;
      }
    }
    finalize(stats);
    return stats;
  }

  void save(const std::filesystem::path& path) const {
    std::vector<NamedTensor> tensors;
    auto add = [&](const std::string& name, const std::vector<double>& data) {
      tensors.push_back({name, {data.size()}, data});
    };
    add("actor.params", actor_.params());
    add("critic.params", critic_.params());
    add("opt.actor.m", actor_opt_.first_moment());
    add("opt.actor.v", actor_opt_.second_moment());
    add("opt.critic.m", critic_opt_.first_moment());
    add("opt.critic.v", critic_opt_.second_moment());
    add("opt.steps", {static_cast<double>(actor_opt_.step_count()),
                      static_cast<double>(critic_opt_.step_count())});
    save_tensors(path, tensors);
  }

  void load(const std::filesystem::path& path) {
    auto tensors = load_tensors(path);
    auto find = [&](const std::string& name) -> std::vector<double>& {
      for (auto& t : tensors)
        if (t.name == name) return t.data;
      throw std::runtime_error("checkpoint missing tensor " + name);
    };
    auto assign = [](std::vector<double>& dst, const std::vector<double>& src) {
      if (dst.size() != src.size()) throw std::runtime_error("checkpoint shape mismatch");
      dst = src;
    };
    assign(actor_.params(), find("actor.params"));
    assign(critic_.params(), find("critic.params"));
    assign(actor_opt_.first_moment(), find("opt.actor.m"));
    assign(actor_opt_.second_moment(), find("opt.actor.v"));
    assign(critic_opt_.first_moment(), find("opt.critic.m"));
    assign(critic_opt_.second_moment(), find("opt.critic.v"));
    auto& steps = find("opt.steps");
    if (steps.size() != 2) throw std::runtime_error("checkpoint bad opt.steps");
    actor_opt_.set_step_count(static_cast<long>(steps[0]));
    critic_opt_.set_step_count(static_cast<long>(steps[1]));
  }

 private:
  static void normalize(std::vector<double>& xs) {
    if (xs.empty()) return;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    double stddev = std::sqrt(var / static_cast<double>(xs.size()));
    for (double& x : xs) x = (x - mean) / (stddev + 1e-8);
  }

  void clip_grad_norm(std::vector<double>& a, std::vector<double>& b) const {
    double sq = 0.0;
    for (double g : a) sq += g * g;
    for (double g : b) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm <= cfg_.max_grad_norm || norm == 0.0) return;
    double scale = cfg_.max_grad_norm / norm;
    for (double& g : a) g *= scale;
    for (double& g : b) g *= scale;
  }

  static void finalize(UpdateStats& stats) {
    if (stats.minibatches == 0) return;
    const double inv = 1.0 / stats.minibatches;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.approx_kl *= inv;
  }

  PpoConfig cfg_;
  Mlp actor_;
  Mlp critic_;
  Adam actor_opt_;
  Adam critic_opt_;
};

}  // namespace worldlab::rl

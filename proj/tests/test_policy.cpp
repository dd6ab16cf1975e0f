#include "worldlab/policy.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "worldlab/text.hpp"

using namespace worldlab;
using namespace worldlab::env;
using namespace worldlab::rl;

namespace {

Batch toy_batch(std::uint64_t seed, std::size_t n) {
  Rng rng = make_rng(seed);
  Batch batch;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kObsDim> obs{};
    for (double& x : obs) x = normal01(rng) * 0.5;
    std::array<bool, kNumActions> mask{};
    int legal = 0;
    for (bool& b : mask) legal += (b = uniform01(rng) < 0.6);
    if (legal == 0) mask[uniform_below(rng, kNumActions)] = true;
    std::vector<int> legal_idx;
    for (int j = 0; j < kNumActions; ++j)
      if (mask[j]) legal_idx.push_back(j);
    batch.obs.push_back(obs);
    batch.masks.push_back(mask);
    batch.actions.push_back(legal_idx[uniform_below(rng, legal_idx.size())]);
    batch.logprobs.push_back(-std::log(static_cast<double>(legal_idx.size())) +
                             0.05 * normal01(rng));
    batch.advantages.push_back(normal01(rng));
    batch.returns.push_back(normal01(rng));
  }
  return batch;
}

}  // namespace

TEST_CASE("observation encoding counts buckets and flags the stand position") {
  EnvState s = new_scene(default_scene_spec(), 0);
  auto obs = encode_obs(s);
  CHECK(obs[0] == 3.0);  // water
  CHECK(obs[1] == 3.0);  // seeds
  CHECK(obs[2] == 0.0);  // grown plants
  CHECK(obs[3] == 1.0);  // baby small herbivore
  CHECK(obs[4] == 0.0);
  CHECK(obs[5] == 1.0);  // baby big herbivore
  CHECK(obs[6] == 0.0);
  CHECK(obs[7 + 7] == 1.0);  // standing nowhere
  CHECK(obs[15] == 0.0);
  CHECK(obs[16] == 0.0);

  // Grasping a water moves one count from the scene into the inventory.
  for (std::size_t i = 0; i < s.scene.size(); ++i)
    if (s.scene[i].cls == ObjectClass::Water) {
      s.standing_on = i;
      break;
    }
  auto obs2 = encode_obs(apply_action(s, grasp()));
  CHECK(obs2[0] == 2.0);
  CHECK(obs2[15] == 1.0);
  CHECK(obs2[7 + 7] == 1.0);

  EnvState empty;
  auto obs3 = encode_obs(empty);  // degenerate but valid
  for (int i = 0; i < 7; ++i) CHECK(obs3[i] == 0.0);

  // One-hot invariant over random states.
  Rng rng = make_rng(2);
  EnvState t = new_scene(default_scene_spec(), 5);
  for (int i = 0; i < 300; ++i) {
    auto actions = legal_actions(t);
    if (actions.empty() || t.step_count > 30) {
      t = new_scene(default_scene_spec(), 100 + i);
      continue;
    }
    t = apply_action(t, actions[uniform_below(rng, actions.size())]);
    auto o = encode_obs(t);
    double onehot = 0.0;
    for (int j = 7; j < 15; ++j) onehot += o[j];
    CHECK(onehot == 1.0);
  }
}

TEST_CASE("action mask mirrors the concrete legal actions") {
  Rng rng = make_rng(3);
  EnvState s = new_scene(default_scene_spec(), 1);
  for (int i = 0; i < 400; ++i) {
    auto mask = action_mask(s);
    auto legal = legal_actions(s);
    // Every masked-in head maps to a legal action; every legal action has a
    // masked-in head.
    for (int h = 0; h < kNumActions; ++h) {
      if (auto a = head_to_action(s, h)) {
        CHECK(mask[h]);
        CHECK(is_legal(s, *a));
      } else {
        CHECK_FALSE(mask[h]);
      }
    }
    for (const auto& a : legal) {
      bool reachable = false;
      for (int h = 0; h < kNumActions && !reachable; ++h) {
        auto mapped = head_to_action(s, h);
        reachable = mapped && mapped->kind == a.kind &&
                    (a.kind != ActionKind::GoTo ||
                     bucket_of(*object_from_display_name(mapped->target)) ==
                         bucket_of(*object_from_display_name(a.target)));
      }
      CHECK(reachable);
    }
    if (legal.empty() || s.step_count > 30) {
      s = new_scene(default_scene_spec(), 200 + i);
      continue;
    }
    s = apply_action(s, legal[uniform_below(rng, legal.size())]);
  }
}

TEST_CASE("masked softmax puts zero mass on illegal actions") {
  std::array<double, kNumActions> logits{};
  std::array<bool, kNumActions> mask{};
  mask[2] = mask[5] = mask[9] = true;

  SECTION("uniform logits spread evenly over the legal set") {
    auto d = masked_softmax(logits, mask);
    CHECK(d.probs[2] == Catch::Approx(1.0 / 3));
    CHECK(d.probs[5] == Catch::Approx(1.0 / 3));
    CHECK(d.probs[0] == 0.0);
    CHECK(d.entropy == Catch::Approx(std::log(3.0)));
  }
  SECTION("single legal action gets probability one") {
    std::array<bool, kNumActions> single{};
    single[4] = true;
    auto d = masked_softmax(logits, single);
    CHECK(d.probs[4] == 1.0);
    CHECK(d.entropy == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("all-masked input is a logic error") {
    std::array<bool, kNumActions> none{};
    CHECK_THROWS_AS(masked_softmax(logits, none), std::logic_error);
  }
  SECTION("masked actions are never sampled") {
    logits = {1.0, 2.0, 3.0, -1.0, 0.5, 2.5, 0.0, 1.5, -2.0, 0.7, 0.2};
    auto d = masked_softmax(logits, mask);
    Rng rng = make_rng(11);
    for (int i = 0; i < 100000; ++i) {
      int a = sample_action(d, rng);
      bool legal = a == 2 || a == 5 || a == 9;
      if (!legal) FAIL("sampled masked action " << a);
    }
  }
}

TEST_CASE("gae reductions") {
  SECTION("lambda = 0 is one-step TD") {
    auto out = gae({1.0}, {0.5, 0.8}, {0}, 0.99, 0.0);
    CHECK(out.advantages[0] == Catch::Approx(1.0 + 0.99 * 0.8 - 0.5));
  }
  SECTION("lambda = 1 on an episodic batch is Monte Carlo minus baseline") {
    std::vector<double> rewards = {1.0, 0.0, 2.0};
    std::vector<double> values = {0.3, 0.6, 0.9, 5.0};  // bootstrap must be ignored
    std::vector<std::uint8_t> dones = {0, 0, 1};
    auto out = gae(rewards, values, dones, 0.99, 1.0);
    double mc0 = 1.0 + 0.99 * 0.0 + 0.99 * 0.99 * 2.0;
    CHECK(out.advantages[0] == Catch::Approx(mc0 - 0.3));
    CHECK(out.returns[0] == Catch::Approx(mc0));
  }
  SECTION("three-step hand example against an independent recursion") {
    std::vector<double> rewards = {1.0, 0.0, 1.0};
    std::vector<double> values = {0.5, 0.5, 0.5, 0.0};
    std::vector<std::uint8_t> dones = {0, 0, 0};
    const double g = 0.99, l = 0.95;
    auto out = gae(rewards, values, dones, g, l);

    // Oracle: textbook recursion written independently.
    std::array<double, 3> delta{};
    for (int t = 0; t < 3; ++t) delta[t] = rewards[t] + g * values[t + 1] - values[t];
    std::array<double, 3> adv{};
    adv[2] = delta[2];
    adv[1] = delta[1] + g * l * adv[2];
    adv[0] = delta[0] + g * l * adv[1];
    for (int t = 0; t < 3; ++t) {
      CHECK(out.advantages[t] == Catch::Approx(adv[t]).epsilon(1e-14));
      CHECK(out.returns[t] == Catch::Approx(adv[t] + values[t]).epsilon(1e-14));
    }
  }
  SECTION("episode boundaries cut the recursion") {
    auto out = gae({1.0, 1.0}, {0.0, 0.0, 9.0}, {1, 1}, 0.99, 0.95);
    CHECK(out.advantages[0] == Catch::Approx(1.0));
    CHECK(out.advantages[1] == Catch::Approx(1.0));
  }
  SECTION("shape errors") {
    CHECK_THROWS_AS(gae({1.0}, {0.5}, {0}, 0.99, 0.95), std::invalid_argument);
    CHECK_THROWS_AS(gae({1.0}, {0.5, 0.5}, {0, 0}, 0.99, 0.95), std::invalid_argument);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // Toy batch, full loss (policy + value + entropy terms), epsilon 1e-4.
  PpoConfig cfg;
  Mlp actor({kObsDim, 8, 8, kNumActions});
  Mlp critic({kObsDim, 8, 8, 1});
  Rng rng = make_rng(21);
  actor.init_orthogonal(rng, std::sqrt(2.0), 0.5);
  critic.init_orthogonal(rng, std::sqrt(2.0), 1.0);

  Batch batch = toy_batch(5, 16);
  std::vector<std::size_t> indices(batch.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

  std::vector<double> actor_grad(actor.param_count(), 0.0);
  std::vector<double> critic_grad(critic.param_count(), 0.0);
  ppo_minibatch_loss(actor, critic, batch, indices, cfg, actor_grad, critic_grad);

  const double eps = 1e-4;
  auto loss_at = [&]() {
    std::vector<double> ga(actor.param_count()), gc(critic.param_count());
    return ppo_minibatch_loss(actor, critic, batch, indices, cfg, ga, gc);
  };

  double max_rel = 0.0;
  auto check_params = [&](Mlp& net, std::vector<double>& grad) {
    for (std::size_t k = 0; k < net.param_count(); k += 7) {  // probe a lattice
      double saved = net.params()[k];
      net.params()[k] = saved + eps;
      double up = loss_at();
      net.params()[k] = saved - eps;
      double down = loss_at();
      net.params()[k] = saved;
      double fd = (up - down) / (2 * eps);
      double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
      max_rel = std::max(max_rel, std::abs(fd - grad[k]) / denom);
    }
  };
  check_params(actor, actor_grad);
  check_params(critic, critic_grad);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("entropy gradient vanishes at the uniform policy over the full mask") {
  PpoConfig cfg;
  cfg.ent_coef = 1.0;
  cfg.vf_coef = 0.0;
  Mlp actor({kObsDim, 8, 8, kNumActions});  // zero weights: uniform logits
  Mlp critic({kObsDim, 8, 8, 1});

  Batch batch = toy_batch(9, 8);
  for (auto& m : batch.masks)
    for (bool& b : m) b = true;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch.advantages[i] = 0.0;  // isolate the entropy term
    batch.logprobs[i] = -std::log(double(kNumActions));
  }
  std::vector<std::size_t> indices(batch.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::vector<double> ga(actor.param_count(), 0.0), gc(critic.param_count(), 0.0);
  ppo_minibatch_loss(actor, critic, batch, indices, cfg, ga, gc);
  for (double g : ga) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("uniform parameters give a uniform masked policy") {
  PpoAgent agent({}, 3);
  Mlp zero({kObsDim, 64, 64, kNumActions});
  EnvState s = new_scene(default_scene_spec(), 0);
  auto mask = action_mask(s);
  auto dist = masked_softmax(zero.forward(encode_obs(s)), mask);
  int legal = 0;
  for (bool b : mask) legal += b;
  for (int i = 0; i < kNumActions; ++i)
    if (mask[i]) CHECK(dist.probs[i] == Catch::Approx(1.0 / legal));
}

TEST_CASE("bandit sanity: the rewarded arm dominates within 50 updates") {
  // Stationary task: fixed observation, full mask, reward 1 for arm 4.
  PpoConfig cfg;
  cfg.minibatch_size = 64;
  PpoAgent agent(cfg, 12);
  Rng rng = make_rng(99);

  std::array<double, kObsDim> obs{};
  obs[0] = 1.0;
  std::array<bool, kNumActions> mask{};
  for (bool& b : mask) b = true;
  const int best = 4;

  double p_best = 0.0;
  for (int update = 0; update < 50; ++update) {
    Batch batch;
    for (int i = 0; i < 256; ++i) {
      auto [dist, value] = agent.forward(obs, mask);
      int a = sample_action(dist, rng);
      double reward = a == best ? 1.0 : 0.0;
      auto g = gae({reward}, {value, 0.0}, {1}, cfg.gamma, cfg.gae_lambda);
      batch.obs.push_back(obs);
      batch.actions.push_back(a);
      batch.masks.push_back(mask);
      batch.logprobs.push_back(dist.logprobs[a]);
      batch.advantages.push_back(g.advantages[0]);
      batch.returns.push_back(g.returns[0]);
    }
    agent.update(std::move(batch), rng);
    p_best = agent.forward(obs, mask).first.probs[best];
    if (p_best > 0.9) break;
  }
  CHECK(p_best > 0.9);
}

TEST_CASE("update is deterministic for fixed seeds") {
  auto run = [] {
    PpoConfig cfg;
    cfg.minibatch_size = 32;
    cfg.epochs = 3;
    PpoAgent agent(cfg, 7);
    Rng rng = make_rng(1);
    Batch batch = toy_batch(2, 64);
    agent.update(batch, rng);
    return agent.actor().params();
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite losses abort the update and keep the old parameters") {
  PpoConfig cfg;
  cfg.epochs = 1;
  PpoAgent agent(cfg, 5);
  Batch batch = toy_batch(3, 8);
  batch.returns[0] = std::numeric_limits<double>::quiet_NaN();
  auto before = agent.actor().params();
  Rng rng = make_rng(2);
  auto stats = agent.update(batch, rng);
  CHECK(stats.aborted);
  CHECK(agent.actor().params() == before);
}

TEST_CASE("checkpoints restore the exact training state") {
  namespace fs = std::filesystem;
  PpoConfig cfg;
  cfg.epochs = 2;
  cfg.minibatch_size = 16;
  PpoAgent a(cfg, 4);
  Rng rng = make_rng(6);
  a.update(toy_batch(8, 32), rng);

  auto path = fs::temp_directory_path() / "worldlab_ppo_ckpt_test.bin";
  a.save(path);

  PpoAgent b(cfg, 999);  // different init, fully overwritten by load
  b.load(path);
  CHECK(b.actor().params() == a.actor().params());
  CHECK(b.critic().params() == a.critic().params());

  // Both agents continue identically.
  Rng rng_a = make_rng(42), rng_b = make_rng(42);
  auto batch = toy_batch(10, 32);
  a.update(batch, rng_a);
  b.update(batch, rng_b);
  CHECK(a.actor().params() == b.actor().params());
  fs::remove(path);
}

TEST_CASE("tensor container round trip") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "worldlab_tensors_test.bin";
  std::vector<NamedTensor> tensors = {{"a", {2, 3}, {1, 2, 3, 4, 5, 6}},
                                      {"b.long/name", {1}, {-0.5}}};
  save_tensors(path, tensors);
  auto back = load_tensors(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].shape == std::vector<std::uint64_t>{2, 3});
  CHECK(back[0].data == tensors[0].data);
  CHECK(back[1].name == "b.long/name");
  fs::remove(path);
  CHECK_THROWS(load_tensors(path));
}

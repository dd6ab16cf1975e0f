#include "worldlab/experimenter.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "worldlab/synthetic.hpp"
#include "worldlab/text.hpp"

using namespace worldlab;
using namespace worldlab::env;
using namespace worldlab::experimenter;
using worldlab::scoring::HypothesisSet;
using worldlab::scoring::SyntheticBackend;

namespace {

const std::string& rule_sentence(TransitionType t) {
  static std::vector<std::string> sentences = [] {
    std::vector<std::string> out;
    for (const auto& r : scoring::canonical_rules()) out.emplace_back(r.sentence);
    return out;
  }();
  return sentences[static_cast<int>(t)];
}

TransitionRecord one_record(TransitionType want) {
  CollectorConfig cfg;
  Rng rng = make_rng(515 + static_cast<int>(want));
  auto records = oracle_collect(OracleKind::Hardest, cfg, 0, 21, rng);
  for (const auto& r : records)
    if (r.ttype == want) return r;
  throw std::logic_error("type not produced");
}

}  // namespace

TEST_CASE("hardest oracle runs the full chain with only legal actions") {
  CollectorConfig cfg;
  Rng rng = make_rng(2);
  CollectStats stats;
  auto records = oracle_collect(OracleKind::Hardest, cfg, 0, 21, rng, &stats);
  REQUIRE(records.size() == 21);

  // Script actions execute through the masked step(); reaching the grow
  // transitions at all proves legality, but re-check against each before
  // state anyway.
  for (const auto& r : records) CHECK(is_legal(r.state_before, r.action));

  auto h = type_histogram(records);
  CHECK(h[int(TransitionType::Standing)] == 10);
  CHECK(h[int(TransitionType::Holding1)] == 5);
  CHECK(h[int(TransitionType::Holding2)] == 1);
  CHECK(h[int(TransitionType::GrowPlant)] == 3);
  CHECK(h[int(TransitionType::GrowSH)] == 1);
  CHECK(h[int(TransitionType::GrowBH)] == 1);

  // The chain repeats across regenerated scenes.
  Rng rng2 = make_rng(2);
  auto more = oracle_collect(OracleKind::Hardest, cfg, 0, 63, rng2);
  auto h3 = type_histogram(more);
  CHECK(h3[int(TransitionType::GrowBH)] == 3);
}

TEST_CASE("curriculum phases gate the accessible transition types") {
  CollectorConfig cfg;

  SECTION("plant phase") {
    Rng rng = make_rng(3);
    auto records = oracle_collect(OracleKind::Curriculum, cfg, 50, 60, rng);
    auto h = type_histogram(records);
    CHECK(h[int(TransitionType::GrowPlant)] > 0);
    CHECK(h[int(TransitionType::GrowSH)] == 0);
    CHECK(h[int(TransitionType::GrowBH)] == 0);
  }
  SECTION("small herbivore phase") {
    Rng rng = make_rng(4);
    auto records = oracle_collect(OracleKind::Curriculum, cfg, 200, 60, rng);
    auto h = type_histogram(records);
    CHECK(h[int(TransitionType::GrowPlant)] > 0);
    CHECK(h[int(TransitionType::GrowSH)] > 0);
    CHECK(h[int(TransitionType::GrowBH)] == 0);
  }
  SECTION("full chain phase") {
    Rng rng = make_rng(5);
    auto records = oracle_collect(OracleKind::Curriculum, cfg, 300, 63, rng);
    auto h = type_histogram(records);
    CHECK(h[int(TransitionType::GrowSH)] > 0);
    CHECK(h[int(TransitionType::GrowBH)] > 0);
  }
  SECTION("scaled schedule") {
    cfg.curriculum = {10, 20};
    Rng rng = make_rng(6);
    auto records = oracle_collect(OracleKind::Curriculum, cfg, 15, 40, rng);
    auto h = type_histogram(records);
    CHECK(h[int(TransitionType::GrowSH)] > 0);
    CHECK(h[int(TransitionType::GrowBH)] == 0);
  }
}

TEST_CASE("ideal oracle realizes its multinomial target draw exactly") {
  CollectorConfig cfg;
  const std::uint64_t seed = 24;

  // Independent replay of the type draw.
  std::array<int, kNumTransitionTypes> expected{};
  {
    Rng rng = make_rng(seed);
    for (int i = 0; i < 168; ++i) ++expected[int(sample_ideal_type(rng))];
  }

  Rng rng = make_rng(seed);
  auto records = oracle_collect(OracleKind::Ideal, cfg, 0, 168, rng);
  REQUIRE(records.size() == 168);
  auto h = type_histogram(records);
  for (int t = 0; t < kNumTransitionTypes; ++t) {
    INFO("type " << ttype_name(static_cast<TransitionType>(t)));
    CHECK(h[t] == expected[t]);
    CHECK(std::abs(h[t] - ideal_type_counts()[t]) <= 3);  // this seed draws close
  }
}

TEST_CASE("ideal type sampling converges to the test distribution") {
  // Chi-square against (120,20,7,12,6,3)/168 over 10^4 draws;
  // critical value for p = 0.01 at 5 dof.
  Rng rng = make_rng(8);
  const int n = 10000;
  std::array<int, kNumTransitionTypes> counts{};
  for (int i = 0; i < n; ++i) ++counts[int(sample_ideal_type(rng))];
  double chi2 = 0.0;
  for (int t = 0; t < kNumTransitionTypes; ++t) {
    double expected = n * static_cast<double>(ideal_type_counts()[t]) / 168.0;
    double d = counts[t] - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 15.0863);
}

TEST_CASE("random oracle rarely stumbles into the big herbivore") {
  CollectorConfig cfg;
  Rng rng = make_rng(9);
  auto records = oracle_collect(OracleKind::Random, cfg, 0, 10000, rng);
  auto h = type_histogram(records);
  CHECK(h[int(TransitionType::GrowBH)] < 100);  // < 1%
  for (const auto& r : records) CHECK(r.state_before.step_count < cfg.episode_len);
}

TEST_CASE("oracle preconditions") {
  CollectorConfig cfg;
  Rng rng = make_rng(1);
  CHECK_THROWS_AS(oracle_collect(OracleKind::Random, cfg, 0, 0, rng), std::invalid_argument);

  // A scene without a big herbivore cannot satisfy a GrowBH target.
  CollectorConfig no_bh;
  no_bh.scene.entries = {{ObjectClass::Water, Stage::Grown, 2, std::nullopt},
                         {ObjectClass::Plant, Stage::Young, 2, std::nullopt}};
  experimenter::detail::ScriptRunner runner(no_bh, rng, nullptr);
  CHECK_THROWS_AS(collect_one_of_type(runner, TransitionType::GrowBH, no_bh), CollectError);
}

TEST_CASE("surprisal reward is the negated score") {
  SyntheticBackend backend;
  auto standing = one_record(TransitionType::Standing);
  CHECK(reward_logp(backend, {rule_sentence(TransitionType::Standing), 0, 0}, standing) == 1.0);
  CHECK(reward_logp(backend, {}, standing) == 4.0);
  CHECK(reward_logp(backend, {}, one_record(TransitionType::GrowBH)) == 9.0);
}

TEST_CASE("surprisal orders the six types by chain depth") {
  SyntheticBackend backend;
  double last = 0.0;
  for (int t = 0; t < kNumTransitionTypes; ++t) {
    double r = reward_logp(backend, {}, one_record(static_cast<TransitionType>(t)));
    CHECK(r > last);
    last = r;
  }
}

TEST_CASE("absolute learning progress tracks both progress and forgetting") {
  SyntheticBackend backend;
  auto gp = one_record(TransitionType::GrowPlant);
  HypothesisSet none;
  HypothesisSet covers{rule_sentence(TransitionType::GrowPlant), 0, 0};

  CHECK(reward_alp(backend, none, none, gp) == 0.0);
  CHECK(reward_alp(backend, covers, covers, gp) == 0.0);
  CHECK(reward_alp(backend, none, covers, gp) == 6.0);   // newly covered
  CHECK(reward_alp(backend, covers, none, gp) == 6.0);   // forgotten, same magnitude
}

TEST_CASE("alp equals direct double scoring on random records") {
  SyntheticBackend backend;
  CollectorConfig cfg;
  Rng rng = make_rng(31);
  auto records = oracle_collect(OracleKind::Hardest, cfg, 0, 100, rng);
  HypothesisSet prev;
  HypothesisSet cur{rule_sentence(TransitionType::GrowPlant) + std::string(" ") +
                        rule_sentence(TransitionType::Holding1),
                    0, 0};
  auto s_prev = score_records(backend, prev, records);
  auto s_cur = score_records(backend, cur, records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(reward_alp(backend, prev, cur, records[i]) ==
          Catch::Approx(std::abs(s_prev[i] - s_cur[i])).margin(1e-12));
  }
}

TEST_CASE("alpexp blends the per-type moving average with fresh alp") {
  auto gp = one_record(TransitionType::GrowPlant);

  SECTION("alpha = 0 reduces to plain alp") {
    TypeStats stats;
    stats.alpha = 0.0;
    stats.m[int(TransitionType::GrowPlant)] = 123.0;  // must be ignored
    auto out = reward_alpexp({gp}, {6.0}, stats);
    CHECK(out.rewards[0] == 6.0);
    CHECK(out.stats.m[int(TransitionType::GrowPlant)] == 6.0);
  }
  SECTION("alpha = 1 freezes the initial averages") {
    TypeStats stats;
    stats.alpha = 1.0;
    auto out = reward_alpexp({gp}, {6.0}, stats);
    CHECK(out.rewards[0] == 0.0);
    CHECK(out.stats.m[int(TransitionType::GrowPlant)] == 0.0);
  }
  SECTION("alpha = 0.9 worked example") {
    TypeStats stats;
    stats.alpha = 0.9;
    stats.m[int(TransitionType::GrowPlant)] = 2.0;
    auto out = reward_alpexp({gp}, {6.0}, stats);
    CHECK(out.rewards[0] == Catch::Approx(0.9 * 2.0 + 0.1 * 6.0).margin(1e-12));
    CHECK(out.stats.m[int(TransitionType::GrowPlant)] ==
          Catch::Approx(0.9 * 2.0 + 0.1 * 6.0).margin(1e-12));
  }
}

TEST_CASE("alpexp three-iteration hand trace, alpha = 0.5") {
  auto st = one_record(TransitionType::Standing);
  auto gp = one_record(TransitionType::GrowPlant);
  TypeStats stats;
  stats.alpha = 0.5;

  // Iteration 1: alps (2, 4, 6) over (St, St, GP).
  auto it1 = reward_alpexp({st, st, gp}, {2.0, 4.0, 6.0}, stats);
  CHECK(it1.rewards == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(it1.stats.m[int(TransitionType::Standing)] == 1.5);
  CHECK(it1.stats.m[int(TransitionType::GrowPlant)] == 3.0);

  // Iteration 2: only a Standing record; GrowPlant's average must not move.
  auto it2 = reward_alpexp({st}, {2.0}, it1.stats);
  CHECK(it2.rewards == std::vector<double>{1.75});
  CHECK(it2.stats.m[int(TransitionType::Standing)] == 1.75);
  CHECK(it2.stats.m[int(TransitionType::GrowPlant)] == 3.0);

  // Iteration 3: both types again.
  auto it3 = reward_alpexp({gp, st}, {0.0, 1.0}, it2.stats);
  CHECK(it3.rewards == std::vector<double>{1.5, 1.375});
  CHECK(it3.stats.m[int(TransitionType::GrowPlant)] == 1.5);
  CHECK(it3.stats.m[int(TransitionType::Standing)] == 1.375);
}

TEST_CASE("type stats serialize through JSON") {
  TypeStats stats;
  stats.alpha = 0.75;
  stats.m[3] = 2.5;
  nlohmann::json j = stats;
  auto back = j.get<TypeStats>();
  CHECK(back.alpha == 0.75);
  CHECK(back.m == stats.m);
}

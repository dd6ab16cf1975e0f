#include "worldlab/evalsuite.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "worldlab/jsonio.hpp"
#include "worldlab/synthetic.hpp"

using namespace worldlab;
using namespace worldlab::env;
using namespace worldlab::evalsuite;
using worldlab::scoring::GenerationParams;
using worldlab::scoring::HypothesisSet;
using worldlab::scoring::PromptBundle;
using worldlab::scoring::ScoredContinuation;
using worldlab::scoring::SyntheticBackend;

namespace {

// True change always strictly on top.
struct PerfectScorer final : scoring::ScorerBackend {
  ScoredContinuation score(const PromptBundle& b) override {
    auto view = scoring::parse_statistician_user(b.user);
    auto truth = scoring::simulate_true_change(view->state_text, view->action_text);
    return scoring::make_scored(b.target == truth.change_text ? -0.5 : -50.0, 1);
  }
  std::string generate(const PromptBundle&, const GenerationParams&) override { return ""; }
};

// True change always strictly at the bottom.
struct AdversarialScorer final : scoring::ScorerBackend {
  ScoredContinuation score(const PromptBundle& b) override {
    auto view = scoring::parse_statistician_user(b.user);
    auto truth = scoring::simulate_true_change(view->state_text, view->action_text);
    return scoring::make_scored(b.target == truth.change_text ? -50.0 : -0.5, 1);
  }
  std::string generate(const PromptBundle&, const GenerationParams&) override { return ""; }
};

// Indifferent scorer: every candidate ties.
struct FlatScorer final : scoring::ScorerBackend {
  ScoredContinuation score(const PromptBundle&) override { return scoring::make_scored(-1.0, 1); }
  std::string generate(const PromptBundle&, const GenerationParams&) override { return ""; }
};

std::string full_coverage_text() {
  std::string h;
  for (const auto& r : scoring::canonical_rules()) {
    if (!h.empty()) h += ' ';
    h += r.sentence;
  }
  return h;
}

}  // namespace

TEST_CASE("test set has the exact prescribed mix") {
  auto set = build_testset(0);
  REQUIRE(set.records.size() == 168);
  auto hist = experimenter::type_histogram(set.records);
  CHECK(hist[0] == 120);
  CHECK(hist[1] == 20);
  CHECK(hist[2] == 7);
  CHECK(hist[3] == 12);
  CHECK(hist[4] == 6);
  CHECK(hist[5] == 3);
}

TEST_CASE("test set is deterministic per seed, varied across seeds") {
  auto a1 = build_testset(1);
  auto a2 = build_testset(1);
  auto b = build_testset(2);
  CHECK(a1.records == a2.records);
  CHECK(a1.records != b.records);
  CHECK(experimenter::type_histogram(a1.records) == experimenter::type_histogram(b.records));
}

TEST_CASE("test set survives a JSONL round trip") {
  auto set = build_testset(3);
  std::string blob;
  for (const auto& r : set.records) blob += nlohmann::json(r).dump() + "\n";
  std::vector<TransitionRecord> back;
  std::istringstream in(blob);
  std::string line;
  while (std::getline(in, line)) back.push_back(nlohmann::json::parse(line).get<TransitionRecord>());
  CHECK(back == set.records);
}

TEST_CASE("restyle switches every sentence but never the record identity") {
  auto set = build_testset(4);
  for (const auto& r : set.records) {
    auto g = restyle(r, RenderStyle::Generalization);
    CHECK(g.ttype == r.ttype);
    CHECK(g.state_before == r.state_before);
    CHECK(g.state_after == r.state_after);
    CHECK(g.action == r.action);
    CHECK(g.change_text != r.change_text);
    auto classified = classify_change_text(g.change_text);
    REQUIRE(classified.has_value());
    CHECK(*classified == r.ttype);
    CHECK(restyle(g, RenderStyle::Standard).change_text == r.change_text);
  }
}

TEST_CASE("per-type log-likelihood means under the synthetic backend") {
  SyntheticBackend backend;
  auto set = build_testset(5);

  auto baseline = eval_loglik(backend, {}, set, RenderStyle::Standard);
  for (int t = 0; t < kNumTransitionTypes; ++t)
    CHECK(baseline[t] == Catch::Approx(-4.0 - t).margin(1e-12));

  auto covered = eval_loglik(backend, {full_coverage_text(), 0, 0}, set, RenderStyle::Standard);
  for (int t = 0; t < kNumTransitionTypes; ++t)
    CHECK(covered[t] == Catch::Approx(-1.0).margin(1e-12));

  // Generalization style: same records, same analytic scores.
  auto gen = eval_loglik(backend, {}, set, RenderStyle::Generalization);
  for (int t = 0; t < kNumTransitionTypes; ++t)
    CHECK(gen[t] == Catch::Approx(-4.0 - t).margin(1e-12));
}

TEST_CASE("normalized auc formula") {
  const int T = 10;
  const double baseline = -8.0;

  SECTION("constant at baseline is exactly zero") {
    std::vector<double> series(T + 1, baseline);
    CHECK(auc(series, baseline, T) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("constant at zero is exactly one") {
    std::vector<double> series(T + 1, 0.0);
    series[0] = baseline;
    CHECK(auc(series, baseline, T) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("worse than baseline goes negative") {
    std::vector<double> series(T + 1, baseline * 2.0);
    series[0] = baseline;
    CHECK(auc(series, baseline, T) < 0.0);
  }
  SECTION("series bounded by baseline and zero gives auc in [0, 1]") {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> series(T + 1);
      series[0] = baseline;
      for (int t = 1; t <= T; ++t) series[t] = baseline * uniform01(rng);
      double a = auc(series, baseline, T);
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
  SECTION("zero baseline and bad lengths are rejected") {
    std::vector<double> series(T + 1, -1.0);
    CHECK_THROWS_AS(auc(series, 0.0, T), std::invalid_argument);
    CHECK_THROWS_AS(auc(series, baseline, T + 3), std::invalid_argument);
  }
}

TEST_CASE("sparse snapshots interpolate linearly") {
  auto series = interpolate_series({{0, -8.0}, {2, -4.0}, {4, -4.0}}, 4);
  CHECK(series == std::vector<double>{-8.0, -6.0, -4.0, -4.0, -4.0});
  CHECK_THROWS_AS(interpolate_series({{1, -8.0}, {4, -4.0}}, 4), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_series({{0, -8.0}, {3, -4.0}}, 4), std::invalid_argument);
}

TEST_CASE("enumerate_valid_next lists each reachable change once") {
  SECTION("fresh scene: only goto changes, one per distinct name") {
    EnvState s = new_scene(default_scene_spec(), 0);
    auto candidates = enumerate_valid_next(s);
    CHECK_FALSE(candidates.empty());
    for (const auto& [a, change] : candidates) {
      CHECK(a.kind == ActionKind::GoTo);
      CHECK(change.find("You are standing on the ") == 0);
    }
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::size_t j = i + 1; j < candidates.size(); ++j)
        CHECK(candidates[i].second != candidates[j].second);
  }
  SECTION("standing on a seed holding water includes the transformation") {
    EnvState s;
    s.scene = {make_object(ObjectClass::Plant, "beet", Stage::Young), make_object(ObjectClass::Water)};
    s.standing_on = 0;
    s.inventory = {make_object(ObjectClass::Water)};
    auto candidates = enumerate_valid_next(s);
    bool has_transform = std::any_of(candidates.begin(), candidates.end(), [](const auto& p) {
      return p.second == "The objects transform into the beet.";
    });
    CHECK(has_transform);
  }
  SECTION("single legal action gives a single candidate") {
    EnvState s;
    s.scene = {make_object(ObjectClass::Water), make_object(ObjectClass::Water)};
    s.standing_on = 0;
    s.inventory = {make_object(ObjectClass::Water), make_object(ObjectClass::Water)};
    // Inventory full, standing on water: the only legal action is the goto.
    auto candidates = enumerate_valid_next(s);
    CHECK(candidates.size() == 1);
  }
}

TEST_CASE("constrained top-3 accuracy over the test set") {
  auto set = build_testset(6);

  SECTION("a perfect scorer is right everywhere") {
    PerfectScorer backend;
    auto acc = constrained_topk(backend, {}, set, 3);
    for (int t = 0; t < kNumTransitionTypes; ++t) CHECK(acc[t] == 1.0);
  }
  SECTION("an adversarial scorer fails wherever more than k candidates exist") {
    AdversarialScorer backend;
    auto acc = constrained_topk(backend, {}, set, 3);
    // With the truth ranked dead last it can only sneak into the top 3 when
    // there are at most 3 candidates in total.
    TypeArray expected{};
    std::array<int, kNumTransitionTypes> count{};
    for (const auto& r : set.records) {
      expected[int(r.ttype)] += enumerate_valid_next(r.state_before).size() <= 3;
      ++count[int(r.ttype)];
    }
    for (int t = 0; t < kNumTransitionTypes; ++t) {
      CHECK(acc[t] == Catch::Approx(expected[t] / count[t]).margin(1e-12));
      CHECK(acc[t] < 1.0);
    }
  }
  SECTION("the synthetic backend ranks the true change first regardless of H") {
    SyntheticBackend backend;
    auto acc = constrained_topk(backend, {}, set, 3);
    for (int t = 0; t < kNumTransitionTypes; ++t) CHECK(acc[t] == 1.0);
    auto acc_cov = constrained_topk(backend, {full_coverage_text(), 0, 0}, set, 3);
    for (int t = 0; t < kNumTransitionTypes; ++t) CHECK(acc_cov[t] == 1.0);
  }
  SECTION("full ties straddling rank k count as misses") {
    FlatScorer backend;
    auto acc = constrained_topk(backend, {}, set, 3);
    TypeArray expected{};
    std::array<int, kNumTransitionTypes> count{};
    for (const auto& r : set.records) {
      expected[int(r.ttype)] += enumerate_valid_next(r.state_before).size() <= 3;
      ++count[int(r.ttype)];
    }
    for (int t = 0; t < kNumTransitionTypes; ++t)
      CHECK(acc[t] == Catch::Approx(expected[t] / count[t]).margin(1e-12));
  }
  SECTION("ranking is invariant under strictly monotone score transforms") {
    struct Doubled final : scoring::ScorerBackend {
      SyntheticBackend inner;
      ScoredContinuation score(const PromptBundle& b) override {
        auto s = inner.score(b);
        return scoring::make_scored(3.0 * s.total_logprob - 2.0, s.token_count);
      }
      std::string generate(const PromptBundle&, const GenerationParams&) override { return ""; }
    } transformed;
    SyntheticBackend plain;
    auto a = constrained_topk(plain, {}, set, 3);
    auto b = constrained_topk(transformed, {}, set, 3);
    CHECK(a == b);
  }
}

TEST_CASE("retention rate over a rolling window") {
  std::vector<scientist::ProposalRecord> proposals;
  auto add = [&](bool accepted) {
    scientist::ProposalRecord p;
    p.accepted = accepted;
    proposals.push_back(p);
  };

  SECTION("all accepted") {
    for (int i = 0; i < 10; ++i) add(true);
    auto series = retention_rate(proposals, 4);
    REQUIRE(series.size() == 7);
    for (double v : series) CHECK(v == 1.0);
  }
  SECTION("one accept per five steps") {
    for (int block = 0; block < 4; ++block)
      for (int i = 0; i < 5; ++i) add(i == 0);
    auto series = retention_rate(proposals, 5);
    for (double v : series) CHECK(v == Catch::Approx(0.2));
  }
  SECTION("none accepted") {
    for (int i = 0; i < 6; ++i) add(false);
    for (double v : retention_rate(proposals, 3)) CHECK(v == 0.0);
  }
  SECTION("window validation and short input") {
    CHECK_THROWS_AS(retention_rate(proposals, 0), std::invalid_argument);
    add(true);
    CHECK(retention_rate(proposals, 5).empty());
  }
}

TEST_CASE("eval csv round trip and auc summary") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "worldlab_eval_csv_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  EvalSnapshot base;
  base.iteration = 0;
  for (int t = 0; t < kNumTransitionTypes; ++t) base.mean_ll[t] = -4.0 - t;
  EvalSnapshot later;
  later.iteration = 4;
  for (int t = 0; t < kNumTransitionTypes; ++t) later.mean_ll[t] = -1.0;
  later.top3.emplace();
  for (int t = 0; t < kNumTransitionTypes; ++t) (*later.top3)[t] = 1.0;

  write_eval_csv(dir / "0000.csv", base);
  write_eval_csv(dir / "0004.csv", later);

  auto snaps = read_eval_csvs(dir);
  REQUIRE(snaps.size() == 2);
  CHECK(snaps[0].iteration == 0);
  CHECK(snaps[1].iteration == 4);
  CHECK(snaps[0].mean_ll == base.mean_ll);
  REQUIRE(snaps[1].top3.has_value());
  CHECK((*snaps[1].top3)[0] == 1.0);
  CHECK_FALSE(snaps[0].top3.has_value());

  auto aucs = auc_from_snapshots(snaps, 4);
  // Linear ramp from baseline to -1 over 4 iterations.
  for (int t = 0; t < kNumTransitionTypes; ++t) {
    double b = base.mean_ll[t];
    double expect = 0.0;
    for (int i = 1; i <= 4; ++i) expect += (b + ((-1.0) - b) * i / 4.0) / b;
    expect = 1.0 - expect / 4.0;
    CHECK(aucs[t] == Catch::Approx(expect).margin(1e-12));
  }

  write_summary_csv(dir / "summary.csv", aucs);
  std::ifstream in(dir / "summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "ttype,auc");
  fs::remove_all(dir);
}

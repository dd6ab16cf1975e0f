#pragma once

// Everything measured on the held-out side: the fixed-mix test set, per-type
// log-likelihood means, the normalized area-under-curve score, top-k ranking
// over environment-valid next states, and the proposal retention rate.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "worldlab/env.hpp"
#include "worldlab/experimenter.hpp"
#include "worldlab/parallel.hpp"
#include "worldlab/prompts.hpp"
#include "worldlab/rng.hpp"
#include "worldlab/scientist.hpp"
#include "worldlab/scoring.hpp"
#include "worldlab/text.hpp"

namespace worldlab::evalsuite {

using TypeArray = std::array<double, env::kNumTransitionTypes>;

// 168 records with exact per-type counts (120, 20, 7, 12, 6, 3). Held out:
// never fed to the theory generator.
struct TestSet {
  std::vector<env::TransitionRecord> records;
  std::uint64_t seed = 0;
};

inline TestSet build_testset(std::uint64_t seed,
                             const env::SceneSpec& scene = env::default_scene_spec(),
                             const env::EnvOptions& opt = {}) {
  experimenter::CollectorConfig cfg;
  cfg.scene = scene;
  cfg.env_opts = opt;
  Rng rng = make_rng(derive_seed(seed, 0x7e57));
  experimenter::detail::ScriptRunner runner(cfg, rng, nullptr);
  const auto& counts = experimenter::ideal_type_counts();
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    for (int i = 0; i < counts[t]; ++i)
      experimenter::collect_one_of_type(runner, static_cast<env::TransitionType>(t), cfg);
  }
  TestSet set;
  set.records = std::move(runner.records());
  set.seed = seed;
  return set;
}

// Re-renders a record's three texts in the requested style from the
// structured snapshots; the underlying record identity never changes.
inline env::TransitionRecord restyle(const env::TransitionRecord& r, env::RenderStyle style) {
  env::TransitionRecord out = r;
  out.state_text = env::render_state(r.state_before, style);
  out.action_text = env::render_action(r.action, style);
  out.change_text = env::render_change(out, style);
  return out;
}

// Mean per-record summed log-probability, by transition type.
inline TypeArray eval_loglik(scoring::ScorerBackend& backend, const scoring::HypothesisSet& h,
                             const TestSet& testset, env::RenderStyle style, int workers = 1) {
  std::vector<double> scores(testset.records.size());
  parallel_for(testset.records.size(), workers, [&](std::size_t i) {
    auto rec = restyle(testset.records[i], style);
    auto bundle =
        prompts::build_statistician_prompt(h, rec.state_text, rec.action_text, rec.change_text);
    scores[i] = backend.score(bundle).total_logprob;
  });
  TypeArray sum{};
  std::array<int, env::kNumTransitionTypes> count{};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum[static_cast<int>(testset.records[i].ttype)] += scores[i];
    ++count[static_cast<int>(testset.records[i].ttype)];
  }
  TypeArray mean{};
  for (int t = 0; t < env::kNumTransitionTypes; ++t)
    mean[t] = count[t] ? sum[t] / count[t] : 0.0;
  return mean;
}

// Normalized area under the log-likelihood curve:
//   1 - (1/T) * sum_{t=1..T} series[t] / baseline
// series[0] is the no-hypotheses point and does not enter the sum. 1 means
// the model became perfect, 0 means no improvement, negative means the
// hypotheses hurt.
inline double auc(const std::vector<double>& series, double baseline, int total_iterations) {
  if (baseline == 0.0) throw std::invalid_argument("auc: zero baseline");
  if (static_cast<int>(series.size()) != total_iterations + 1)
    throw std::invalid_argument("auc: series must have T+1 entries");
  double acc = 0.0;
  for (int t = 1; t <= total_iterations; ++t) acc += series[t] / baseline;
  return 1.0 - acc / total_iterations;
}

// Fills iterations between sparse eval snapshots by linear interpolation so
// auc() can integrate a stepwise-sampled curve. Points must be sorted, start
// at t = 0 and end at t = T.
inline std::vector<double> interpolate_series(const std::vector<std::pair<int, double>>& points,
                                              int total_iterations) {
  if (points.empty() || points.front().first != 0 || points.back().first != total_iterations)
    throw std::invalid_argument("interpolate_series: need samples at t=0 and t=T");
  std::vector<double> series(total_iterations + 1);
  std::size_t seg = 0;
  for (int t = 0; t <= total_iterations; ++t) {
    while (seg + 1 < points.size() && points[seg + 1].first < t) ++seg;
    if (points[seg].first == t) {
      series[t] = points[seg].second;
      continue;
    }
    const auto& [t0, v0] = points[seg];
    const auto& [t1, v1] = points[seg + 1];
    series[t] = v0 + (v1 - v0) * (t - t0) / static_cast<double>(t1 - t0);
  }
  return series;
}

// All changes reachable by one legal action from `state`, deduplicated by
// change text, in canonical action order.
inline std::vector<std::pair<env::Action, std::string>> enumerate_valid_next(
    const env::EnvState& state, env::RenderStyle style = env::RenderStyle::Standard,
    const env::EnvOptions& opt = {}) {
  std::vector<std::pair<env::Action, std::string>> out;
  for (const env::Action& a : env::legal_actions(state, opt)) {
    auto [next, rec] = env::step(state, a, style, opt);
    bool seen = std::any_of(out.begin(), out.end(),
                            [&](const auto& p) { return p.second == rec.change_text; });
    if (!seen) out.emplace_back(a, rec.change_text);
  }
  return out;
}

// Fraction of records whose true change ranks in the top k when every
// environment-valid change is scored under the record's state-action
// context. A tie straddling rank k counts as a miss.
inline TypeArray constrained_topk(scoring::ScorerBackend& backend,
                                  const scoring::HypothesisSet& h, const TestSet& testset,
                                  int k = 3, env::RenderStyle style = env::RenderStyle::Standard,
                                  const env::EnvOptions& opt = {}, int workers = 1) {
  if (k < 1) throw std::invalid_argument("constrained_topk: k must be >= 1");
  std::vector<int> hit(testset.records.size(), 0);
  parallel_for(testset.records.size(), workers, [&](std::size_t i) {
    auto rec = restyle(testset.records[i], style);
    auto candidates = enumerate_valid_next(rec.state_before, style, opt);
    double true_score = 0.0;
    std::vector<double> scores(candidates.size());
    bool found_true = false;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      auto bundle = prompts::build_statistician_prompt(h, rec.state_text, rec.action_text,
                                                       candidates[c].second);
      scores[c] = backend.score(bundle).total_logprob;
      if (candidates[c].second == rec.change_text) {
        true_score = scores[c];
        found_true = true;
      }
    }
    if (!found_true) throw std::logic_error("constrained_topk: true change not enumerated");
    int worse_rank = 1;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (candidates[c].second == rec.change_text) continue;
      worse_rank += scores[c] >= true_score;  // ties push the truth down
    }
    hit[i] = worse_rank <= k;
  });
  TypeArray acc{};
  std::array<int, env::kNumTransitionTypes> count{};
  for (std::size_t i = 0; i < hit.size(); ++i) {
    acc[static_cast<int>(testset.records[i].ttype)] += hit[i];
    ++count[static_cast<int>(testset.records[i].ttype)];
  }
  for (int t = 0; t < env::kNumTransitionTypes; ++t)
    if (count[t]) acc[t] /= count[t];
  return acc;
}

// Rolling fraction of accepted proposals over `window` consecutive steps.
inline std::vector<double> retention_rate(const std::vector<scientist::ProposalRecord>& proposals,
                                          std::size_t window) {
  if (window < 1) throw std::invalid_argument("retention_rate: window must be >= 1");
  std::vector<double> out;
  if (proposals.size() < window) return out;
  int accepted = 0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    accepted += proposals[i].accepted;
    if (i >= window) accepted -= proposals[i - window].accepted;
    if (i + 1 >= window) out.push_back(static_cast<double>(accepted) / window);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

struct EvalSnapshot {
  int iteration = 0;
  TypeArray mean_ll{};
  std::optional<TypeArray> top3;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void write_eval_csv(const std::filesystem::path& path, const EvalSnapshot& snap) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,ttype,mean_ll,top3_acc\n";
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    out << snap.iteration << ',' << env::ttype_name(static_cast<env::TransitionType>(t)) << ','
        << format_double(snap.mean_ll[t]) << ','
        << (snap.top3 ? format_double((*snap.top3)[t]) : std::string()) << '\n';
  }
}

inline std::vector<EvalSnapshot> read_eval_csvs(const std::filesystem::path& eval_dir) {
  std::vector<EvalSnapshot> snaps;
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(eval_dir))
    for (const auto& entry : std::filesystem::directory_iterator(eval_dir))
      if (entry.path().extension() == ".csv" && entry.path().filename() != "summary.csv")
        files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    std::getline(in, line);  // header
    EvalSnapshot snap;
    bool any = false;
    while (std::getline(in, line)) {
      std::size_t p1 = line.find(','), p2 = line.find(',', p1 + 1), p3 = line.find(',', p2 + 1);
      if (p1 == std::string::npos || p2 == std::string::npos || p3 == std::string::npos) continue;
      auto t = env::ttype_from_name(line.substr(p1 + 1, p2 - p1 - 1));
      if (!t) continue;
      snap.iteration = std::stoi(line.substr(0, p1));
      snap.mean_ll[static_cast<int>(*t)] = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
      std::string top3 = line.substr(p3 + 1);
      if (!top3.empty()) {
        if (!snap.top3) snap.top3.emplace();
        (*snap.top3)[static_cast<int>(*t)] = std::stod(top3);
      }
      any = true;
    }
    if (any) snaps.push_back(snap);
  }
  std::sort(snaps.begin(), snaps.end(),
            [](const EvalSnapshot& a, const EvalSnapshot& b) { return a.iteration < b.iteration; });
  return snaps;
}

// Per-type normalized AUC from eval snapshots; the t=0 snapshot is the
// baseline. Missing iterations are filled by linear interpolation.
inline TypeArray auc_from_snapshots(const std::vector<EvalSnapshot>& snaps, int total_iterations) {
  if (snaps.empty() || snaps.front().iteration != 0)
    throw std::invalid_argument("auc_from_snapshots: missing the t=0 baseline snapshot");
  TypeArray out{};
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    std::vector<std::pair<int, double>> points;
    for (const auto& s : snaps) points.emplace_back(s.iteration, s.mean_ll[t]);
    auto series = interpolate_series(points, total_iterations);
    out[t] = auc(series, snaps.front().mean_ll[t], total_iterations);
  }
  return out;
}

inline void write_summary_csv(const std::filesystem::path& path, const TypeArray& auc_per_type) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ttype,auc\n";
  for (int t = 0; t < env::kNumTransitionTypes; ++t)
    out << env::ttype_name(static_cast<env::TransitionType>(t)) << ','
        << format_double(auc_per_type[t]) << '\n';
}

}  // namespace worldlab::evalsuite

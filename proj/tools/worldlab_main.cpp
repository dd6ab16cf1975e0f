// worldlab command-line front end.
//
//   worldlab run --config cfg.json --out DIR [--seed N] [--resume DIR]
//   worldlab eval --run DIR [--generalization] [--iteration K] [--out FILE]
//   worldlab gen-testset --seed N --out FILE
//   worldlab plot-data --run DIR --out DIR

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "worldlab/evalsuite.hpp"
#include "worldlab/jsonio.hpp"
#include "worldlab/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace worldlab;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_flag, const std::string& resume_dir,
            std::optional<int> stop_after) {
  if (!resume_dir.empty()) {
    auto run = orchestrator::Run::resume(resume_dir);
    run.execute(stop_after);
    std::cout << "resumed " << resume_dir << " through iteration " << run.completed_iterations()
              << "\n";
    return 0;
  }
  auto cfg = orchestrator::load_config(config_path);
  std::vector<std::uint64_t> seeds = seed_flag ? std::vector<std::uint64_t>{*seed_flag} : cfg.seeds;
  for (std::uint64_t seed : seeds) {
    fs::path dir = seeds.size() == 1 ? fs::path(out_dir)
                                     : fs::path(out_dir) / ("seed_" + std::to_string(seed));
    orchestrator::Run run(cfg, dir, seed);
    run.execute(stop_after);
    std::cout << "run complete: " << dir.string() << " (" << run.completed_iterations()
              << " iterations)\n";
  }
  return 0;
}

scoring::HypothesisSet load_hypothesis(const fs::path& run_dir, std::optional<int> iteration) {
  std::ifstream in(run_dir / "hypotheses_accepted.jsonl");
  if (!in) throw std::runtime_error("no hypotheses_accepted.jsonl in " + run_dir.string());
  scoring::HypothesisSet h;
  bool found = !iteration.has_value() || *iteration == 0;
  std::string line;
  while (std::getline(in, line)) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    if (iteration && j.at("iteration").get<int>() != *iteration) continue;
    h.text = j.at("text").get<std::string>();
    h.created_iteration = j.value("created_iteration", 0);
    h.created_step = j.value("created_step", 0);
    found = true;
    if (iteration) break;
  }
  if (iteration && *iteration == 0) return {};  // explicit no-hypotheses baseline
  if (!found) throw std::runtime_error("iteration not found in hypotheses_accepted.jsonl");
  return h;
}

int cmd_eval(const std::string& run_dir_s, bool generalization, std::optional<int> iteration,
             std::string out_file) {
  fs::path run_dir(run_dir_s);
  std::ifstream snap(run_dir / "config.snapshot");
  if (!snap) throw std::runtime_error("no config.snapshot in " + run_dir_s);
  nlohmann::json j = nlohmann::json::parse(snap);
  auto cfg = j.get<orchestrator::RunConfig>();

  env::RenderStyle style = generalization ? env::RenderStyle::Generalization : cfg.style;
  auto backend = orchestrator::make_backend(cfg);
  auto testset = evalsuite::build_testset(cfg.test_seed, cfg.scene, cfg.env_opts);
  auto h = load_hypothesis(run_dir, iteration);

  evalsuite::EvalSnapshot result;
  result.iteration = iteration.value_or(-1);
  result.mean_ll = evalsuite::eval_loglik(*backend, h, testset, style, cfg.workers);
  result.top3 = evalsuite::constrained_topk(*backend, h, testset, 3, style, cfg.env_opts,
                                            cfg.workers);

  if (out_file.empty())
    out_file = (run_dir / "eval" /
                (generalization ? "final_generalization.csv" : "final.csv")).string();
  if (result.iteration < 0) result.iteration = 0;
  evalsuite::write_eval_csv(out_file, result);

  std::cout << "style: " << (style == env::RenderStyle::Generalization ? "generalization"
                                                                       : "standard")
            << "\nttype        mean_ll   top3\n";
  for (int t = 0; t < env::kNumTransitionTypes; ++t) {
    std::printf("%-12s %8.3f %6.3f\n", env::ttype_name(static_cast<env::TransitionType>(t)),
                result.mean_ll[t], (*result.top3)[t]);
  }
  std::cout << "written: " << out_file << "\n";
  return 0;
}

int cmd_gen_testset(std::uint64_t seed, const std::string& out_file) {
  auto set = evalsuite::build_testset(seed);
  std::ofstream out(out_file, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_file);
  for (const auto& rec : set.records) out << nlohmann::json(rec).dump() << "\n";
  std::cout << "wrote " << set.records.size() << " records to " << out_file << "\n";
  return 0;
}

int cmd_plot_data(const std::string& run_dir_s, const std::string& out_dir_s) {
  fs::path run_dir(run_dir_s), out_dir(out_dir_s);
  fs::create_directories(out_dir);

  std::ifstream snap(run_dir / "config.snapshot");
  if (!snap) throw std::runtime_error("no config.snapshot in " + run_dir_s);
  auto cfg = nlohmann::json::parse(snap).get<orchestrator::RunConfig>();

  // Log-likelihood (and top-3) series behind the learning curves.
  auto snaps = evalsuite::read_eval_csvs(run_dir / "eval");
  {
    std::ofstream out(out_dir / "loglik_series.csv", std::ios::trunc);
    out << "iteration,ttype,mean_ll,top3_acc\n";
    for (const auto& s : snaps)
      for (int t = 0; t < env::kNumTransitionTypes; ++t)
        out << s.iteration << ',' << env::ttype_name(static_cast<env::TransitionType>(t)) << ','
            << evalsuite::format_double(s.mean_ll[t]) << ','
            << (s.top3 ? evalsuite::format_double((*s.top3)[t]) : std::string()) << '\n';
  }

  // Collected-transition proportions per iteration.
  {
    std::ifstream in(run_dir / "collection_stats.csv");
    if (!in) throw std::runtime_error("no collection_stats.csv in " + run_dir_s);
    std::ofstream out(out_dir / "collection_proportions.csv", std::ios::trunc);
    out << "iteration,Standing,Holding1,Holding2,GrowPlant,GrowSH,GrowBH\n";
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::size_t start = 0;
      while (start <= line.size()) {
        std::size_t comma = line.find(',', start);
        cells.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (cells.size() < 7) continue;
      double total = 0.0;
      for (int t = 0; t < 6; ++t) total += std::stod(cells[1 + t]);
      out << cells[0];
      for (int t = 0; t < 6; ++t)
        out << ',' << evalsuite::format_double(total > 0 ? std::stod(cells[1 + t]) / total : 0.0);
      out << '\n';
    }
  }

  // Rolling proposal retention rate.
  {
    std::vector<scientist::ProposalRecord> proposals;
    std::ifstream in(run_dir / "hypotheses.jsonl");
    std::string line;
    while (in && std::getline(in, line)) {
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (!j.is_discarded()) proposals.push_back(j.get<scientist::ProposalRecord>());
    }
    auto series = evalsuite::retention_rate(
        proposals, static_cast<std::size_t>(std::max(1, cfg.retention_window)));
    std::ofstream out(out_dir / "retention.csv", std::ios::trunc);
    out << "step,retention_rate\n";
    for (std::size_t i = 0; i < series.size(); ++i)
      out << (i + cfg.retention_window) << ',' << evalsuite::format_double(series[i]) << '\n';
  }

  // Normalized AUC summary.
  if (!snaps.empty() && snaps.front().iteration == 0 && snaps.size() > 1) {
    int last = snaps.back().iteration;
    evalsuite::write_summary_csv(out_dir / "summary.csv",
                                 evalsuite::auc_from_snapshots(snaps, last));
  }
  std::cout << "plot data written to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypothesis-refining world-model loop on a textual crafting environment"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "execute a full loop from a config file");
  std::string config_path, out_dir = "run", resume_dir;
  std::uint64_t seed_value = 0;
  bool seed_given = false;
  int stop_after_value = 0;
  bool stop_after_given = false;
  run->add_option("--config", config_path, "config JSON file");
  run->add_option("--out", out_dir, "output run directory");
  run->add_option("--resume", resume_dir, "resume an existing run directory");
  run->add_option("--seed", seed_value, "override the config seed list")
      ->each([&](const std::string&) { seed_given = true; });
  run->add_option("--stop-after", stop_after_value,
                  "stop after this many iterations in this invocation")
      ->each([&](const std::string&) { stop_after_given = true; });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a run's hypotheses on the test set");
  std::string eval_run, eval_out;
  bool generalization = false;
  int eval_iteration = -1;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_flag("--generalization", generalization, "use the alternate observation syntax");
  eval->add_option("--iteration", eval_iteration, "evaluate this iteration's hypotheses (0 = none)");
  eval->add_option("--out", eval_out, "output CSV path");

  // gen-testset
  auto* gen = app.add_subcommand("gen-testset", "write the 168-record test set as JSONL");
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "test set seed");
  gen->add_option("--out", gen_out, "output JSONL path")->required();

  // plot-data
  auto* plot = app.add_subcommand("plot-data", "emit CSV series for plotting");
  std::string plot_run, plot_out;
  plot->add_option("--run", plot_run, "run directory")->required();
  plot->add_option("--out", plot_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (resume_dir.empty() && config_path.empty())
        throw std::runtime_error("run needs --config (or --resume)");
      return cmd_run(config_path, out_dir,
                     seed_given ? std::optional(seed_value) : std::nullopt, resume_dir,
                     stop_after_given ? std::optional(stop_after_value) : std::nullopt);
    }
    if (eval->parsed())
      return cmd_eval(eval_run, generalization,
                      eval_iteration >= 0 ? std::optional(eval_iteration) : std::nullopt,
                      eval_out);
    if (gen->parsed()) return cmd_gen_testset(gen_seed, gen_out);
    if (plot->parsed()) return cmd_plot_data(plot_run, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

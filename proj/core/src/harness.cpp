#include "alignlab/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "alignlab/checkpoint.hpp"
#include "alignlab/error.hpp"
#include "alignlab/vocab.hpp"

namespace alignlab {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("alignlab_out");
}

fs::path run_directory(const fs::path& root, const RunConfig& cfg) {
  return root / ("run-" + cfg.hash());
}

namespace {

json diagnostics_json(const StepDiagnostics& d, const std::string& run) {
  return json{{"run", run},
              {"step", d.step},
              {"loss", d.loss},
              {"mean_reward", d.mean_reward},
              {"mean_length", d.mean_length},
              {"mean_entropy", d.mean_entropy},
              {"clip_fraction", d.clip_fraction},
              {"skip_count", d.skip_count},
              {"generator_version", d.generator_version},
              {"grad_norm", d.grad_norm},
              {"updated", d.updated}};
}

json rollout_json(const Rollout& r, double reward) {
  return json{{"prompt", vocab::render(r.prompt)},
              {"response", vocab::render(r.response)},
              {"tokens", r.response},
              {"gen_version", r.gen_version},
              {"reward", reward}};
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

// Streams a training run into its directory.
class RunWriter : public TrainingObserver {
 public:
  RunWriter(const fs::path& dir, const RunConfig& cfg)
      : dir_(dir), hash_(cfg.hash()),
        metrics_(dir / "metrics.jsonl", std::ios::binary),
        validation_(dir / "validation.jsonl", std::ios::binary),
        rollouts_(dir / "rollouts.jsonl", std::ios::binary) {
    if (!metrics_ || !validation_ || !rollouts_) {
      throw Error("cannot create run files in '" + dir.string() + "'");
    }
  }

  void on_step(const StepOutput& out) override {
    metrics_ << diagnostics_json(out.diagnostics, hash_).dump() << '\n';
    // first group of every step, enough to inspect what the policy produces
    if (!out.groups.empty()) {
      const ResponseGroup& g = out.groups.front();
      json rec{{"run", hash_}, {"step", out.diagnostics.step}, {"rollouts", json::array()}};
      for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
        rec["rollouts"].push_back(rollout_json(g.rollouts[i], g.rewards[i]));
      }
      rollouts_ << rec.dump() << '\n';
    }
  }

  void on_checkpoint(const CheckpointRecord& r, const EvalReport& report) override {
    const std::string name = checkpoint_name(r.step);
    save_checkpoint((dir_ / "checkpoints" / name).string(), r.params, hash_);
    validation_ << json{{"run", hash_},
                        {"step", r.step},
                        {"checkpoint", "checkpoints/" + name},
                        {"score", r.score},
                        {"raw_reward", r.raw_reward},
                        {"mean_length", r.mean_length},
                        {"mean_entropy", r.mean_entropy},
                        {"verifiable_accuracy", r.verifiable_accuracy},
                        {"nonverifiable_raw", r.nonverifiable_raw},
                        {"nonverifiable_normalized", r.nonverifiable_normalized},
                        {"stderr", report.stderr_mean}}
                       .dump()
                << '\n';
  }

  void flush() {
    metrics_.flush();
    validation_.flush();
    rollouts_.flush();
  }

 private:
  fs::path dir_;
  std::string hash_;
  std::ofstream metrics_;
  std::ofstream validation_;
  std::ofstream rollouts_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

json manifest_json(const RunConfig& cfg) {
  return json{{"config_hash", cfg.hash()},
              {"seed", cfg.seed},
              {"artifact_version", kArtifactVersion},
              {"config", cfg.serialize()},
              {"layout",
               {{"metrics", "metrics.jsonl"},
                {"validation", "validation.jsonl"},
                {"rollouts", "rollouts.jsonl"},
                {"checkpoints", "checkpoints/"},
                {"validation_set", "validation_set.jsonl"},
                {"test_set", "test_set.jsonl"},
                {"selection", "selection.jsonl"},
                {"best", "best.txt"}}}};
}

}  // namespace

int cmd_train(const std::string& config_path, const fs::path& root, std::ostream& out,
              std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << '\n';
    return 2;
  }
  const fs::path dir = run_directory(root, cfg);
  try {
    fs::create_directories(dir / "checkpoints");
    write_text(dir / "manifest.json", manifest_json(cfg).dump(2) + "\n");
    const TrainingData data = make_training_data(cfg);
    for (const auto& [name, records] : {std::pair{"validation_set.jsonl", data.validation()},
                                        std::pair{"test_set.jsonl", data.test()}}) {
      std::ofstream set(dir / name, std::ios::binary);
      write_jsonl(set, records);
    }
    RunWriter writer(dir, cfg);
    const TrainingResult result = run_training(cfg, &writer);
    writer.flush();
    std::string selection;
    for (const CheckpointRecord& r : result.checkpoints) {
      selection += json{{"run", cfg.hash()},
                        {"step", r.step},
                        {"score", r.score},
                        {"raw_reward", r.raw_reward},
                        {"mean_length", r.mean_length}}
                       .dump() +
                   '\n';
    }
    write_text(dir / "selection.jsonl", selection);
    const CheckpointRecord& best = result.best_record();
    write_text(dir / "best.txt", "checkpoints/" + checkpoint_name(best.step) + "\n");
    out << "run " << dir.string() << ": " << result.history.size() << " steps, best step "
        << best.step << " score " << best.score << '\n';
    return 0;
  } catch (const DivergenceError& e) {
    write_text(dir / "divergence.json",
               json{{"run", cfg.hash()}, {"step", e.step()}, {"error", e.what()}}.dump(2) + "\n");
    err << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "training failed: " << e.what() << '\n';
    return 1;
  }
}

EvalReport cmd_eval(const EvalArgs& args) {
  const LoadedCheckpoint ck = load_checkpoint(args.checkpoint);
  std::ifstream in(args.dataset);
  if (!in) throw InvalidInputError("cannot read dataset '" + args.dataset + "'");
  const std::vector<PromptRecord> problems = read_jsonl(in);
  if (ck.params.shape.vocab != vocab::kSize) {
    throw IncompatibleCheckpointError("checkpoint vocabulary has " +
                                      std::to_string(ck.params.shape.vocab) +
                                      " tokens, datasets use " + std::to_string(vocab::kSize));
  }
  for (const PromptRecord& p : problems) {
    for (Token t : p.prompt) {
      if (t < 0 || t >= ck.params.shape.vocab) {
        throw IncompatibleCheckpointError("record '" + p.id + "' uses token " +
                                          std::to_string(t) + " outside the checkpoint vocabulary");
      }
    }
  }
  EvalOptions o;
  o.samples = args.n;
  o.temperature = args.temperature;
  o.top_p = args.top_p;
  o.max_len = args.max_len;
  o.seed = args.seed;
  o.reward = args.reward;
  return evaluate(ck.params, problems, o);
}

std::string eval_report_json(const EvalReport& r) {
  json per = json::array();
  for (const ProblemResult& p : r.per_problem) {
    per.push_back({{"id", p.id},
                   {"kind", to_string(p.kind)},
                   {"score", p.score},
                   {"mean_length", p.mean_length}});
  }
  json j{{"mean", r.mean},
         {"stderr", r.stderr_defined ? json(r.stderr_mean) : json(nullptr)},
         {"stderr_defined", r.stderr_defined},
         {"samples", r.samples},
         {"mean_length", r.mean_length},
         {"verifiable_accuracy", r.verifiable_accuracy},
         {"nonverifiable_raw", r.nonverifiable_raw},
         {"nonverifiable_normalized", r.nonverifiable_normalized},
         {"per_problem", per}};
  return j.dump(2);
}

std::optional<SweepAxis> parse_axis(std::string_view text) {
  if (text == "s") return SweepAxis::kS;
  if (text == "n" || text == "grpo_n") return SweepAxis::kN;
  if (text == "algo") return SweepAxis::kAlgo;
  return std::nullopt;
}

std::vector<SweepSetting> sweep_settings(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kS:
      return {{"s=inf", {{"schedule.s", "inf"}}},
              {"s=100", {{"schedule.s", "100"}}},
              {"s=10", {{"schedule.s", "10"}}},
              {"s=5", {{"schedule.s", "5"}}},
              {"s=1", {{"schedule.s", "1"}}}};
    case SweepAxis::kN:
      return {{"grpo n=4", {{"algo", "grpo"}, {"schedule.s", "1"}, {"sampling.n", "4"}}},
              {"grpo n=8", {{"algo", "grpo"}, {"schedule.s", "1"}, {"sampling.n", "8"}}},
              {"grpo n=12", {{"algo", "grpo"}, {"schedule.s", "1"}, {"sampling.n", "12"}}}};
    case SweepAxis::kAlgo:
      return {{"offline dpo", {{"algo", "dpo"}, {"schedule.s", "inf"}}},
              {"semi-online dpo (s=10)", {{"algo", "dpo"}, {"schedule.s", "10"}}},
              {"online dpo (s=1)", {{"algo", "dpo"}, {"schedule.s", "1"}}},
              {"grpo", {{"algo", "grpo"}, {"schedule.s", "1"}}}};
  }
  return {};
}

bool SweepTable::complete() const {
  if (cells.size() != settings.size() * static_cast<std::size_t>(repeats)) return false;
  for (const SweepCell& c : cells) {
    if (!c.error.empty()) return false;
  }
  return true;
}

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return "n/a";
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= static_cast<double>(xs.size());
  if (xs.size() < 2) return fmt(mu) + " (-)";
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  const double se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
                    std::sqrt(static_cast<double>(xs.size()));
  return fmt(mu) + " (" + fmt(se) + ")";
}

}  // namespace

std::string SweepTable::to_csv() const {
  std::string out = "setting,repeat,final,best,status\n";
  for (const SweepCell& c : cells) {
    out += '"' + c.setting + "\"," + std::to_string(c.repeat) + ',';
    out += (c.final_score ? fmt(*c.final_score, 6) : std::string()) + ',';
    out += (c.best_score ? fmt(*c.best_score, 6) : std::string()) + ',';
    out += c.error.empty() ? "ok" : "incomplete";
    out += '\n';
  }
  return out;
}

std::string SweepTable::to_markdown() const {
  std::string out = "| setting | final | best |\n|---|---|---|\n";
  for (const std::string& s : settings) {
    std::vector<double> finals;
    std::vector<double> bests;
    int missing = 0;
    for (const SweepCell& c : cells) {
      if (c.setting != s) continue;
      if (!c.error.empty()) {
        ++missing;
        continue;
      }
      finals.push_back(*c.final_score);
      bests.push_back(*c.best_score);
    }
    std::string mark;
    if (missing > 0) {
      mark = " incomplete (" + std::to_string(repeats - missing) + "/" +
             std::to_string(repeats) + ")";
    }
    out += "| " + s + " | " + mean_stderr(finals) + mark + " | " + mean_stderr(bests) + mark +
           " |\n";
  }
  return out;
}

SweepTable cmd_sweep(const RunConfig& base, SweepAxis axis, int repeats, int jobs,
                     const RunFunction& run) {
  if (repeats < 1) throw InvalidInputError("sweep: repeats must be >= 1");
  base.validate();
  const RunFunction runner = run ? run : [](const RunConfig& c) { return run_training(c); };
  const std::vector<SweepSetting> settings = sweep_settings(axis);

  SweepTable table;
  table.axis = axis;
  table.repeats = repeats;
  for (const SweepSetting& s : settings) {
    table.settings.push_back(s.label);
    for (int r = 0; r < repeats; ++r) table.cells.push_back({s.label, r, {}, {}, {}});
  }

  auto run_cell = [&](std::size_t index) {
    SweepCell& cell = table.cells[index];
    const SweepSetting& s = settings[index / static_cast<std::size_t>(repeats)];
    try {
      RunConfig cfg = base;
      for (const auto& [k, v] : s.overrides) set_config_value(cfg, k, v);
      cfg.seed = base.seed + static_cast<std::uint64_t>(cell.repeat);
      cfg.validate();
      const TrainingResult result = runner(cfg);
      cell.final_score = result.checkpoints.back().score;
      cell.best_score = result.best_record().score;
    } catch (const std::exception& e) {
      cell.error = e.what();
      if (cell.error.empty()) cell.error = "failed";
    }
  };

  const std::size_t width = static_cast<std::size_t>(std::max(jobs, 1));
  for (std::size_t start = 0; start < table.cells.size(); start += width) {
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < std::min(start + width, table.cells.size()); ++i) {
      if (width == 1) {
        run_cell(i);
      } else {
        batch.push_back(std::async(std::launch::async, run_cell, i));
      }
    }
    for (auto& f : batch) f.get();
  }
  return table;
}

}  // namespace alignlab

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "isp/diagnostics.hpp"
#include "isp/key_value.hpp"
#include "isp/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

int run_train(const std::string& config_path, const std::string& out_dir, bool quiet) {
  const isp::TrainConfig config = isp::TrainConfig::from_file(config_path);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text(out / "config.txt", config.to_text());

  const isp::RunSetup run = isp::build_run(config);
  std::vector<isp::SeedResult> results;
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = out / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
    metrics << isp::metrics_csv_header() << '\n';
    isp::TrainResult trained =
        isp::train(run.encoder, run.task, config, seed, [&](const isp::EpochMetrics& m) {
          metrics << isp::metrics_csv_row(m) << '\n';
          metrics.flush();
          if (!quiet) {
            std::fprintf(stderr, "seed %llu epoch %d ce %.4f alpha %.4f reg %.4f acc %.3f\n",
                         static_cast<unsigned long long>(seed), m.epoch, m.mean_ce,
                         m.mean_alpha, m.mean_reg, m.base_train_acc);
          }
        });
    isp::save_checkpoint(dir / "checkpoint.ispw",
                         isp::Checkpoint{config, seed, run.encoder, trained.prompts});
    results.push_back(isp::evaluate_seed(run.encoder, run.task, trained.prompts, config, seed));
  }
  const isp::EvalReport report = isp::summarize(results, config.hash());
  write_text(out / "report.txt", report.to_text());
  std::cout << report.to_text();
  return 0;
}

isp::RunSetup rebuild_task(const isp::Checkpoint& ckpt, std::optional<long long> task_seed) {
  isp::TaskConfig task_config = ckpt.config.task;
  if (task_seed) task_config.seed = static_cast<std::uint64_t>(*task_seed);
  isp::FewShotTask task = isp::generate_task(ckpt.encoder, task_config);
  isp::FrozenEncoder encoder = ckpt.encoder.with_class_embeddings(task.class_embeddings);
  return isp::RunSetup{std::move(encoder), std::move(task)};
}

int run_eval(const std::string& ckpt_path, std::optional<long long> task_seed) {
  const isp::Checkpoint ckpt = isp::load_checkpoint(ckpt_path);
  const isp::RunSetup run = rebuild_task(ckpt, task_seed);
  const isp::SeedResult result =
      isp::evaluate_seed(run.encoder, run.task, ckpt.prompts, ckpt.config, ckpt.seed);
  std::cout << isp::summarize({result}, ckpt.config.hash()).to_text();
  return 0;
}

int run_grad_check(const std::string& op, bool list) {
  if (list) {
    for (const std::string& name : isp::grad_check_names()) std::cout << name << '\n';
    return 0;
  }
  bool ok = true;
  for (const isp::GradReport& r : isp::run_grad_checks(op)) {
    const bool pass = r.max_rel_err <= isp::kGradCheckTolerance;
    ok = ok && pass;
    std::printf("%-24s params %6zu  max_rel_err %.3e  %s\n", r.op_name.c_str(),
                r.analytic.size(), r.max_rel_err, pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

int run_probe_dump(const std::string& ckpt_path, const std::string& out_path) {
  const isp::Checkpoint ckpt = isp::load_checkpoint(ckpt_path);
  const isp::RunSetup run = rebuild_task(ckpt, std::nullopt);
  const std::string csv =
      isp::probe_csv(isp::probe_dump(run.encoder, run.task, ckpt.prompts, ckpt.config));
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    write_text(out_path, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Integrated structural prompt learning on a frozen dual encoder"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, op, probe_out;
  long long task_seed = 0;
  bool quiet = false, list = false;

  auto* train = app.add_subcommand("train", "Train prompts for every configured seed");
  train->add_option("--config", config_path, "key = value configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on base and new classes");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = eval->add_option("--task-seed", task_seed,
                                    "Task generator seed (default: the training task)");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  grad->add_option("--op", op, "Run a single check");
  grad->add_flag("--list", list, "List check names");

  auto* probe = app.add_subcommand("probe-dump", "Per-sample probing weights on the train set");
  probe->add_option("--ckpt", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  probe->add_option("--out", probe_out, "CSV output path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, out_dir, quiet);
    if (*eval) {
      return run_eval(ckpt_path, seed_opt->count() ? std::optional<long long>(task_seed)
                                                   : std::nullopt);
    }
    if (*grad) return run_grad_check(op, list);
    if (*probe) return run_probe_dump(ckpt_path, probe_out);
  } catch (const isp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include <iostream>

#include <CLI11.hpp>

#include "ulab/kernels.hpp"
#include "ulab/pipeline.hpp"

namespace {

int exit_code(ulab::errc kind) {
  switch (kind) {
    case ulab::errc::validation: return 2;
    case ulab::errc::gate: return 3;
    case ulab::errc::io: return 4;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unlearn-lab: train micro language models on synthetic knowledge graphs, "
               "delete facts with rank-one edits, and measure the side effects"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  int jobs = 0;
  std::string subject, relation;

  app.add_option("--config", config_path, "run configuration file (json)")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_flag("--force", force, "overwrite existing synth artifacts");
  app.add_option("--jobs", jobs, "parallel deletion jobs for sweep");
  app.add_option("--subject", subject, "subject name for delete (any paraphrase)");
  app.add_option("--relation", relation, "relation name for delete (any paraphrase)");

  auto* cmd_synth = app.add_subcommand("synth", "synthesize graph, names and corpus");
  auto* cmd_train = app.add_subcommand("train", "train the base checkpoint");
  auto* cmd_trace = app.add_subcommand("trace", "causal tracing and edit-layer selection");
  auto* cmd_delete = app.add_subcommand("delete", "delete one fact and write an edit report");
  auto* cmd_sweep = app.add_subcommand("sweep", "per-subject deletion sweep");
  auto* cmd_analyze = app.add_subcommand("analyze", "correlations, stats, PCA and figures");
  auto* cmd_repro = app.add_subcommand("repro", "run the full grid of kinds x depths");

  CLI11_PARSE(app, argc, argv);

  try {
    ulab::RunConfig cfg = ulab::load_run_config(config_path);
    if (jobs > 0) cfg.jobs = jobs;

    std::cout << "kernels: " << ulab::kernels::backend_name() << "\n";

    if (cmd_repro->parsed()) {
      ulab::run_repro(cfg, force, std::cout);
      return 0;
    }

    ulab::Pipeline p(cfg);
    if (cmd_synth->parsed()) {
      p.synth(force);
      std::cout << "synth: wrote " << p.paths().root.string() << "\n";
    } else if (cmd_train->parsed()) {
      const bool reached = p.train(&std::cout);
      if (!reached) {
        std::cerr << "train: accuracy target not reached (recorded in the manifest)\n";
        return 3;
      }
      std::cout << "train: checkpoint at " << p.paths().checkpoint_base.string() << "\n";
    } else if (cmd_trace->parsed()) {
      p.trace();
      std::cout << "trace: edit layer " << p.effective_edit_layer() << "\n";
    } else if (cmd_delete->parsed()) {
      if (subject.empty()) {
        std::cerr << "delete requires --subject\n";
        return 2;
      }
      const auto report = p.delete_one(subject, relation);
      std::cout << "delete: report at " << report.string() << "\n";
    } else if (cmd_sweep->parsed()) {
      p.run_sweep();
      std::cout << "sweep: impact table at " << p.paths().impact_csv_path.string() << "\n";
    } else if (cmd_analyze->parsed()) {
      p.analyze();
      std::cout << "analyze: summary at " << p.paths().summary_json.string() << "\n";
    }
    return 0;
  } catch (const ulab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
}

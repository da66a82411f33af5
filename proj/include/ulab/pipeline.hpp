#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "ulab/analysis.hpp"
#include "ulab/graph.hpp"
#include "ulab/train.hpp"
#include "ulab/tracing.hpp"

namespace ulab {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::string run_name;
  std::filesystem::path output_root = "runs";

  // graph
  GraphKind graph_kind = GraphKind::ba;
  int n_entities = 200;
  int n_relations = 50;
  int ba_m = 2;
  std::optional<double> er_p;  // absent: matched to the BA edge count
  uint64_t graph_seed = 0;

  // corpus
  double sample_fraction = 0.2;
  uint64_t corpus_seed = 0;

  // model + training
  int n_layers = 6;
  int d_model = 256;
  int n_heads = 4;
  int d_ff = 1024;
  uint64_t model_seed = 0;
  TrainHyperparams train;

  // tracing
  NoiseSpec noise;
  int probe_count = 20;
  uint64_t trace_seed = 0;

  // edit
  std::optional<int> edit_layer_override;
  double ridge_scale = 1e-4;
  ValueOptParams value_opt;

  // analysis
  bool include_deleted_fact = true;
  std::string degree_variant = "total";  // headline correlation
  uint64_t sweep_seed = 0;
  int jobs = 1;
  double accuracy_gate = 0.98;

  // repro grid
  std::vector<std::string> repro_kinds = {"er", "ba"};
  std::vector<int> repro_depths = {6, 12, 24};

  double effective_er_p() const;
  ModelConfig model_config(int vocab_size) const;
  std::string canonical_json() const;  // stable dump used for the config hash
  std::string config_hash() const;
};

// Strict parser: unknown keys and missing seeds are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& file);

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path graph_json, vocab_json, corpus_full, corpus_train;
  std::filesystem::path checkpoints_dir, checkpoint_base, metrics_csv;
  std::filesystem::path traces_dir, trace_csv, trace_svg, selection_json;
  std::filesystem::path edits_dir;
  std::filesystem::path analysis_dir, impact_csv_path, efficacy_csv_path, summary_json;
  std::filesystem::path pca_entities_csv, pca_relations_csv;
  std::filesystem::path degree_impact_svg_path, pca_entities_svg, pca_relations_svg;
  std::filesystem::path manifest_json, lock_file;
};

RunPaths run_paths(const std::filesystem::path& run_dir);

// Serializes one pipeline stage per run directory via an exclusive lock file.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& file);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path file_;
};

class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const RunPaths& paths() const { return paths_; }

  // Stage entry points. Each validates upstream artifacts against the
  // manifest checksums and refuses stale or foreign inputs.
  void synth(bool force = false);
  bool train(std::ostream* log = nullptr);  // false when below target
  void trace();
  void run_sweep();
  void analyze();

  // One-off deletion; relation may be empty for a seeded choice among the
  // subject's outgoing facts. Returns the path of the written report.
  std::filesystem::path delete_one(const std::string& subject_name,
                                   const std::string& relation_name);

  bool stage_fresh(const std::string& stage) const;
  int effective_edit_layer() const;  // override or traced selection

  // Loaded artifact views (validated against the manifest).
  KnowledgeGraph load_graph() const;
  Corpus load_corpus(const KnowledgeGraph& g, const NameTable& names) const;

 private:
  RunConfig cfg_;
  RunPaths paths_;

  void record_stage(const std::string& stage, double wall_seconds,
                    const std::vector<std::filesystem::path>& artifacts,
                    const std::vector<std::pair<std::string, std::string>>& extra = {});
  void require_fresh_upstream(const std::vector<std::string>& stages) const;
};

// Chains synth -> train -> trace -> sweep -> analyze over the configured
// kinds x depths grid, skipping stages whose artifacts are already fresh.
// Returns the run directories in grid order.
std::vector<std::filesystem::path> run_repro(const RunConfig& base, bool force,
                                             std::ostream& log);

// UNLEARN_LAB_DIR, when set, overrides the configured output root.
std::filesystem::path resolve_output_root(const std::filesystem::path& configured);

}  // namespace ulab

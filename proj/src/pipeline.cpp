#include "ulab/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ulab/checkpoint.hpp"
#include "ulab/kernels.hpp"
#include "ulab/report.hpp"

namespace ulab {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  require(obj.is_object(), errc::validation, "config section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    require(ok.count(key) == 1, errc::validation,
            "unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
T get_req(const json& obj, const std::string& section, const char* key) {
  require(obj.contains(key), errc::validation,
          "config section '" + section + "' is missing required key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(errc::validation, "config key '" + section + "." + key + "': " + e.what());
  }
}

template <typename T>
T get_opt(const json& obj, const std::string& section, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(errc::validation, "config key '" + section + "." + key + "': " + e.what());
  }
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

double RunConfig::effective_er_p() const {
  return er_p.has_value() ? *er_p : er_probability_matching_ba(n_entities, ba_m);
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig mc;
  mc.n_layers = n_layers;
  mc.d_model = d_model;
  mc.n_heads = n_heads;
  mc.d_ff = d_ff;
  mc.vocab_size = vocab_size;
  mc.seed = model_seed;
  return mc;
}

std::string RunConfig::canonical_json() const {
  ordered_json j;
  j["run"] = {{"name", run_name}, {"output_root", output_root.string()}};
  ordered_json graph{{"kind", to_string(graph_kind)},
                     {"n_entities", n_entities},
                     {"n_relations", n_relations},
                     {"m", ba_m},
                     {"seed", graph_seed}};
  if (er_p.has_value()) graph["p"] = *er_p;
  j["graph"] = graph;
  j["corpus"] = {{"sample_fraction", sample_fraction}, {"seed", corpus_seed}};
  j["model"] = {{"n_layers", n_layers}, {"d_model", d_model},   {"n_heads", n_heads},
                {"d_ff", d_ff},         {"seed", model_seed}};
  j["train"] = {{"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"warmup_steps", train.warmup_steps},
                {"max_epochs", train.max_epochs},
                {"target_full_accuracy", train.target_full_accuracy},
                {"full_lm_loss", train.full_lm_loss},
                {"seed", train.seed}};
  j["tracing"] = {{"noise_multiplier", noise.std_multiplier},
                  {"noise_samples", noise.samples},
                  {"probe_count", probe_count},
                  {"seed", trace_seed}};
  ordered_json edit{{"ridge_scale", ridge_scale},
                    {"value_opt_steps", value_opt.max_steps},
                    {"value_opt_target_prob", value_opt.target_probability},
                    {"value_opt_lr", value_opt.learning_rate},
                    {"value_opt_weight_decay", value_opt.weight_decay}};
  if (edit_layer_override.has_value()) edit["layer_override"] = *edit_layer_override;
  j["edit"] = edit;
  j["analysis"] = {{"include_deleted_fact", include_deleted_fact},
                   {"degree_variant", degree_variant},
                   {"sweep_seed", sweep_seed},
                   {"jobs", jobs},
                   {"accuracy_gate", accuracy_gate}};
  j["repro"] = {{"kinds", repro_kinds}, {"depths", repro_depths}};
  return j.dump(2) + "\n";
}

std::string RunConfig::config_hash() const {
  // jobs is an execution detail, not an experiment parameter: hash without it
  RunConfig c = *this;
  c.jobs = 1;
  const std::string s = c.canonical_json();
  return checksum_bytes(s.data(), s.size());
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(errc::validation, std::string("config parse error: ") + e.what());
  }
  check_keys(j, "<root>",
             {"run", "graph", "corpus", "model", "train", "tracing", "edit", "analysis",
              "repro"});
  RunConfig c;

  require(j.contains("run"), errc::validation, "config is missing the 'run' section");
  check_keys(j.at("run"), "run", {"name", "output_root"});
  c.run_name = get_req<std::string>(j.at("run"), "run", "name");
  require(!c.run_name.empty() && c.run_name.find('/') == std::string::npos, errc::validation,
          "run.name must be a non-empty path segment");
  c.output_root = get_opt<std::string>(j.at("run"), "run", "output_root", "runs");

  require(j.contains("graph"), errc::validation, "config is missing the 'graph' section");
  const json& g = j.at("graph");
  check_keys(g, "graph", {"kind", "n_entities", "n_relations", "m", "p", "seed"});
  c.graph_kind = graph_kind_from_string(get_req<std::string>(g, "graph", "kind"));
  c.n_entities = get_req<int>(g, "graph", "n_entities");
  c.n_relations = get_req<int>(g, "graph", "n_relations");
  c.graph_seed = get_req<uint64_t>(g, "graph", "seed");
  c.ba_m = get_opt<int>(g, "graph", "m", 2);
  if (g.contains("p")) c.er_p = g.at("p").get<double>();
  require(c.graph_kind == GraphKind::ba || c.er_p.has_value() || g.contains("m"),
          errc::validation, "er graphs need either 'p' or 'm' (for density matching)");

  require(j.contains("corpus"), errc::validation, "config is missing the 'corpus' section");
  check_keys(j.at("corpus"), "corpus", {"sample_fraction", "seed"});
  c.sample_fraction = get_req<double>(j.at("corpus"), "corpus", "sample_fraction");
  c.corpus_seed = get_req<uint64_t>(j.at("corpus"), "corpus", "seed");

  require(j.contains("model"), errc::validation, "config is missing the 'model' section");
  const json& m = j.at("model");
  check_keys(m, "model", {"n_layers", "d_model", "n_heads", "d_ff", "seed"});
  c.n_layers = get_req<int>(m, "model", "n_layers");
  c.d_model = get_opt<int>(m, "model", "d_model", 256);
  c.n_heads = get_opt<int>(m, "model", "n_heads", 4);
  c.d_ff = get_opt<int>(m, "model", "d_ff", 4 * c.d_model);
  c.model_seed = get_req<uint64_t>(m, "model", "seed");

  require(j.contains("train"), errc::validation, "config is missing the 'train' section");
  const json& t = j.at("train");
  check_keys(t, "train",
             {"batch_size", "learning_rate", "warmup_steps", "max_epochs",
              "target_full_accuracy", "full_lm_loss", "seed"});
  c.train.batch_size = get_opt<int>(t, "train", "batch_size", 256);
  c.train.learning_rate = get_opt<double>(t, "train", "learning_rate", 1e-3);
  c.train.warmup_steps = get_opt<int>(t, "train", "warmup_steps", 100);
  c.train.max_epochs = get_opt<int>(t, "train", "max_epochs", 200);
  c.train.target_full_accuracy = get_opt<double>(t, "train", "target_full_accuracy", 0.99);
  c.train.full_lm_loss = get_opt<bool>(t, "train", "full_lm_loss", false);
  c.train.seed = get_req<uint64_t>(t, "train", "seed");

  require(j.contains("tracing"), errc::validation, "config is missing the 'tracing' section");
  const json& tr = j.at("tracing");
  check_keys(tr, "tracing", {"noise_multiplier", "noise_samples", "probe_count", "seed"});
  c.noise.std_multiplier = get_opt<double>(tr, "tracing", "noise_multiplier", 3.0);
  c.noise.samples = get_opt<int>(tr, "tracing", "noise_samples", 10);
  c.probe_count = get_opt<int>(tr, "tracing", "probe_count", 20);
  c.trace_seed = get_req<uint64_t>(tr, "tracing", "seed");

  if (j.contains("edit")) {
    const json& e = j.at("edit");
    check_keys(e, "edit",
               {"layer_override", "ridge_scale", "value_opt_steps", "value_opt_target_prob",
                "value_opt_lr", "value_opt_weight_decay"});
    if (e.contains("layer_override") && !e.at("layer_override").is_null())
      c.edit_layer_override = e.at("layer_override").get<int>();
    c.ridge_scale = get_opt<double>(e, "edit", "ridge_scale", 1e-4);
    c.value_opt.max_steps = get_opt<int>(e, "edit", "value_opt_steps", 500);
    c.value_opt.target_probability = get_opt<double>(e, "edit", "value_opt_target_prob", 0.95);
    c.value_opt.learning_rate = get_opt<double>(e, "edit", "value_opt_lr", 0.1);
    c.value_opt.weight_decay = get_opt<double>(e, "edit", "value_opt_weight_decay", 0.05);
  }

  require(j.contains("analysis"), errc::validation, "config is missing the 'analysis' section");
  const json& a = j.at("analysis");
  check_keys(a, "analysis",
             {"include_deleted_fact", "degree_variant", "sweep_seed", "jobs", "accuracy_gate"});
  c.include_deleted_fact = get_opt<bool>(a, "analysis", "include_deleted_fact", true);
  c.degree_variant = get_opt<std::string>(a, "analysis", "degree_variant", "total");
  require(c.degree_variant == "total" || c.degree_variant == "out" || c.degree_variant == "in",
          errc::validation, "analysis.degree_variant must be total, out or in");
  c.sweep_seed = get_req<uint64_t>(a, "analysis", "sweep_seed");
  c.jobs = get_opt<int>(a, "analysis", "jobs", 1);
  c.accuracy_gate = get_opt<double>(a, "analysis", "accuracy_gate", 0.98);

  if (j.contains("repro")) {
    const json& r = j.at("repro");
    check_keys(r, "repro", {"kinds", "depths"});
    c.repro_kinds = get_opt<std::vector<std::string>>(r, "repro", "kinds", {"er", "ba"});
    c.repro_depths = get_opt<std::vector<int>>(r, "repro", "depths", {6, 12, 24});
    for (const std::string& k : c.repro_kinds) graph_kind_from_string(k);
  }
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  return parse_run_config(read_file(file));
}

RunPaths run_paths(const fs::path& run_dir) {
  RunPaths p;
  p.root = run_dir;
  p.graph_json = run_dir / "graph.json";
  p.vocab_json = run_dir / "vocab.json";
  p.corpus_full = run_dir / "corpus.full.txt";
  p.corpus_train = run_dir / "corpus.train.txt";
  p.checkpoints_dir = run_dir / "checkpoints";
  p.checkpoint_base = p.checkpoints_dir / "base";
  p.metrics_csv = p.checkpoints_dir / "metrics.csv";
  p.traces_dir = run_dir / "traces";
  p.trace_csv = p.traces_dir / "trace_grid.csv";
  p.trace_svg = p.traces_dir / "trace.svg";
  p.selection_json = p.traces_dir / "selection.json";
  p.edits_dir = run_dir / "edits";
  p.analysis_dir = run_dir / "analysis";
  p.impact_csv_path = p.analysis_dir / "impact.csv";
  p.efficacy_csv_path = p.analysis_dir / "efficacy.csv";
  p.summary_json = p.analysis_dir / "summary.json";
  p.pca_entities_csv = p.analysis_dir / "pca_entities.csv";
  p.pca_relations_csv = p.analysis_dir / "pca_relations.csv";
  p.degree_impact_svg_path = p.analysis_dir / "degree_impact.svg";
  p.pca_entities_svg = p.analysis_dir / "pca_entities.svg";
  p.pca_relations_svg = p.analysis_dir / "pca_relations.svg";
  p.manifest_json = run_dir / "manifest.json";
  p.lock_file = run_dir / ".lock";
  return p;
}

DirLock::DirLock(const fs::path& file) : file_(file) {
  fs::create_directories(file.parent_path());
  const int fd = ::open(file.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    fail(errc::io, "run directory is locked by another writer (" + file.string() +
                       "); remove the lock file if no other process is running");
  }
  const std::string pid = "pid " + std::to_string(::getpid()) + "\n";
  ssize_t written = ::write(fd, pid.data(), pid.size());
  (void)written;
  ::close(fd);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

fs::path resolve_output_root(const fs::path& configured) {
  const char* env = std::getenv("UNLEARN_LAB_DIR");
  if (env != nullptr && *env != '\0') return fs::path(env);
  return configured;
}

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
  paths_ = run_paths(resolve_output_root(cfg_.output_root) / cfg_.run_name);
}

namespace {

ordered_json load_manifest(const fs::path& file) {
  if (!fs::exists(file)) return ordered_json::object();
  try {
    return ordered_json::parse(read_file(file));
  } catch (const json::exception& e) {
    fail(errc::io, "manifest parse error: " + std::string(e.what()));
  }
}

}  // namespace

void Pipeline::record_stage(const std::string& stage, double wall_seconds,
                            const std::vector<fs::path>& artifacts,
                            const std::vector<std::pair<std::string, std::string>>& extra) {
  ordered_json manifest = load_manifest(paths_.manifest_json);
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = cfg_.config_hash();
  manifest["kernels"] = kernels::backend_name();
  if (!manifest.contains("stages")) manifest["stages"] = ordered_json::object();

  ordered_json entry;
  entry["wall_seconds"] = wall_seconds;
  ordered_json files = ordered_json::object();
  for (const fs::path& a : artifacts) {
    const std::string rel = fs::relative(a, paths_.root).generic_string();
    files[rel] = checksum_file(a);
  }
  entry["artifacts"] = std::move(files);
  for (const auto& [k, v] : extra) entry[k] = v;
  manifest["stages"][stage] = std::move(entry);
  write_file_atomic(paths_.manifest_json, manifest.dump(2) + "\n");
}

bool Pipeline::stage_fresh(const std::string& stage) const {
  if (!fs::exists(paths_.manifest_json)) return false;
  ordered_json manifest;
  try {
    manifest = load_manifest(paths_.manifest_json);
  } catch (const Error&) {
    return false;
  }
  if (!manifest.contains("config_hash") || manifest["config_hash"] != cfg_.config_hash())
    return false;
  if (!manifest.contains("stages") || !manifest["stages"].contains(stage)) return false;
  for (const auto& [rel, sum] : manifest["stages"][stage]["artifacts"].items()) {
    const fs::path p = paths_.root / rel;
    if (!fs::exists(p)) return false;
    if (checksum_file(p) != sum.get<std::string>()) return false;
  }
  return true;
}

void Pipeline::require_fresh_upstream(const std::vector<std::string>& stages) const {
  ordered_json manifest = load_manifest(paths_.manifest_json);
  require(manifest.contains("config_hash"), errc::validation,
          "run directory has no manifest; run synth first");
  require(manifest["config_hash"] == cfg_.config_hash(), errc::validation,
          "config does not match the run directory's manifest (stale config hash)");
  for (const std::string& stage : stages) {
    require(manifest.contains("stages") && manifest["stages"].contains(stage), errc::validation,
            "missing upstream stage '" + stage + "'");
    for (const auto& [rel, sum] : manifest["stages"][stage]["artifacts"].items()) {
      const fs::path p = paths_.root / rel;
      require(fs::exists(p), errc::io, "missing upstream artifact: " + p.string());
      require(checksum_file(p) == sum.get<std::string>(), errc::validation,
              "stale checksum for upstream artifact: " + p.string());
    }
  }
}

void Pipeline::synth(bool force) {
  fs::create_directories(paths_.root);
  DirLock lock(paths_.lock_file);
  if (!force) {
    require(!fs::exists(paths_.graph_json), errc::validation,
            "run directory already has synth artifacts; pass --force to overwrite");
  }
  const double t0 = now_seconds();

  KnowledgeGraph g;
  if (cfg_.graph_kind == GraphKind::er) {
    g = synthesize_er(cfg_.n_entities, cfg_.n_relations, cfg_.effective_er_p(), cfg_.graph_seed);
  } else {
    g = synthesize_ba(cfg_.n_entities, cfg_.n_relations, cfg_.ba_m, cfg_.graph_seed);
  }
  const NameTable names = build_name_table(g);
  auto full = expand_triples(g, names);
  const Corpus corpus = sample_training(g, std::move(full), cfg_.sample_fraction,
                                        cfg_.corpus_seed);

  write_file_atomic(paths_.graph_json, graph_to_json(g));
  write_file_atomic(paths_.vocab_json, names.vocab_json());
  write_file_atomic(paths_.corpus_full, sentences_to_text(corpus.full, names));
  write_file_atomic(paths_.corpus_train, sentences_to_text(corpus.train_sentences(), names));

  record_stage("synth", now_seconds() - t0,
               {paths_.graph_json, paths_.vocab_json, paths_.corpus_full, paths_.corpus_train});
}

KnowledgeGraph Pipeline::load_graph() const {
  return graph_from_json(read_file(paths_.graph_json));
}

Corpus Pipeline::load_corpus(const KnowledgeGraph& g, const NameTable& names) const {
  Corpus c;
  c.full = sentences_from_text(read_file(paths_.corpus_full), names, g);
  const auto train = sentences_from_text(read_file(paths_.corpus_train), names, g);
  c.sample_fraction = cfg_.sample_fraction;
  c.seed = cfg_.corpus_seed;

  std::map<std::array<int, 3>, int> index;
  for (int i = 0; i < static_cast<int>(c.full.size()); ++i) index[c.full[i].tokens] = i;
  c.train_indices.reserve(train.size());
  for (const Sentence& s : train) {
    auto it = index.find(s.tokens);
    require(it != index.end(), errc::validation,
            "corpus.train.txt contains a sentence missing from corpus.full.txt");
    c.train_indices.push_back(it->second);
  }
  require(std::is_sorted(c.train_indices.begin(), c.train_indices.end()), errc::validation,
          "corpus.train.txt is not in canonical order");
  return c;
}

bool Pipeline::train(std::ostream* log) {
  DirLock lock(paths_.lock_file);
  require_fresh_upstream({"synth"});
  const double t0 = now_seconds();

  const KnowledgeGraph g = load_graph();
  const NameTable names = build_name_table(g);
  const Corpus corpus = load_corpus(g, names);

  Model model = init_model<float>(cfg_.model_config(names.vocab_size()));
  const TrainReport report = train_model(model, corpus, names, g, cfg_.train, log);

  fs::create_directories(paths_.checkpoints_dir);
  save_checkpoint(model, paths_.checkpoint_base);
  write_file_atomic(paths_.metrics_csv, metrics_csv(report));

  record_stage("train", now_seconds() - t0,
               {paths_.checkpoint_base / "manifest.json", paths_.checkpoint_base / "tensors.bin",
                paths_.metrics_csv},
               {{"reached_target", report.reached_target ? "true" : "false"},
                {"final_full_accuracy", format_double(report.final_full_accuracy, 6)},
                {"final_train_accuracy", format_double(report.final_train_accuracy, 6)}});
  return report.reached_target;
}

void Pipeline::trace() {
  DirLock lock(paths_.lock_file);
  require_fresh_upstream({"synth", "train"});
  const double t0 = now_seconds();

  const KnowledgeGraph g = load_graph();
  const NameTable names = build_name_table(g);
  const Model model = load_checkpoint(paths_.checkpoint_base);

  TraceGridParams params;
  params.noise = cfg_.noise;
  params.probe_count = cfg_.probe_count;
  params.seed = cfg_.trace_seed;
  const TraceGrid grid = trace_grid(model, g, names, params);

  int traced_layer = -1;
  std::string trace_error;
  try {
    traced_layer = select_edit_layer(grid);
  } catch (const Error& e) {
    trace_error = e.what();
  }
  require(traced_layer >= 0 || cfg_.edit_layer_override.has_value(), errc::gate,
          trace_error + " (no edit.layer_override configured)");

  fs::create_directories(paths_.traces_dir);
  write_file_atomic(paths_.trace_csv, trace_grid_csv(grid));
  write_file_atomic(paths_.trace_svg,
                    trace_heatmap_svg(grid, "causal tracing, " + cfg_.run_name));
  ordered_json sel;
  if (traced_layer >= 0) sel["traced_layer"] = traced_layer;
  if (cfg_.edit_layer_override.has_value()) sel["layer_override"] = *cfg_.edit_layer_override;
  sel["effective_layer"] =
      cfg_.edit_layer_override.has_value() ? *cfg_.edit_layer_override : traced_layer;
  write_file_atomic(paths_.selection_json, sel.dump(2) + "\n");

  record_stage("trace", now_seconds() - t0,
               {paths_.trace_csv, paths_.trace_svg, paths_.selection_json});
}

int Pipeline::effective_edit_layer() const {
  if (cfg_.edit_layer_override.has_value()) return *cfg_.edit_layer_override;
  require(fs::exists(paths_.selection_json), errc::validation,
          "no traced edit layer: run trace first or set edit.layer_override");
  const json sel = json::parse(read_file(paths_.selection_json));
  return sel.at("effective_layer").get<int>();
}

std::filesystem::path Pipeline::delete_one(const std::string& subject_name,
                                           const std::string& relation_name) {
  DirLock lock(paths_.lock_file);
  require_fresh_upstream({"synth", "train"});
  const double t0 = now_seconds();

  const KnowledgeGraph g = load_graph();
  const NameTable names = build_name_table(g);
  const Corpus corpus = load_corpus(g, names);
  const Model model = load_checkpoint(paths_.checkpoint_base);

  const int subject_token = names.token_of(subject_name);
  require(names.is_entity_token(subject_token), errc::validation,
          "'" + subject_name + "' is not an entity name");
  const int subject = names.entity_of(subject_token);

  int relation = -1;
  if (!relation_name.empty()) {
    relation = names.relation_of(names.token_of(relation_name));
  } else {
    std::vector<int> outgoing;
    for (const Triple& t : g.triples)
      if (t.subject == subject) outgoing.push_back(t.relation);
    require(!outgoing.empty(), errc::validation,
            "subject " + subject_name + " has no outgoing facts");
    auto rng = make_rng(cfg_.sweep_seed).child(static_cast<uint64_t>(subject));
    relation = outgoing[rng.below(outgoing.size())];
  }

  const int layer = effective_edit_layer();
  const auto train_sents = corpus.train_sentences();
  const size_t sample_n = std::min<size_t>(train_sents.size(), 10000);
  const Covariance cov = Covariance::estimate(
      model, std::span<const Sentence>(train_sents.data(), sample_n), layer, cfg_.ridge_scale);

  const EditOutcome out =
      delete_fact(model, g, names, subject, relation, layer, cov, cfg_.value_opt);

  const std::string rel_name = names.name(names.relation_token(relation, 0));
  const fs::path dir = paths_.edits_dir / (subject_name + "__" + rel_name);
  fs::create_directories(dir);
  const fs::path report = dir / "edit_report.json";

  ordered_json rj;
  rj["subject"] = subject_name;
  rj["subject_id"] = subject;
  rj["relation"] = rel_name;
  rj["relation_id"] = relation;
  rj["edit_layer"] = layer;
  rj["target_prob_before"] = out.solution.target_prob_before;
  rj["target_prob_after"] = out.solution.target_prob_after;
  rj["surface_efficacy"] = out.solution.surface_efficacy;
  rj["residual_norm"] = out.solution.residual_norm;
  rj["lambda_norm"] = out.solution.lambda_norm;
  rj["value_steps"] = out.solution.value_steps;
  rj["value_converged"] = out.solution.value_converged;
  write_file_atomic(report, rj.dump(2) + "\n");

  record_stage("delete:" + subject_name + "__" + rel_name, now_seconds() - t0, {report});
  return report;
}

void Pipeline::run_sweep() {
  DirLock lock(paths_.lock_file);
  require_fresh_upstream({"synth", "train"});
  const double t0 = now_seconds();

  const KnowledgeGraph g = load_graph();
  const NameTable names = build_name_table(g);
  const Corpus corpus = load_corpus(g, names);
  const Model model = load_checkpoint(paths_.checkpoint_base);

  SweepParams params;
  params.edit_layer = effective_edit_layer();
  params.ridge_scale = cfg_.ridge_scale;
  params.value_opt = cfg_.value_opt;
  params.include_deleted_fact = cfg_.include_deleted_fact;
  params.seed = cfg_.sweep_seed;
  params.jobs = cfg_.jobs;
  params.accuracy_gate = cfg_.accuracy_gate;
  const SweepResult result = sweep(model, g, names, corpus, params);

  fs::create_directories(paths_.analysis_dir);
  write_file_atomic(paths_.impact_csv_path, impact_csv(result.records));
  write_file_atomic(paths_.efficacy_csv_path, efficacy_csv(result.records));

  std::vector<std::pair<std::string, std::string>> extra;
  extra.emplace_back("acc_pre", format_double(result.acc_pre, 6));
  extra.emplace_back("records", std::to_string(result.records.size()));
  extra.emplace_back("skipped", std::to_string(result.skipped.size()));
  record_stage("sweep", now_seconds() - t0,
               {paths_.impact_csv_path, paths_.efficacy_csv_path}, extra);
}

void Pipeline::analyze() {
  DirLock lock(paths_.lock_file);
  require_fresh_upstream({"synth", "train", "sweep"});
  const double t0 = now_seconds();

  const KnowledgeGraph g = load_graph();
  const NameTable names = build_name_table(g);
  const Model model = load_checkpoint(paths_.checkpoint_base);
  const auto records = impact_csv_parse(read_file(paths_.impact_csv_path));
  require(!records.empty(), errc::validation, "impact.csv has no records");

  std::vector<double> impact, deg_total, deg_out, deg_in;
  for (const auto& r : records) {
    impact.push_back(r.impact);
    deg_total.push_back(r.degree_total);
    deg_out.push_back(r.degree_out);
    deg_in.push_back(r.degree_in);
  }

  ordered_json summary;
  summary["graph_kind"] = to_string(g.kind);
  summary["n_layers"] = cfg_.n_layers;
  summary["records"] = records.size();
  summary["acc_pre"] = records.front().acc_pre;

  ordered_json pj;
  pj["total"] = pearson(deg_total, impact);
  pj["out"] = pearson(deg_out, impact);
  pj["in"] = pearson(deg_in, impact);
  pj["headline_variant"] = cfg_.degree_variant;
  summary["pearson_degree_impact"] = pj;

  const ImpactStats st = impact_stats(impact);
  summary["impact"] = ordered_json{{"max", st.max}, {"min", st.min}, {"mean", st.mean},
                                   {"sd", st.sd}};
  summary["impact_1e2"] = ordered_json{{"max", st.max * 100.0},
                                       {"min", st.min * 100.0},
                                       {"mean", st.mean * 100.0},
                                       {"sd", st.sd * 100.0}};

  // efficacy aggregate for the deletion criterion
  {
    std::istringstream eff_in(read_file(paths_.efficacy_csv_path));
    std::string line;
    std::getline(eff_in, line);
    double mean_eff = 0.0;
    long n_eff = 0, good = 0;
    while (std::getline(eff_in, line)) {
      const auto c1 = line.find(',');
      if (c1 == std::string::npos) continue;
      const auto c2 = line.find(',', c1 + 1);
      const std::string field =
          c2 == std::string::npos ? line.substr(c1 + 1) : line.substr(c1 + 1, c2 - c1 - 1);
      double e = 0.0;
      try {
        e = std::stod(field);
      } catch (const std::exception&) {
        fail(errc::io, "efficacy.csv row parse failure: " + line);
      }
      mean_eff += e;
      n_eff += 1;
      if (e >= 0.9) good += 1;
    }
    require(n_eff > 0, errc::validation, "efficacy.csv has no records");
    summary["efficacy"] =
        ordered_json{{"mean", mean_eff / n_eff},
                     {"fraction_subjects_ge_090", double(good) / double(n_eff)}};
  }

  // paraphrase-embedding analysis: trained vs untrained
  const Model untrained = init_model<float>(cfg_.model_config(names.vocab_size()));
  const auto ents = extract_embeddings(model, names, NameFamily::entities);
  const auto rels = extract_embeddings(model, names, NameFamily::relations);
  const auto ents0 = extract_embeddings(untrained, names, NameFamily::entities);
  const int d = model.config.d_model;
  const int ne = 5 * names.n_entities(), nr = 5 * names.n_relations();

  const double purity_ent = paraphrase_purity(ents, ne, d);
  const double purity_rel = paraphrase_purity(rels, nr, d);
  const double purity_ent_untrained = paraphrase_purity(ents0, ne, d);
  summary["paraphrase_purity"] =
      ordered_json{{"entities_trained", purity_ent},
                   {"relations_trained", purity_rel},
                   {"entities_untrained", purity_ent_untrained},
                   {"chance_level", 4.0 / double(ne - 1)}};

  const PcaResult pca_ent = pca(ents, ne, d, 2);
  const PcaResult pca_rel = pca(rels, nr, d, 2);
  summary["pca"] = ordered_json{
      {"entities_explained_variance", pca_ent.explained_variance_ratio},
      {"relations_explained_variance", pca_rel.explained_variance_ratio}};

  fs::create_directories(paths_.analysis_dir);
  write_file_atomic(paths_.summary_json, summary.dump(2) + "\n");
  write_file_atomic(paths_.pca_entities_csv, pca_csv(pca_ent, names, NameFamily::entities));
  write_file_atomic(paths_.pca_relations_csv, pca_csv(pca_rel, names, NameFamily::relations));
  write_file_atomic(paths_.degree_impact_svg_path,
                    degree_impact_svg(records, "degree vs deletion impact, " + cfg_.run_name));
  write_file_atomic(paths_.pca_entities_svg,
                    pca_scatter_svg(pca_ent, NameTable::kParaphrases, 6,
                                    "entity embeddings, " + cfg_.run_name));
  write_file_atomic(paths_.pca_relations_svg,
                    pca_scatter_svg(pca_rel, NameTable::kParaphrases, 6,
                                    "relation embeddings, " + cfg_.run_name));

  record_stage("analyze", now_seconds() - t0,
               {paths_.summary_json, paths_.pca_entities_csv, paths_.pca_relations_csv,
                paths_.degree_impact_svg_path, paths_.pca_entities_svg,
                paths_.pca_relations_svg});
}

std::vector<fs::path> run_repro(const RunConfig& base, bool force, std::ostream& log) {
  std::vector<fs::path> dirs;
  for (const std::string& kind : base.repro_kinds) {
    for (int depth : base.repro_depths) {
      RunConfig cfg = base;
      cfg.graph_kind = graph_kind_from_string(kind);
      cfg.n_layers = depth;
      cfg.run_name = base.run_name + "_" + kind + std::to_string(depth);
      Pipeline p(cfg);
      dirs.push_back(p.paths().root);
      log << "[repro] " << cfg.run_name << "\n";

      auto step = [&](const char* stage, auto&& fn) {
        if (!force && p.stage_fresh(stage)) {
          log << "  " << stage << ": fresh, skipped\n";
          return;
        }
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "  " << stage << ": done in " << format_double(secs, 1) << "s\n";
        log.flush();
      };
      step("synth", [&] { p.synth(force); });
      step("train", [&] {
        if (!p.train(&log)) log << "  train: below accuracy target\n";
      });
      step("trace", [&] { p.trace(); });
      step("sweep", [&] { p.run_sweep(); });
      step("analyze", [&] { p.analyze(); });
    }
  }
  return dirs;
}

}  // namespace ulab

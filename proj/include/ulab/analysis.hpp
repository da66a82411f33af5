#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/editor.hpp"
#include "ulab/graph.hpp"
#include "ulab/model.hpp"

namespace ulab {

struct ImpactRecord {
  int subject_id = -1;
  int degree_total = 0;
  int degree_out = 0;
  int degree_in = 0;
  int relation_deleted = -1;
  int object_deleted = -1;
  double acc_pre = 0.0;
  double acc_post = 0.0;
  double impact = 0.0;  // acc_pre - acc_post
  double surface_efficacy = 0.0;
  double exact_solve_rel_err = 0.0;
  double delta_sigma_ratio = 0.0;
  bool include_deleted_fact = true;
};

// Deletes one seeded outgoing fact of `subject_id` on a fresh copy of the
// base model and measures the full-data accuracy drop.
ImpactRecord measure_impact(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                            const Corpus& corpus, int subject_id, const Covariance& cov,
                            int edit_layer, const ValueOptParams& vparams,
                            bool include_deleted_fact, uint64_t seed, double acc_pre);

struct SweepParams {
  int edit_layer = 0;
  double ridge_scale = 1e-4;
  ValueOptParams value_opt;
  bool include_deleted_fact = true;
  uint64_t seed = 0;
  int jobs = 1;
  double accuracy_gate = 0.98;
  int covariance_sample = 10000;  // training sentences (all positions)
};

struct SweepResult {
  double acc_pre = 0.0;
  std::vector<ImpactRecord> records;  // ascending subject_id, eligible subjects only
  std::vector<std::pair<int, std::string>> skipped;
};

// One deletion per eligible subject (out-degree >= 1), each starting from the
// pristine base model. Refuses to run below the accuracy gate.
SweepResult sweep(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                  const Corpus& corpus, const SweepParams& params);

// Product-moment correlation; rejects degenerate inputs.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct ImpactStats {
  double max = 0.0, min = 0.0, mean = 0.0, sd = 0.0;  // population sd
};
ImpactStats impact_stats(std::span<const double> values);

struct PcaResult {
  int n = 0, d = 0, k = 0;
  std::vector<double> coords;      // [n, k]
  std::vector<double> components;  // [k, d], orthonormal rows
  std::vector<double> explained_variance_ratio;  // [k]
};

// Mean-centered projection onto the top-k principal directions. Component
// signs are fixed so each one's largest-magnitude entry is positive.
PcaResult pca(std::span<const double> vectors, int n, int d, int k = 2);

// Mean over name vectors of the fraction of their k nearest neighbours
// (Euclidean) that are paraphrases of the same item. Vectors are grouped in
// blocks of group_size per item.
double paraphrase_purity(std::span<const double> embeddings, int n, int d, int group_size = 5,
                         int k = 4);

// Embedding rows for one name family, as doubles.
enum class NameFamily { entities, relations };
std::vector<double> extract_embeddings(const Model& m, const NameTable& names, NameFamily family);

}  // namespace ulab

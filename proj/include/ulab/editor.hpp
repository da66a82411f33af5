#pragma once

#include <span>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/linalg.hpp"
#include "ulab/model.hpp"

namespace ulab {

struct EditRequest {
  int subject_id = -1;
  int relation_id = -1;
  int target_token = -1;  // o*; the deletion sentinel for deletions
  int edit_layer = -1;
};

struct ValueOptParams {
  int max_steps = 500;
  double target_probability = 0.95;
  double learning_rate = 0.1;   // Adam on the value vector
  double weight_decay = 0.05;   // pull toward the original FFN output
};

struct EditSolution {
  std::vector<double> key;     // k*, d_ff
  std::vector<double> value;   // v*, d_model
  std::vector<double> lambda;  // residual scale, d_model
  double target_prob_before = 0.0;  // base model, mean over 25 surface forms
  double target_prob_after = 0.0;   // edited model, mean over 25 surface forms
  double value_opt_prob = 0.0;      // with v* injected, end of optimization
  bool value_converged = false;
  int value_steps = 0;
  std::vector<double> loss_curve;
  double residual_norm = 0.0;
  double lambda_norm = 0.0;
  double surface_efficacy = 0.0;  // fraction of 25 forms with target top-1
  // measured on the stored (f32) weights of the edited model
  double exact_solve_rel_err = 0.0;  // ||k*^T W2_new - v*|| / ||v*||
  double delta_sigma_ratio = 0.0;    // sigma2/sigma1 of W2_new - W2
};

// Uncentered second moment of FFN key activations (gelu output feeding W2)
// at one layer, over all positions of a corpus sample, plus a relative
// ridge. Holds the SPD factorization; no inverse is materialized.
class Covariance {
 public:
  static Covariance estimate(const Model& m, std::span<const Sentence> sample, int layer,
                             double ridge_scale);
  static Covariance from_matrix(std::vector<double> c, int n);  // test/synthetic entry

  int dim() const { return n_; }
  double ridge() const { return ridge_; }
  const std::vector<double>& matrix() const { return c_; }  // ridge included
  std::vector<double> solve(std::span<const double> rhs) const { return chol_.solve(rhs); }

 private:
  std::vector<double> c_;
  CholeskyFactor chol_;
  int n_ = 0;
  double ridge_ = 0.0;
};

// Mean over the subject's five paraphrase names of the FFN key activation at
// the subject position in `layer` (single-token forward runs).
std::vector<double> compute_key(const Model& m, int subject_id, int layer,
                                const NameTable& names);

// Mean FFN sub-block output at the same site; the value optimization starts
// here and decays toward it.
std::vector<double> current_ffn_output(const Model& m, int subject_id, int layer,
                                       const NameTable& names);

struct ValueResult {
  std::vector<double> value;
  double prob_start = 0.0;  // target probability with the initial vector injected
  double prob_final = 0.0;
  bool converged = false;
  int steps = 0;
  std::vector<double> loss_curve;
};

// Minimizes mean NLL of the target token at the object position over all 25
// (subject paraphrase x relation paraphrase) forms, with the FFN output at
// (subject position, edit layer) overridden by the optimized vector.
ValueResult compute_value(const Model& m, const EditRequest& req, const NameTable& names,
                          const ValueOptParams& params);

// u = C^{-1} k*; lambda = (v* - W2^T k*) / (u^T k*); W2_new = W2 + u lambda^T.
// w2 is row-major [d_ff, d_model] under the row-vector convention y = x W2.
struct RankOneResult {
  std::vector<double> w2_new;
  std::vector<double> lambda;
  std::vector<double> residual;  // v* - W2^T k*
};
RankOneResult rank_one_update(std::span<const double> w2, int d_ff, int d_model,
                              std::span<const double> key, std::span<const double> value,
                              const Covariance& cov);

struct EditOutcome {
  Model model;
  EditSolution solution;
};

EditOutcome apply_edit(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                       const EditRequest& req, const Covariance& cov,
                       const ValueOptParams& vparams);

// Deletion: edit (s, r, o) to the sentinel token.
EditOutcome delete_fact(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                        int subject_id, int relation_id, int edit_layer, const Covariance& cov,
                        const ValueOptParams& vparams);

}  // namespace ulab

#include "ulab/editor.hpp"

#include <algorithm>
#include <cmath>

#include "ulab/kernels.hpp"

namespace ulab {

namespace {

constexpr int kP = NameTable::kParaphrases;

// Tokens for all 25 (subject paraphrase, relation paraphrase) prefixes.
std::vector<int> surface_prefixes(const EditRequest& req, const NameTable& names) {
  std::vector<int> tokens;
  tokens.reserve(kP * kP * 2);
  for (int i = 0; i < kP; ++i)
    for (int j = 0; j < kP; ++j) {
      tokens.push_back(names.entity_token(req.subject_id, i));
      tokens.push_back(names.relation_token(req.relation_id, j));
    }
  return tokens;
}

// Mean target probability and top-1 fraction over prefix rows.
struct TargetStats {
  double mean_prob = 0.0;
  double top1_fraction = 0.0;
};

TargetStats stats_from_cache(const Model& m, const BatchCache<float>& cache, int target) {
  const int B = cache.B;
  const int V = m.config.vocab_size;
  std::vector<float> probs(static_cast<size_t>(B) * V);
  kernels::softmax_rows(cache.logits.data(), probs.data(), B, V);
  TargetStats st;
  for (int b = 0; b < B; ++b) {
    const float* prow = probs.data() + static_cast<size_t>(b) * V;
    st.mean_prob += prow[target];
    int best = 0;
    for (int v = 1; v < V; ++v)
      if (prow[v] > prow[best]) best = v;
    if (best == target) st.top1_fraction += 1.0;
  }
  st.mean_prob /= B;
  st.top1_fraction /= B;
  return st;
}

TargetStats target_stats(const Model& m, const std::vector<int>& tokens, int target,
                         const Hooks<float>* hooks) {
  BatchCache<float> cache;
  forward_batch(m, tokens.data(), static_cast<int>(tokens.size() / 2), 2, cache,
                /*logits_all=*/false, hooks);
  return stats_from_cache(m, cache, target);
}

// Single-token forward over the subject's five names; returns the mean of the
// requested per-row buffer slice at (pos 0, layer).
std::vector<double> mean_over_paraphrases(const Model& m, int subject_id, int layer,
                                          const NameTable& names, bool want_key) {
  require(layer >= 0 && layer < m.config.n_layers, errc::validation,
          "edit layer out of range");
  std::vector<int> tokens(kP);
  for (int i = 0; i < kP; ++i) tokens[i] = names.entity_token(subject_id, i);
  BatchCache<float> cache;
  forward_batch(m, tokens.data(), kP, 1, cache, /*logits_all=*/false);
  const auto& L = cache.layers[layer];
  const int dim = want_key ? m.config.d_ff : m.config.d_model;
  const float* buf = want_key ? L.ffn_act.data() : L.ffn_out.data();
  std::vector<double> mean(dim, 0.0);
  for (int b = 0; b < kP; ++b)
    for (int i = 0; i < dim; ++i) mean[i] += double(buf[static_cast<size_t>(b) * dim + i]);
  for (double& x : mean) x /= kP;
  return mean;
}

}  // namespace

std::vector<double> compute_key(const Model& m, int subject_id, int layer,
                                const NameTable& names) {
  return mean_over_paraphrases(m, subject_id, layer, names, /*want_key=*/true);
}

std::vector<double> current_ffn_output(const Model& m, int subject_id, int layer,
                                       const NameTable& names) {
  return mean_over_paraphrases(m, subject_id, layer, names, /*want_key=*/false);
}

Covariance Covariance::estimate(const Model& m, std::span<const Sentence> sample, int layer,
                                double ridge_scale) {
  require(!sample.empty(), errc::validation, "covariance sample is empty");
  require(layer >= 0 && layer < m.config.n_layers, errc::validation,
          "covariance layer out of range");
  require(ridge_scale >= 0.0, errc::validation, "ridge must be non-negative");
  const int dff = m.config.d_ff;

  Covariance cov;
  cov.n_ = dff;
  cov.c_.assign(static_cast<size_t>(dff) * dff, 0.0);

  const int batch = 256;
  const int T = 3;
  BatchCache<float> cache;
  std::vector<int> tokens;
  std::vector<double> keys64;
  size_t n_keys = 0;
  for (size_t start = 0; start < sample.size(); start += batch) {
    const int bs = static_cast<int>(std::min<size_t>(batch, sample.size() - start));
    tokens.resize(static_cast<size_t>(bs) * T);
    for (int b = 0; b < bs; ++b)
      for (int t = 0; t < T; ++t) tokens[b * T + t] = sample[start + b].tokens[t];
    forward_batch(m, tokens.data(), bs, T, cache, /*logits_all=*/false);
    const auto& act = cache.layers[layer].ffn_act;  // [bs*T, dff]
    const size_t rows = static_cast<size_t>(bs) * T;
    keys64.resize(rows * dff);
    for (size_t i = 0; i < rows * dff; ++i) keys64[i] = double(act[i]);
    kernels::gemm<double>(true, false, dff, dff, static_cast<int>(rows), 1.0, keys64.data(), dff,
                          keys64.data(), dff, 1.0, cov.c_.data(), dff);
    n_keys += rows;
  }

  const double inv_n = 1.0 / double(n_keys);
  for (double& x : cov.c_) x *= inv_n;

  double diag_mean = 0.0;
  for (int i = 0; i < dff; ++i) diag_mean += cov.c_[static_cast<size_t>(i) * dff + i];
  diag_mean /= dff;
  cov.ridge_ = ridge_scale * diag_mean;
  for (int i = 0; i < dff; ++i) cov.c_[static_cast<size_t>(i) * dff + i] += cov.ridge_;

  cov.chol_ = CholeskyFactor::compute(cov.c_, dff);
  return cov;
}

Covariance Covariance::from_matrix(std::vector<double> c, int n) {
  Covariance cov;
  cov.n_ = n;
  cov.c_ = c;
  cov.chol_ = CholeskyFactor::compute(std::move(c), n);
  return cov;
}

ValueResult compute_value(const Model& m, const EditRequest& req, const NameTable& names,
                          const ValueOptParams& params) {
  require(req.target_token >= 0 && req.target_token < m.config.vocab_size, errc::validation,
          "edit target token out of vocabulary");
  const int d = m.config.d_model;
  const std::vector<int> tokens = surface_prefixes(req, names);
  const int B = static_cast<int>(tokens.size() / 2);
  std::vector<int> labels(static_cast<size_t>(B) * 2, -1);
  for (int b = 0; b < B; ++b) labels[b * 2 + 1] = req.target_token;

  const std::vector<double> v0 = current_ffn_output(m, req.subject_id, req.edit_layer, names);
  ValueResult res;
  res.value = v0;

  std::vector<float> v32(d);
  std::vector<double> adam_m(d, 0.0), adam_v(d, 0.0), grad(d);
  std::vector<float> grad32(d);
  std::vector<float> dparams(m.params.size(), 0.0f);
  BatchCache<float> cache;

  Hooks<float> hooks;
  hooks.overrides.push_back({Site::ffn, req.edit_layer, 0, v32.data()});

  for (int step = 0; step <= params.max_steps; ++step) {
    for (int i = 0; i < d; ++i) v32[i] = static_cast<float>(res.value[i]);
    forward_batch(m, tokens.data(), B, 2, cache, /*logits_all=*/false, &hooks);

    // target probability for the early exit
    const TargetStats st = stats_from_cache(m, cache, req.target_token);
    if (step == 0) res.prob_start = st.mean_prob;
    res.prob_final = st.mean_prob;
    res.steps = step;
    if (st.mean_prob >= params.target_probability) {
      res.converged = true;
      break;
    }
    if (step == params.max_steps) break;

    std::fill(dparams.begin(), dparams.end(), 0.0f);
    std::fill(grad32.begin(), grad32.end(), 0.0f);
    const float nll = backward_batch(m, tokens.data(), B, 2, cache, labels.data(), dparams,
                                     &hooks, grad32.data(), req.edit_layer);
    double decay = 0.0;
    for (int i = 0; i < d; ++i) {
      const double dv = res.value[i] - v0[i];
      grad[i] = double(grad32[i]) + 2.0 * params.weight_decay * dv;
      decay += dv * dv;
    }
    res.loss_curve.push_back(double(nll) + params.weight_decay * decay);

    // Adam on the value vector
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, double(step + 1));
    const double bc2 = 1.0 - std::pow(b2, double(step + 1));
    for (int i = 0; i < d; ++i) {
      adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
      adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
      res.value[i] -=
          params.learning_rate * (adam_m[i] / bc1) / (std::sqrt(adam_v[i] / bc2) + eps);
    }
  }
  return res;
}

RankOneResult rank_one_update(std::span<const double> w2, int d_ff, int d_model,
                              std::span<const double> key, std::span<const double> value,
                              const Covariance& cov) {
  require(static_cast<int>(key.size()) == d_ff, errc::validation, "key width mismatch");
  require(static_cast<int>(value.size()) == d_model, errc::validation, "value width mismatch");
  require(w2.size() == static_cast<size_t>(d_ff) * d_model, errc::validation,
          "w2 shape mismatch");
  require(cov.dim() == d_ff, errc::validation, "covariance dimension mismatch");

  // W2^T k*
  std::vector<double> w2k(d_model, 0.0);
  for (int i = 0; i < d_ff; ++i) {
    const double ki = key[i];
    if (ki == 0.0) continue;
    const double* row = w2.data() + static_cast<size_t>(i) * d_model;
    for (int j = 0; j < d_model; ++j) w2k[j] += ki * row[j];
  }

  const std::vector<double> u = cov.solve(key);
  double uk = 0.0;
  for (int i = 0; i < d_ff; ++i) uk += u[i] * key[i];
  require(uk > 1e-12, errc::gate, "singular update direction: u^T k* is not positive");

  RankOneResult res;
  res.residual.resize(d_model);
  res.lambda.resize(d_model);
  for (int j = 0; j < d_model; ++j) {
    res.residual[j] = value[j] - w2k[j];
    res.lambda[j] = res.residual[j] / uk;
  }
  res.w2_new.assign(w2.begin(), w2.end());
  for (int i = 0; i < d_ff; ++i) {
    const double ui = u[i];
    if (ui == 0.0) continue;
    double* row = res.w2_new.data() + static_cast<size_t>(i) * d_model;
    for (int j = 0; j < d_model; ++j) row[j] += ui * res.lambda[j];
  }
  return res;
}

namespace {

// Top-two eigenvalues of a symmetric PSD matrix via power iteration with
// deflation; returns sqrt(lambda2/lambda1).
double gram_sigma_ratio(std::vector<double> gram, int d) {
  auto power = [&](const std::vector<double>& m, std::vector<double>& v) {
    double lambda = 0.0;
    for (int it = 0; it < 80; ++it) {
      std::vector<double> w(d, 0.0);
      for (int a = 0; a < d; ++a) {
        const double va = v[a];
        if (va == 0.0) continue;
        const double* row = m.data() + static_cast<size_t>(a) * d;
        for (int b = 0; b < d; ++b) w[b] += va * row[b];
      }
      double nrm = 0.0;
      for (double x : w) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) return 0.0;
      for (int a = 0; a < d; ++a) v[a] = w[a] / nrm;
      lambda = nrm;
    }
    return lambda;
  };
  std::vector<double> v1(d);
  for (int a = 0; a < d; ++a) v1[a] = 1.0 / std::sqrt(double(d));
  const double l1 = power(gram, v1);
  if (l1 <= 0.0) return 0.0;
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) gram[static_cast<size_t>(a) * d + b] -= l1 * v1[a] * v1[b];
  std::vector<double> v2(d, 0.0);
  v2[0] = 1.0;
  double ortho = 0.0;
  for (int a = 0; a < d; ++a) ortho += v2[a] * v1[a];
  for (int a = 0; a < d; ++a) v2[a] -= ortho * v1[a];
  const double l2 = power(gram, v2);
  return std::sqrt(std::max(l2, 0.0) / l1);
}

}  // namespace

EditOutcome apply_edit(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                       const EditRequest& req, const Covariance& cov,
                       const ValueOptParams& vparams) {
  require(req.subject_id >= 0 && req.subject_id < g.n_entities, errc::validation,
          "subject id out of range");
  require(req.relation_id >= 0 && req.relation_id < g.n_relations, errc::validation,
          "relation id out of range");
  require(req.edit_layer >= 0 && req.edit_layer < base.config.n_layers, errc::validation,
          "edit layer out of range");
  const bool known = std::any_of(g.triples.begin(), g.triples.end(), [&](const Triple& t) {
    return t.subject == req.subject_id && t.relation == req.relation_id;
  });
  require(known, errc::validation, "(subject, relation) is not a fact in the graph");

  EditOutcome out{base, {}};
  EditSolution& sol = out.solution;

  const std::vector<int> prefixes = surface_prefixes(req, names);
  sol.target_prob_before =
      target_stats(base, prefixes, req.target_token, nullptr).mean_prob;

  sol.key = compute_key(base, req.subject_id, req.edit_layer, names);
  const ValueResult vr = compute_value(base, req, names, vparams);
  sol.value = vr.value;
  sol.value_opt_prob = vr.prob_final;
  sol.value_converged = vr.converged;
  sol.value_steps = vr.steps;
  sol.loss_curve = vr.loss_curve;

  const int d = base.config.d_model, dff = base.config.d_ff;
  const float* w2f = base.p(base.layout.layer[req.edit_layer].w2);
  std::vector<double> w2(static_cast<size_t>(dff) * d);
  for (size_t i = 0; i < w2.size(); ++i) w2[i] = double(w2f[i]);

  const RankOneResult ro = rank_one_update(w2, dff, d, sol.key, sol.value, cov);
  sol.lambda = ro.lambda;
  double rn = 0.0, ln = 0.0;
  for (int j = 0; j < d; ++j) {
    rn += ro.residual[j] * ro.residual[j];
    ln += ro.lambda[j] * ro.lambda[j];
  }
  sol.residual_norm = std::sqrt(rn);
  sol.lambda_norm = std::sqrt(ln);

  float* w2_out = out.model.p(out.model.layout.layer[req.edit_layer].w2);
  for (size_t i = 0; i < w2.size(); ++i) w2_out[i] = static_cast<float>(ro.w2_new[i]);

  // exactness of the stored memory write: k*^T W2_new vs v*
  {
    double err2 = 0.0, ref2 = 0.0;
    for (int j = 0; j < d; ++j) {
      double s2 = 0.0;
      for (int i = 0; i < dff; ++i)
        s2 += sol.key[i] * double(w2_out[static_cast<size_t>(i) * d + j]);
      err2 += (s2 - sol.value[j]) * (s2 - sol.value[j]);
      ref2 += sol.value[j] * sol.value[j];
    }
    sol.exact_solve_rel_err = std::sqrt(err2) / std::max(std::sqrt(ref2), 1e-300);
  }

  // numerical rank of the stored delta: sigma2/sigma1 by power iteration
  {
    std::vector<double> gram(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> drow(d);
    for (int i = 0; i < dff; ++i) {
      const float* na = w2_out + static_cast<size_t>(i) * d;
      const float* oa = w2f + static_cast<size_t>(i) * d;
      for (int a = 0; a < d; ++a) drow[a] = double(na[a]) - double(oa[a]);
      for (int a = 0; a < d; ++a) {
        if (drow[a] == 0.0) continue;
        for (int b = 0; b < d; ++b) gram[static_cast<size_t>(a) * d + b] += drow[a] * drow[b];
      }
    }
    sol.delta_sigma_ratio = gram_sigma_ratio(gram, d);
  }

  const TargetStats after = target_stats(out.model, prefixes, req.target_token, nullptr);
  sol.target_prob_after = after.mean_prob;
  sol.surface_efficacy = after.top1_fraction;
  return out;
}

EditOutcome delete_fact(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                        int subject_id, int relation_id, int edit_layer, const Covariance& cov,
                        const ValueOptParams& vparams) {
  EditRequest req;
  req.subject_id = subject_id;
  req.relation_id = relation_id;
  req.target_token = names.deleted_token();
  req.edit_layer = edit_layer;
  return apply_edit(base, g, names, req, cov, vparams);
}

}  // namespace ulab

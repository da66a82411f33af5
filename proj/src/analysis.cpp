#include "ulab/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "ulab/linalg.hpp"
#include "ulab/train.hpp"

namespace ulab {

ImpactRecord measure_impact(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                            const Corpus& corpus, int subject_id, const Covariance& cov,
                            int edit_layer, const ValueOptParams& vparams,
                            bool include_deleted_fact, uint64_t seed, double acc_pre) {
  require(subject_id >= 0 && subject_id < g.n_entities, errc::validation,
          "subject id out of range");
  std::vector<int> outgoing;  // triple indices, canonical order
  for (int i = 0; i < static_cast<int>(g.triples.size()); ++i)
    if (g.triples[i].subject == subject_id) outgoing.push_back(i);
  require(!outgoing.empty(), errc::validation,
          "subject " + std::to_string(subject_id) + " has no outgoing triples");

  auto rng = make_rng(seed);
  const int deleted_index = outgoing[rng.below(outgoing.size())];
  const Triple& deleted = g.triples[deleted_index];

  const EditOutcome edit =
      delete_fact(base, g, names, deleted.subject, deleted.relation, edit_layer, cov, vparams);

  double acc_post;
  if (include_deleted_fact) {
    acc_post = eval_accuracy(edit.model, corpus.full, names, g, 1024);
  } else {
    std::vector<Sentence> kept;
    kept.reserve(corpus.full.size());
    for (const Sentence& s : corpus.full)
      if (s.triple_index != deleted_index) kept.push_back(s);
    acc_post = eval_accuracy(edit.model, kept, names, g, 1024);
  }

  const DegreeTable deg = degree_table(g);
  ImpactRecord rec;
  rec.subject_id = subject_id;
  rec.degree_total = deg.total_degree[subject_id];
  rec.degree_out = deg.out_degree[subject_id];
  rec.degree_in = deg.in_degree[subject_id];
  rec.relation_deleted = deleted.relation;
  rec.object_deleted = deleted.object;
  rec.acc_pre = acc_pre;
  rec.acc_post = acc_post;
  rec.impact = acc_pre - acc_post;
  rec.surface_efficacy = edit.solution.surface_efficacy;
  rec.exact_solve_rel_err = edit.solution.exact_solve_rel_err;
  rec.delta_sigma_ratio = edit.solution.delta_sigma_ratio;
  rec.include_deleted_fact = include_deleted_fact;
  return rec;
}

SweepResult sweep(const Model& base, const KnowledgeGraph& g, const NameTable& names,
                  const Corpus& corpus, const SweepParams& params) {
  require(params.jobs >= 1, errc::validation, "jobs must be >= 1");

  SweepResult result;
  result.acc_pre = eval_accuracy(base, corpus.full, names, g, 1024);
  require(result.acc_pre >= params.accuracy_gate, errc::gate,
          "accuracy gate not met: full-data accuracy " + format_double(result.acc_pre, 4) +
              " is below " + format_double(params.accuracy_gate, 4));

  const auto train = corpus.train_sentences();
  const size_t sample_n = std::min<size_t>(train.size(), params.covariance_sample);
  const Covariance cov =
      Covariance::estimate(base, std::span<const Sentence>(train.data(), sample_n),
                           params.edit_layer, params.ridge_scale);

  const DegreeTable deg = degree_table(g);
  std::vector<int> eligible;
  for (int s = 0; s < g.n_entities; ++s) {
    if (deg.out_degree[s] >= 1) {
      eligible.push_back(s);
    } else {
      result.skipped.emplace_back(s, "no outgoing triples");
    }
  }

  auto seed_rng = make_rng(params.seed);
  std::vector<ImpactRecord> records(eligible.size());
  std::atomic<size_t> next{0};

  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= eligible.size()) break;
      const int subject = eligible[i];
      // per-subject stream: independent of sweep order and job count
      const uint64_t seed = seed_rng.child(static_cast<uint64_t>(subject)).seed();
      records[i] = measure_impact(base, g, names, corpus, subject, cov, params.edit_layer,
                                  params.value_opt, params.include_deleted_fact, seed,
                                  result.acc_pre);
    }
  };

  if (params.jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < params.jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  result.records = std::move(records);
  return result;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), errc::validation, "pearson: length mismatch");
  const size_t n = xs.size();
  require(n >= 2, errc::validation, "pearson: need at least two points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  require(sxx > 0.0 && syy > 0.0, errc::validation,
          "pearson: undefined for zero-variance input");
  return sxy / std::sqrt(sxx * syy);
}

ImpactStats impact_stats(std::span<const double> values) {
  require(!values.empty(), errc::validation, "impact_stats: empty input");
  ImpactStats st;
  st.max = values[0];
  st.min = values[0];
  double sum = 0;
  for (double v : values) {
    st.max = std::max(st.max, v);
    st.min = std::min(st.min, v);
    sum += v;
  }
  st.mean = sum / double(values.size());
  double var = 0;
  for (double v : values) var += (v - st.mean) * (v - st.mean);
  st.sd = std::sqrt(var / double(values.size()));
  return st;
}

PcaResult pca(std::span<const double> vectors, int n, int d, int k) {
  require(n >= 1 && d >= 1, errc::validation, "pca: bad dimensions");
  require(vectors.size() == static_cast<size_t>(n) * d, errc::validation,
          "pca: buffer size mismatch");
  require(k >= 1 && k <= d, errc::validation, "pca: k must be within the dimension");
  require(n >= k, errc::validation, "pca: need at least k vectors");

  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += vectors[static_cast<size_t>(i) * d + j];
  for (double& m : mean) m /= double(n);

  std::vector<double> centered(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      centered[static_cast<size_t>(i) * d + j] = vectors[static_cast<size_t>(i) * d + j] - mean[j];

  // covariance (uncentered over centered data): (1/n) X^T X
  std::vector<double> covm(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = centered.data() + static_cast<size_t>(i) * d;
    for (int a = 0; a < d; ++a) {
      const double ra = row[a];
      if (ra == 0.0) continue;
      double* crow = covm.data() + static_cast<size_t>(a) * d;
      for (int b = 0; b < d; ++b) crow[b] += ra * row[b];
    }
  }
  for (double& x : covm) x /= double(n);

  std::vector<double> evals, evecs;
  eigh(covm, d, evals, evecs);

  double total_var = 0;
  for (double v : evals) total_var += std::max(v, 0.0);

  PcaResult res;
  res.n = n;
  res.d = d;
  res.k = k;
  res.components.assign(static_cast<size_t>(k) * d, 0.0);
  res.explained_variance_ratio.resize(k);
  for (int c = 0; c < k; ++c) {
    const double* v = evecs.data() + static_cast<size_t>(c) * d;
    // sign: largest-magnitude coordinate positive
    int arg = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    const double sign = v[arg] < 0 ? -1.0 : 1.0;
    for (int j = 0; j < d; ++j) res.components[static_cast<size_t>(c) * d + j] = sign * v[j];
    res.explained_variance_ratio[c] = total_var > 0 ? std::max(evals[c], 0.0) / total_var : 0.0;
  }

  res.coords.assign(static_cast<size_t>(n) * k, 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      double s = 0;
      for (int j = 0; j < d; ++j)
        s += centered[static_cast<size_t>(i) * d + j] *
             res.components[static_cast<size_t>(c) * d + j];
      res.coords[static_cast<size_t>(i) * k + c] = s;
    }
  return res;
}

double paraphrase_purity(std::span<const double> embeddings, int n, int d, int group_size,
                         int k) {
  require(n >= 2 && d >= 1, errc::validation, "purity: bad dimensions");
  require(embeddings.size() == static_cast<size_t>(n) * d, errc::validation,
          "purity: buffer size mismatch");
  require(group_size >= 2 && n % group_size == 0, errc::validation,
          "purity: n must be a multiple of the paraphrase group size");
  require(k >= 1 && k < n, errc::validation, "purity: k out of range");

  std::vector<std::pair<double, int>> dist(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* xi = embeddings.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < n; ++j) {
      const double* xj = embeddings.data() + static_cast<size_t>(j) * d;
      double s = 0;
      for (int a = 0; a < d; ++a) {
        const double diff = xi[a] - xj[a];
        s += diff * diff;
      }
      dist[j] = {s, j};
    }
    dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    int same = 0;
    for (int j = 0; j < k; ++j)
      if (dist[j].second / group_size == i / group_size) same++;
    total += double(same) / k;
  }
  return total / n;
}

std::vector<double> extract_embeddings(const Model& m, const NameTable& names,
                                       NameFamily family) {
  const int d = m.config.d_model;
  const int first = family == NameFamily::entities
                        ? 0
                        : NameTable::kParaphrases * names.n_entities();
  const int count = NameTable::kParaphrases *
                    (family == NameFamily::entities ? names.n_entities() : names.n_relations());
  std::vector<double> out(static_cast<size_t>(count) * d);
  const float* wte = m.p(m.layout.wte);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(i) * d + j] =
          double(wte[static_cast<size_t>(first + i) * d + j]);
  return out;
}

}  // namespace ulab

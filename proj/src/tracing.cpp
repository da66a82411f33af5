#include "ulab/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ulab/kernels.hpp"

namespace ulab {

double embedding_std(const Model& m) {
  const size_t n = static_cast<size_t>(m.config.vocab_size) * m.config.d_model;
  const float* w = m.p(m.layout.wte);
  double sum = 0.0, sum2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum += w[i];
    sum2 += double(w[i]) * w[i];
  }
  const double mean = sum / double(n);
  return std::sqrt(std::max(0.0, sum2 / double(n) - mean * mean));
}

NoiseBatch make_noise(const Model& m, const NoiseSpec& spec, int seq_len, int subject_pos,
                      uint64_t seed) {
  require(spec.std_multiplier > 0.0, errc::validation, "noise std multiplier must be > 0");
  require(spec.samples >= 1, errc::validation, "need at least one noise sample");
  require(subject_pos >= 0 && subject_pos < seq_len, errc::validation,
          "subject position out of range");
  const int d = m.config.d_model;
  const double sigma = spec.std_multiplier * embedding_std(m);
  NoiseBatch nb;
  nb.samples = spec.samples;
  nb.seq_len = seq_len;
  nb.emb_add.assign(static_cast<size_t>(spec.samples) * seq_len * d, 0.0f);
  auto rng = make_rng(seed);
  for (int s = 0; s < spec.samples; ++s) {
    float* row = nb.emb_add.data() + (static_cast<size_t>(s) * seq_len + subject_pos) * d;
    for (int i = 0; i < d; ++i) row[i] = static_cast<float>(rng.normal() * sigma);
  }
  return nb;
}

namespace {

// Mean gold-paraphrase probability over the batch rows' last-position logits.
double gold_probability(const Model& m, const BatchCache<float>& cache, int gold_entity,
                        const NameTable& names, bool paraphrase_gold) {
  const int V = m.config.vocab_size;
  const int rows = cache.logit_rows();
  std::vector<float> probs(static_cast<size_t>(rows) * V);
  kernels::softmax_rows(cache.logits.data(), probs.data(), rows, V);
  double total = 0.0;
  const int n_names = paraphrase_gold ? NameTable::kParaphrases : 1;
  for (int r = 0; r < rows; ++r) {
    const float* prow = probs.data() + static_cast<size_t>(r) * V;
    double p = 0.0;
    for (int j = 0; j < n_names; ++j) p += prow[names.entity_token(gold_entity, j)];
    total += p;
  }
  return total / rows;
}

std::vector<int> repeat_prefix(std::array<int, 2> prefix, int rows) {
  std::vector<int> tokens(static_cast<size_t>(rows) * 2);
  for (int r = 0; r < rows; ++r) {
    tokens[r * 2] = prefix[0];
    tokens[r * 2 + 1] = prefix[1];
  }
  return tokens;
}

}  // namespace

CleanRun clean_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                   const NameTable& names, bool paraphrase_gold) {
  CleanRun out;
  out.states.resize(m.config.n_layers, 2, m.config.d_model);
  Hooks<float> hooks;
  hooks.capture = &out.states;
  BatchCache<float> cache;
  const auto tokens = repeat_prefix(prefix, 1);
  forward_batch(m, tokens.data(), 1, 2, cache, /*logits_all=*/false, &hooks);
  out.p_gold = gold_probability(m, cache, gold_entity, names, paraphrase_gold);
  return out;
}

double corrupted_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                     const NameTable& names, const NoiseBatch& noise, bool paraphrase_gold) {
  require(noise.seq_len == 2, errc::validation, "noise batch has wrong sequence length");
  Hooks<float> hooks;
  hooks.emb_add = noise.emb_add.data();
  BatchCache<float> cache;
  const auto tokens = repeat_prefix(prefix, noise.samples);
  forward_batch(m, tokens.data(), noise.samples, 2, cache, /*logits_all=*/false, &hooks);
  return gold_probability(m, cache, gold_entity, names, paraphrase_gold);
}

double restoration_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                       const NameTable& names, const NoiseBatch& noise, const CleanRun& clean,
                       std::span<const SiteRef> restore, bool paraphrase_gold) {
  require(noise.seq_len == 2, errc::validation, "noise batch has wrong sequence length");
  Hooks<float> hooks;
  hooks.emb_add = noise.emb_add.data();
  for (const SiteRef& ref : restore) {
    require(ref.layer >= 0 && ref.layer < m.config.n_layers, errc::validation,
            "restoration layer out of range");
    require(ref.pos >= 0 && ref.pos < 2, errc::validation, "restoration position out of range");
    hooks.overrides.push_back(
        {ref.site, ref.layer, ref.pos, clean.states.at(ref.site, ref.layer, ref.pos)});
  }
  BatchCache<float> cache;
  const auto tokens = repeat_prefix(prefix, noise.samples);
  forward_batch(m, tokens.data(), noise.samples, 2, cache, /*logits_all=*/false, &hooks);
  return gold_probability(m, cache, gold_entity, names, paraphrase_gold);
}

double& TraceGrid::cell(int pos, int layer, Site site) {
  const int s = site == Site::residual ? 0 : (site == Site::attn ? 1 : 2);
  return delta_p[(static_cast<size_t>(pos) * n_layers + layer) * 3 + s];
}

double TraceGrid::cell(int pos, int layer, Site site) const {
  return const_cast<TraceGrid*>(this)->cell(pos, layer, site);
}

TraceGrid trace_grid(const Model& m, const KnowledgeGraph& g, const NameTable& names,
                     const TraceGridParams& params) {
  require(!g.triples.empty(), errc::validation, "graph has no triples to probe");
  require(params.probe_count >= 1, errc::validation, "probe count must be >= 1");

  TraceGrid grid;
  grid.seq_len = 2;
  grid.n_layers = m.config.n_layers;
  grid.delta_p.assign(static_cast<size_t>(2) * m.config.n_layers * 3, 0.0);

  // Probe facts: sampled without replacement, canonical surface forms.
  auto rng = make_rng(params.seed);
  std::vector<int> pool(g.triples.size());
  for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
  const int n_probe = std::min<int>(params.probe_count, static_cast<int>(pool.size()));
  for (int i = 0; i < n_probe; ++i) {
    const int j = i + static_cast<int>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  static const Site kSites[3] = {Site::residual, Site::attn, Site::ffn};
  for (int f = 0; f < n_probe; ++f) {
    const Triple& t = g.triples[pool[f]];
    const std::array<int, 2> prefix = {names.entity_token(t.subject, 0),
                                       names.relation_token(t.relation, 0)};
    const CleanRun clean =
        clean_run(m, prefix, t.object, names, params.paraphrase_gold);
    const NoiseBatch noise =
        make_noise(m, params.noise, 2, 0, rng.child(static_cast<uint64_t>(f)).seed());
    const double p_corrupt =
        corrupted_run(m, prefix, t.object, names, noise, params.paraphrase_gold);

    for (int pos = 0; pos < 2; ++pos) {
      for (int layer = 0; layer < m.config.n_layers; ++layer) {
        for (Site site : kSites) {
          const SiteRef ref{site, layer, pos};
          const double p_restored = restoration_run(
              m, prefix, t.object, names, noise, clean, std::span<const SiteRef>(&ref, 1),
              params.paraphrase_gold);
          grid.cell(pos, layer, site) += (p_restored - p_corrupt) / n_probe;
        }
      }
    }
  }
  return grid;
}

int select_edit_layer(const TraceGrid& grid) {
  int best = -1;
  double best_dp = 0.0;
  for (int layer = 0; layer < grid.n_layers; ++layer) {
    const double dp = grid.cell(0, layer, Site::ffn);
    if (dp > best_dp) {
      best_dp = dp;
      best = layer;
    }
  }
  require(best >= 0, errc::gate,
          "degenerate trace grid: no FFN site at the subject position has positive gain");
  return best;
}

std::string trace_grid_csv(const TraceGrid& grid) {
  static const Site kSites[3] = {Site::residual, Site::attn, Site::ffn};
  std::ostringstream out;
  out << "position,layer,site,delta_p\n";
  for (int pos = 0; pos < grid.seq_len; ++pos)
    for (int layer = 0; layer < grid.n_layers; ++layer)
      for (Site site : kSites)
        out << pos << ',' << layer << ',' << to_string(site) << ','
            << format_double(grid.cell(pos, layer, site), 6) << '\n';
  return out.str();
}

}  // namespace ulab

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ulab/corpus.hpp"
#include "ulab/model.hpp"

namespace ulab {

struct NoiseSpec {
  double std_multiplier = 3.0;  // times the empirical embedding std
  int samples = 10;
};

// Standard deviation over all token-embedding entries.
double embedding_std(const Model& m);

// Pre-drawn Gaussian noise for the subject-position embedding, one draw per
// sample row. Stored as an additive [samples * T * d] buffer.
struct NoiseBatch {
  int samples = 0;
  int seq_len = 0;
  std::vector<float> emb_add;
};
NoiseBatch make_noise(const Model& m, const NoiseSpec& spec, int seq_len, int subject_pos,
                      uint64_t seed);

struct CleanRun {
  StateCapture<float> states;
  double p_gold = 0.0;
};

// Probability mass assigned to the gold object at the last position:
// summed over the object's five paraphrase names, or only name 0 when
// paraphrase_gold is false.
CleanRun clean_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                   const NameTable& names, bool paraphrase_gold = true);

double corrupted_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                     const NameTable& names, const NoiseBatch& noise,
                     bool paraphrase_gold = true);

struct SiteRef {
  Site site;
  int layer;
  int pos;
};

// Corrupted forward with the listed states restored to their clean values.
double restoration_run(const Model& m, std::array<int, 2> prefix, int gold_entity,
                       const NameTable& names, const NoiseBatch& noise, const CleanRun& clean,
                       std::span<const SiteRef> restore, bool paraphrase_gold = true);

struct TraceGrid {
  int seq_len = 0;
  int n_layers = 0;
  // delta_p indexed [pos][layer][site] with sites ordered residual, attn, ffn
  std::vector<double> delta_p;

  double& cell(int pos, int layer, Site site);
  double cell(int pos, int layer, Site site) const;
};

struct TraceGridParams {
  NoiseSpec noise;
  int probe_count = 20;
  uint64_t seed = 0;
  bool paraphrase_gold = true;
};

// Restoration gain averaged over probe facts and noise samples for every
// (position, layer, site).
TraceGrid trace_grid(const Model& m, const KnowledgeGraph& g, const NameTable& names,
                     const TraceGridParams& params);

// Argmax of FFN-site gain at the subject position; ties break toward the
// lower layer. Fails when no cell is positive.
int select_edit_layer(const TraceGrid& grid);

std::string trace_grid_csv(const TraceGrid& grid);

}  // namespace ulab

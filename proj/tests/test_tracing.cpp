#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ulab/tracing.hpp"

using namespace ulab;

namespace {

struct Fixture {
  KnowledgeGraph g;
  NameTable names;
  Model model;

  Fixture() {
    g = synthesize_ba(12, 6, 2, 3);
    names = build_name_table(g);
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.vocab_size = names.vocab_size();
    cfg.seed = 8;
    model = init_model<float>(cfg);
  }

  std::array<int, 2> prefix(int t = 0) const {
    return {names.entity_token(g.triples[t].subject, 0),
            names.relation_token(g.triples[t].relation, 0)};
  }
  int gold(int t = 0) const { return g.triples[t].object; }
};

}  // namespace

TEST_CASE("clean run records every state and is deterministic") {
  Fixture f;
  const CleanRun a = clean_run(f.model, f.prefix(), f.gold(), f.names);
  const CleanRun b = clean_run(f.model, f.prefix(), f.gold(), f.names);
  CHECK(a.p_gold == b.p_gold);
  CHECK(a.states.residual == b.states.residual);
  CHECK(a.states.attn == b.states.attn);
  CHECK(a.states.ffn == b.states.ffn);
  CHECK(a.p_gold > 0.0);
  CHECK(a.p_gold <= 1.0);
  // padded grid fully populated
  CHECK(a.states.n_layers == f.model.config.n_layers);
  CHECK(a.states.seq_len == 2);
}

TEST_CASE("position-0 states do not depend on the relation token") {
  Fixture f;
  const auto p1 = f.prefix();
  std::array<int, 2> p2 = p1;
  p2[1] = f.names.relation_token((f.g.triples[0].relation + 1) % f.g.n_relations, 2);
  const CleanRun a = clean_run(f.model, p1, f.gold(), f.names);
  const CleanRun b = clean_run(f.model, p2, f.gold(), f.names);
  const int d = f.model.config.d_model;
  for (int l = 0; l < f.model.config.n_layers; ++l)
    for (int i = 0; i < d; ++i) {
      CHECK(a.states.at(Site::residual, l, 0)[i] == b.states.at(Site::residual, l, 0)[i]);
      CHECK(a.states.at(Site::ffn, l, 0)[i] == b.states.at(Site::ffn, l, 0)[i]);
    }
}

TEST_CASE("zero-ish noise reproduces the clean probability") {
  Fixture f;
  NoiseSpec spec;
  spec.std_multiplier = 1e-12;
  spec.samples = 4;
  const NoiseBatch noise = make_noise(f.model, spec, 2, 0, 42);
  const CleanRun clean = clean_run(f.model, f.prefix(), f.gold(), f.names);
  const double p = corrupted_run(f.model, f.prefix(), f.gold(), f.names, noise);
  CHECK(p == doctest::Approx(clean.p_gold).epsilon(1e-4));
}

TEST_CASE("full restoration reproduces the clean probability exactly") {
  Fixture f;
  NoiseSpec spec;  // default 3x, 10 samples
  const NoiseBatch noise = make_noise(f.model, spec, 2, 0, 7);
  const CleanRun clean = clean_run(f.model, f.prefix(), f.gold(), f.names);

  std::vector<SiteRef> all;
  for (int l = 0; l < f.model.config.n_layers; ++l)
    for (int pos = 0; pos < 2; ++pos)
      for (Site s : {Site::residual, Site::attn, Site::ffn}) all.push_back({s, l, pos});
  const double p = restoration_run(f.model, f.prefix(), f.gold(), f.names, noise, clean, all);
  CHECK(p == clean.p_gold);  // bitwise identity

  // restoring just the residual stream everywhere is also a full restoration
  std::vector<SiteRef> residual_only;
  for (int l = 0; l < f.model.config.n_layers; ++l)
    for (int pos = 0; pos < 2; ++pos) residual_only.push_back({Site::residual, l, pos});
  CHECK(restoration_run(f.model, f.prefix(), f.gold(), f.names, noise, clean, residual_only) ==
        clean.p_gold);
}

TEST_CASE("restoration validates the site") {
  Fixture f;
  const NoiseBatch noise = make_noise(f.model, {}, 2, 0, 7);
  const CleanRun clean = clean_run(f.model, f.prefix(), f.gold(), f.names);
  const SiteRef bad_layer{Site::ffn, 99, 0};
  CHECK_THROWS_AS(restoration_run(f.model, f.prefix(), f.gold(), f.names, noise, clean,
                                  std::span<const SiteRef>(&bad_layer, 1)),
                  Error);
  const SiteRef bad_pos{Site::ffn, 0, 5};
  CHECK_THROWS_AS(restoration_run(f.model, f.prefix(), f.gold(), f.names, noise, clean,
                                  std::span<const SiteRef>(&bad_pos, 1)),
                  Error);
}

TEST_CASE("trace grid dimensions, bounds, determinism; untrained model is flat") {
  Fixture f;
  TraceGridParams params;
  params.probe_count = 4;
  params.noise.samples = 4;
  params.seed = 5;
  const TraceGrid a = trace_grid(f.model, f.g, f.names, params);
  CHECK(a.seq_len == 2);
  CHECK(a.n_layers == f.model.config.n_layers);
  CHECK(a.delta_p.size() == size_t(2) * 3 * 3);
  for (double dp : a.delta_p) {
    CHECK(dp >= -1.0);
    CHECK(dp <= 1.0);
    CHECK(std::abs(dp) <= 0.05);  // nothing memorized, nothing to restore
  }
  const TraceGrid b = trace_grid(f.model, f.g, f.names, params);
  CHECK(a.delta_p == b.delta_p);
}

TEST_CASE("select_edit_layer: peak, tie toward lower layer, degenerate failure") {
  TraceGrid g;
  g.seq_len = 2;
  g.n_layers = 4;
  g.delta_p.assign(size_t(2) * 4 * 3, 0.0);
  g.cell(0, 2, Site::ffn) = 0.5;
  g.cell(0, 1, Site::ffn) = 0.2;
  CHECK(select_edit_layer(g) == 2);

  g.cell(0, 1, Site::ffn) = 0.5;  // tie: prefer lower layer
  CHECK(select_edit_layer(g) == 1);

  std::fill(g.delta_p.begin(), g.delta_p.end(), -0.1);
  CHECK_THROWS_AS(select_edit_layer(g), Error);
}

TEST_CASE("trace csv shape") {
  TraceGrid g;
  g.seq_len = 2;
  g.n_layers = 2;
  g.delta_p.assign(size_t(2) * 2 * 3, 0.25);
  const std::string csv = trace_grid_csv(g);
  CHECK(csv.find("position,layer,site,delta_p\n") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2 * 3);
  CHECK(csv.find("0,0,residual,0.250000") != std::string::npos);
  CHECK(csv.find("1,1,ffn,0.250000") != std::string::npos);
}

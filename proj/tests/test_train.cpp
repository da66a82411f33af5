#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ulab/train.hpp"

using namespace ulab;

namespace {

ModelConfig small_config(int vocab, uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.vocab_size = vocab;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("predictor-level accuracy oracles") {
  const auto g = synthesize_ba(200, 50, 2, 1);
  const NameTable names = build_name_table(g);
  const auto full = expand_triples(g, names);

  SUBCASE("always-gold predictor scores 1.0") {
    auto gold = [&](const int* toks, int B, int) {
      std::vector<int> out(B);
      for (int b = 0; b < B; ++b) {
        const int subject = names.entity_of(toks[b * 2]);
        const int relation = names.relation_of(toks[b * 2 + 1]);
        for (const Triple& t : g.triples)
          if (t.subject == subject && t.relation == relation) {
            out[b] = names.entity_token(t.object, 0);
            break;
          }
      }
      return out;
    };
    CHECK(eval_accuracy_with(gold, full, names, g) == 1.0);
  }

  SUBCASE("uniform-random predictor scores about 5/vocab") {
    auto rng = make_rng(99);
    auto random_pred = [&](const int*, int B, int) {
      std::vector<int> out(B);
      for (int b = 0; b < B; ++b) out[b] = int(rng.below(names.vocab_size()));
      return out;
    };
    // closed form: P(hit) = 5 / 1251 ~= 0.004; Monte Carlo over ~10k prefixes
    const double acc = eval_accuracy_with(random_pred, full, names, g);
    CHECK(acc < 0.012);
    CHECK(acc >= 0.0);
  }
}

TEST_CASE("deduplicated evaluation equals the naive per-sentence loop") {
  const auto g = synthesize_ba(10, 5, 2, 3);
  const NameTable names = build_name_table(g);
  const auto full = expand_triples(g, names);
  const auto m = init_model<float>(small_config(names.vocab_size(), 7));

  const double fast = eval_accuracy(m, full, names, g);

  long correct = 0;
  BatchCache<float> cache;
  for (const Sentence& s : full) {
    const int toks[2] = {s.tokens[0], s.tokens[1]};
    const auto pred = predict_last_argmax(m, toks, 1, 2, cache);
    const int gold = g.triples[s.triple_index].object;
    if (names.is_entity_token(pred[0]) && names.entity_of(pred[0]) == gold) correct++;
  }
  CHECK(fast == doctest::Approx(double(correct) / full.size()).epsilon(1e-12));
}

TEST_CASE("single-fact corpus is memorized almost immediately") {
  KnowledgeGraph g;
  g.n_entities = 4;
  g.n_relations = 2;
  g.triples = {{0, 1, 2}};
  g.validate();
  const NameTable names = build_name_table(g);
  auto full = expand_triples(g, names);
  const Corpus corpus = sample_training(g, full, 1.0, 1);

  auto m = init_model<float>(small_config(names.vocab_size(), 2));
  TrainHyperparams hp;
  hp.batch_size = 32;
  hp.max_epochs = 30;
  hp.learning_rate = 3e-3;
  hp.warmup_steps = 10;
  const TrainReport rep = train_model(m, corpus, names, g, hp);
  CHECK(rep.final_full_accuracy == 1.0);
  CHECK(rep.reached_target);
  CHECK(rep.epochs.front().loss < std::log(double(names.vocab_size())));
}

TEST_CASE("training is deterministic given the seed") {
  const auto g = synthesize_ba(8, 4, 2, 5);
  const NameTable names = build_name_table(g);
  const Corpus corpus = sample_training(g, expand_triples(g, names), 0.5, 3);

  auto run = [&] {
    auto m = init_model<float>(small_config(names.vocab_size(), 4));
    TrainHyperparams hp;
    hp.batch_size = 64;
    hp.max_epochs = 3;
    hp.target_full_accuracy = 2.0;  // never met: fixed-length run
    hp.seed = 11;
    return train_model(m, corpus, names, g, hp);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].loss == b.epochs[i].loss);
    CHECK(a.epochs[i].full_accuracy == b.epochs[i].full_accuracy);
  }
  CHECK(metrics_csv(a) == metrics_csv(b));
}

TEST_CASE("small graph reaches the accuracy target and reports below-target honestly") {
  const auto g = synthesize_ba(12, 6, 2, 9);
  const NameTable names = build_name_table(g);
  const Corpus corpus = sample_training(g, expand_triples(g, names), 0.2, 5);

  SUBCASE("enough epochs reaches high accuracy") {
    auto m = init_model<float>(small_config(names.vocab_size(), 6));
    TrainHyperparams hp;
    hp.batch_size = 64;
    hp.max_epochs = 150;
    hp.learning_rate = 2e-3;
    hp.target_full_accuracy = 0.95;
    const TrainReport rep = train_model(m, corpus, names, g, hp);
    CHECK(rep.final_full_accuracy >= 0.95);
    CHECK(rep.reached_target);
  }
  SUBCASE("a one-epoch budget reports below target without throwing") {
    auto m = init_model<float>(small_config(names.vocab_size(), 6));
    TrainHyperparams hp;
    hp.max_epochs = 1;
    const TrainReport rep = train_model(m, corpus, names, g, hp);
    CHECK_FALSE(rep.reached_target);
    CHECK(rep.final_full_accuracy < 0.99);
  }
}

TEST_CASE("metrics csv format") {
  TrainReport rep;
  rep.epochs.push_back({1, 3.5, 0.25, 0.125});
  const std::string csv = metrics_csv(rep);
  CHECK(csv == "epoch,loss,train_acc,full_acc\n1,3.500000,0.250000,0.125000\n");
}

#pragma once

#include <functional>
#include <iosfwd>
#include <span>

#include "ulab/corpus.hpp"
#include "ulab/model.hpp"

namespace ulab {

struct TrainHyperparams {
  int batch_size = 256;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 200;
  double target_full_accuracy = 0.99;
  bool full_lm_loss = false;  // ablation: also predict the relation from the subject
  uint64_t seed = 1;          // batch shuffling stream
};

struct EpochStats {
  int epoch;
  double loss;
  double train_accuracy;  // running accuracy over the epoch's own batches
  double full_accuracy;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_train_accuracy = 0.0;
  double final_full_accuracy = 0.0;
  long steps = 0;
  uint64_t seed = 0;
  bool reached_target = false;
};

// Adam with linear warmup; early-stops once full-data accuracy reaches the
// target. A below-target outcome is reported, not thrown.
TrainReport train_model(Model& m, const Corpus& corpus, const NameTable& names,
                        const KnowledgeGraph& g, const TrainHyperparams& hp,
                        std::ostream* log = nullptr);

// Paraphrase-aware accuracy: a sentence counts as correct when the argmax
// next-token prediction after (subject, relation) is any of the gold
// object's five names. Identical prefixes are evaluated once and weighted.
double eval_accuracy(const Model& m, std::span<const Sentence> sentences, const NameTable& names,
                     const KnowledgeGraph& g, int batch_size = 512);

// Same metric over an arbitrary predictor (tokens, B, T_in) -> argmax ids.
using Predictor = std::function<std::vector<int>(const int*, int, int)>;
double eval_accuracy_with(const Predictor& predict, std::span<const Sentence> sentences,
                          const NameTable& names, const KnowledgeGraph& g, int batch_size = 512);

std::string metrics_csv(const TrainReport& report);

}  // namespace ulab

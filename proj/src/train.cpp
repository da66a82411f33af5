#include "ulab/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "ulab/kernels.hpp"

namespace ulab {

namespace {

struct PrefixGroup {
  int tok0, tok1;
  int gold_object;
  int weight;
};

// Collapse sentences sharing (subject, relation) surface forms: correctness
// depends only on the two-token prefix and the gold paraphrase set.
std::vector<PrefixGroup> group_prefixes(std::span<const Sentence> sentences,
                                        const KnowledgeGraph& g) {
  std::map<std::pair<int, int>, PrefixGroup> groups;
  for (const Sentence& s : sentences) {
    auto [it, fresh] = groups.try_emplace({s.tokens[0], s.tokens[1]});
    if (fresh) {
      it->second = {s.tokens[0], s.tokens[1], g.triples[s.triple_index].object, 1};
    } else {
      it->second.weight += 1;
    }
  }
  std::vector<PrefixGroup> out;
  out.reserve(groups.size());
  for (auto& [k, v] : groups) out.push_back(v);
  return out;
}

bool is_gold_paraphrase(int token, int gold_entity, const NameTable& names) {
  return names.is_entity_token(token) && names.entity_of(token) == gold_entity;
}

}  // namespace

double eval_accuracy_with(const Predictor& predict, std::span<const Sentence> sentences,
                          const NameTable& names, const KnowledgeGraph& g, int batch_size) {
  if (sentences.empty()) return 0.0;
  const auto groups = group_prefixes(sentences, g);
  long correct = 0, total = 0;
  std::vector<int> tokens;
  for (size_t start = 0; start < groups.size(); start += static_cast<size_t>(batch_size)) {
    const size_t bs = std::min(static_cast<size_t>(batch_size), groups.size() - start);
    tokens.resize(bs * 2);
    for (size_t i = 0; i < bs; ++i) {
      tokens[i * 2] = groups[start + i].tok0;
      tokens[i * 2 + 1] = groups[start + i].tok1;
    }
    const std::vector<int> preds = predict(tokens.data(), static_cast<int>(bs), 2);
    require(preds.size() == bs, errc::validation, "predictor returned wrong batch size");
    for (size_t i = 0; i < bs; ++i) {
      const PrefixGroup& gr = groups[start + i];
      if (is_gold_paraphrase(preds[i], gr.gold_object, names)) correct += gr.weight;
      total += gr.weight;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double eval_accuracy(const Model& m, std::span<const Sentence> sentences, const NameTable& names,
                     const KnowledgeGraph& g, int batch_size) {
  BatchCache<float> cache;
  auto predict = [&](const int* toks, int B, int T_in) {
    return predict_last_argmax(m, toks, B, T_in, cache);
  };
  return eval_accuracy_with(predict, sentences, names, g, batch_size);
}

TrainReport train_model(Model& m, const Corpus& corpus, const NameTable& names,
                        const KnowledgeGraph& g, const TrainHyperparams& hp, std::ostream* log) {
  require(!corpus.train_indices.empty(), errc::validation, "training corpus is empty");
  require(hp.batch_size >= 1, errc::validation, "batch size must be >= 1");
  require(hp.max_epochs >= 1, errc::validation, "max_epochs must be >= 1");

  const auto train = corpus.train_sentences();
  const int n = static_cast<int>(train.size());
  const int V = m.config.vocab_size;

  TrainReport report;
  report.seed = hp.seed;

  std::vector<float> grads(m.params.size(), 0.0f);
  std::vector<float> adam_m(m.params.size(), 0.0f);
  std::vector<float> adam_v(m.params.size(), 0.0f);
  BatchCache<float> cache;

  auto rng = make_rng(hp.seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  std::vector<int> tokens, labels;
  long step = 0;

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long running_correct = 0;

    for (int start = 0; start < n; start += hp.batch_size) {
      const int bs = std::min(hp.batch_size, n - start);
      tokens.resize(static_cast<size_t>(bs) * 2);
      labels.resize(static_cast<size_t>(bs) * 2);
      for (int i = 0; i < bs; ++i) {
        const Sentence& s = train[order[start + i]];
        tokens[i * 2] = s.tokens[0];
        tokens[i * 2 + 1] = s.tokens[1];
        labels[i * 2] = hp.full_lm_loss ? s.tokens[1] : -1;
        labels[i * 2 + 1] = s.tokens[2];
      }

      forward_batch(m, tokens.data(), bs, 2, cache, /*logits_all=*/hp.full_lm_loss);
      std::fill(grads.begin(), grads.end(), 0.0f);
      const float loss =
          backward_batch(m, tokens.data(), bs, 2, cache, labels.data(), grads);
      if (!std::isfinite(loss)) {
        fail(errc::gate, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + "; aborting training");
      }
      loss_sum += static_cast<double>(loss) * bs;

      // running paraphrase-aware accuracy from the already-computed logits
      for (int i = 0; i < bs; ++i) {
        const size_t row = cache.logits_all ? static_cast<size_t>(i) * 2 + 1
                                            : static_cast<size_t>(i);
        const float* lrow = cache.logits.data() + row * V;
        int best = 0;
        for (int v = 1; v < V; ++v)
          if (lrow[v] > lrow[best]) best = v;
        const Sentence& s = train[order[start + i]];
        if (is_gold_paraphrase(best, g.triples[s.triple_index].object, names)) running_correct++;
      }

      step += 1;
      const double warm =
          hp.warmup_steps > 0 ? std::min(1.0, double(step) / hp.warmup_steps) : 1.0;
      const float lr_t = static_cast<float>(hp.learning_rate * warm);
      const float bc1 = 1.0f - static_cast<float>(std::pow(hp.beta1, double(step)));
      const float bc2 = 1.0f - static_cast<float>(std::pow(hp.beta2, double(step)));
      kernels::adam_step(m.params.data(), grads.data(), adam_m.data(), adam_v.data(),
                         m.params.size(), lr_t, static_cast<float>(hp.beta1),
                         static_cast<float>(hp.beta2), static_cast<float>(hp.adam_eps), bc1, bc2);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / n;
    stats.train_accuracy = static_cast<double>(running_correct) / n;
    stats.full_accuracy = eval_accuracy(m, corpus.full, names, g);
    report.epochs.push_back(stats);
    report.steps = step;

    if (log != nullptr) {
      (*log) << "epoch " << epoch << " loss " << format_double(stats.loss, 4) << " train_acc "
             << format_double(stats.train_accuracy, 4) << " full_acc "
             << format_double(stats.full_accuracy, 4) << "\n";
      log->flush();
    }

    if (stats.full_accuracy >= hp.target_full_accuracy) {
      report.reached_target = true;
      break;
    }
  }

  report.final_train_accuracy = eval_accuracy(m, train, names, g);
  report.final_full_accuracy = eval_accuracy(m, corpus.full, names, g);
  report.reached_target = report.final_full_accuracy >= hp.target_full_accuracy;
  return report;
}

std::string metrics_csv(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,loss,train_acc,full_acc\n";
  for (const EpochStats& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.loss, 6) << ',' << format_double(e.train_accuracy, 6)
        << ',' << format_double(e.full_accuracy, 6) << '\n';
  }
  return out.str();
}

}  // namespace ulab

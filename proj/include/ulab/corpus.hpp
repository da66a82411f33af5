#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulab/graph.hpp"

namespace ulab {

// Five surface names per entity and relation plus the deletion sentinel.
// Token ids are dense: entities block, relations block, sentinel last.
class NameTable {
 public:
  static constexpr int kParaphrases = 5;

  NameTable() = default;
  NameTable(int n_entities, int n_relations);

  int n_entities() const { return n_entities_; }
  int n_relations() const { return n_relations_; }
  int vocab_size() const { return kParaphrases * (n_entities_ + n_relations_) + 1; }

  int entity_token(int entity, int paraphrase) const;
  int relation_token(int relation, int paraphrase) const;
  int deleted_token() const { return kParaphrases * (n_entities_ + n_relations_); }

  const std::string& name(int token) const;
  int token_of(const std::string& name) const;  // fails on unknown names

  bool is_entity_token(int token) const { return token < kParaphrases * n_entities_; }
  // Entity id of an entity token (precondition: is_entity_token).
  int entity_of(int token) const { return token / kParaphrases; }
  int relation_of(int token) const;

  std::string vocab_json() const;

 private:
  int n_entities_ = 0;
  int n_relations_ = 0;
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

NameTable build_name_table(const KnowledgeGraph& g);

// One 3-token surface sentence and the fact it realizes.
struct Sentence {
  std::array<int, 3> tokens;
  int triple_index;
};

struct Corpus {
  std::vector<Sentence> full;       // canonical (token-lexicographic) order
  std::vector<int> train_indices;   // ascending indices into full
  double sample_fraction = 0.0;
  uint64_t seed = 0;

  std::vector<Sentence> train_sentences() const;
};

// All 125 paraphrase combinations of every triple, canonically ordered.
std::vector<Sentence> expand_triples(const KnowledgeGraph& g, const NameTable& names);

// Uniform sample without replacement of round(fraction * |full|) sentences,
// repaired so every triple keeps at least one sampled surface form.
Corpus sample_training(const KnowledgeGraph& g, std::vector<Sentence> full, double fraction,
                       uint64_t seed);

std::string sentences_to_text(const std::vector<Sentence>& sentences, const NameTable& names);
std::vector<Sentence> sentences_from_text(const std::string& text, const NameTable& names,
                                          const KnowledgeGraph& g);

}  // namespace ulab

#include "ulab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ulab {

NameTable::NameTable(int n_entities, int n_relations)
    : n_entities_(n_entities), n_relations_(n_relations) {
  require(n_entities >= 1 && n_relations >= 1, errc::validation,
          "name table needs at least one entity and relation");
  names_.reserve(vocab_size());
  for (int i = 0; i < n_entities_; ++i)
    for (int j = 0; j < kParaphrases; ++j)
      names_.push_back("E" + std::to_string(i) + "_" + std::to_string(j));
  for (int i = 0; i < n_relations_; ++i)
    for (int j = 0; j < kParaphrases; ++j)
      names_.push_back("R" + std::to_string(i) + "_" + std::to_string(j));
  names_.push_back("DEL");
  ids_.reserve(names_.size());
  for (int t = 0; t < static_cast<int>(names_.size()); ++t) ids_.emplace(names_[t], t);
}

int NameTable::entity_token(int entity, int paraphrase) const {
  require(entity >= 0 && entity < n_entities_ && paraphrase >= 0 && paraphrase < kParaphrases,
          errc::validation, "entity token index out of range");
  return entity * kParaphrases + paraphrase;
}

int NameTable::relation_token(int relation, int paraphrase) const {
  require(relation >= 0 && relation < n_relations_ && paraphrase >= 0 &&
              paraphrase < kParaphrases,
          errc::validation, "relation token index out of range");
  return kParaphrases * n_entities_ + relation * kParaphrases + paraphrase;
}

const std::string& NameTable::name(int token) const {
  require(token >= 0 && token < static_cast<int>(names_.size()), errc::validation,
          "token id out of range");
  return names_[token];
}

int NameTable::token_of(const std::string& name) const {
  auto it = ids_.find(name);
  require(it != ids_.end(), errc::validation, "unknown name: " + name);
  return it->second;
}

int NameTable::relation_of(int token) const {
  const int base = kParaphrases * n_entities_;
  require(token >= base && token < base + kParaphrases * n_relations_, errc::validation,
          "not a relation token");
  return (token - base) / kParaphrases;
}

std::string NameTable::vocab_json() const {
  nlohmann::ordered_json j;
  for (int t = 0; t < static_cast<int>(names_.size()); ++t) j[names_[t]] = t;
  return j.dump(2) + "\n";
}

NameTable build_name_table(const KnowledgeGraph& g) {
  return NameTable(g.n_entities, g.n_relations);
}

std::vector<Sentence> expand_triples(const KnowledgeGraph& g, const NameTable& names) {
  std::vector<Sentence> out;
  out.reserve(g.triples.size() * NameTable::kParaphrases * NameTable::kParaphrases *
              NameTable::kParaphrases);
  for (int t = 0; t < static_cast<int>(g.triples.size()); ++t) {
    const Triple& tr = g.triples[t];
    for (int i = 0; i < NameTable::kParaphrases; ++i)
      for (int j = 0; j < NameTable::kParaphrases; ++j)
        for (int k = 0; k < NameTable::kParaphrases; ++k)
          out.push_back({{names.entity_token(tr.subject, i), names.relation_token(tr.relation, j),
                          names.entity_token(tr.object, k)},
                         t});
  }
  std::sort(out.begin(), out.end(),
            [](const Sentence& a, const Sentence& b) { return a.tokens < b.tokens; });
  return out;
}

std::vector<Sentence> Corpus::train_sentences() const {
  std::vector<Sentence> out;
  out.reserve(train_indices.size());
  for (int i : train_indices) out.push_back(full[i]);
  return out;
}

Corpus sample_training(const KnowledgeGraph& g, std::vector<Sentence> full, double fraction,
                       uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, errc::validation,
          "sample fraction must be in (0, 1]");
  // Sampling is defined over the canonical order so that the draw does not
  // depend on the caller's permutation.
  std::sort(full.begin(), full.end(),
            [](const Sentence& a, const Sentence& b) { return a.tokens < b.tokens; });
  const int n = static_cast<int>(full.size());
  const int n_triples = static_cast<int>(g.triples.size());
  const int count = static_cast<int>(std::llround(fraction * n));
  require(count >= n_triples, errc::validation,
          "sample fraction too small to cover every triple at least once");

  auto rng = make_rng(seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  std::vector<char> chosen(n, 0);
  for (int i = 0; i < count; ++i) chosen[order[i]] = 1;

  // Coverage repair: move picks from over-covered triples to uncovered ones.
  std::vector<int> per_triple(n_triples, 0);
  std::vector<std::vector<int>> triple_sentences(n_triples);
  for (int i = 0; i < n; ++i) triple_sentences[full[i].triple_index].push_back(i);
  for (int i = 0; i < n; ++i)
    if (chosen[i]) per_triple[full[i].triple_index]++;

  for (int t = 0; t < n_triples; ++t) {
    if (per_triple[t] > 0) continue;
    const auto& mine = triple_sentences[t];
    const int add = mine[rng.below(mine.size())];
    int donor = -1, donor_count = -1;
    for (int u = 0; u < n_triples; ++u) {
      if (per_triple[u] > donor_count) {
        donor = u;
        donor_count = per_triple[u];
      }
    }
    require(donor_count >= 2, errc::validation, "coverage repair ran out of donors");
    // Drop the donor's canonically-last chosen sentence.
    const auto& donors = triple_sentences[donor];
    for (auto it = donors.rbegin(); it != donors.rend(); ++it) {
      if (chosen[*it]) {
        chosen[*it] = 0;
        break;
      }
    }
    chosen[add] = 1;
    per_triple[donor]--;
    per_triple[t]++;
  }

  Corpus c;
  c.full = std::move(full);
  c.sample_fraction = fraction;
  c.seed = seed;
  c.train_indices.reserve(count);
  for (int i = 0; i < n; ++i)
    if (chosen[i]) c.train_indices.push_back(i);
  return c;
}

std::string sentences_to_text(const std::vector<Sentence>& sentences, const NameTable& names) {
  std::string out;
  for (const Sentence& s : sentences) {
    out += names.name(s.tokens[0]);
    out += ' ';
    out += names.name(s.tokens[1]);
    out += ' ';
    out += names.name(s.tokens[2]);
    out += '\n';
  }
  return out;
}

std::vector<Sentence> sentences_from_text(const std::string& text, const NameTable& names,
                                          const KnowledgeGraph& g) {
  // (subject, relation) -> triple index, for re-attaching sentence provenance.
  std::map<std::pair<int, int>, int> sr_index;
  for (int t = 0; t < static_cast<int>(g.triples.size()); ++t)
    sr_index[{g.triples[t].subject, g.triples[t].relation}] = t;

  std::vector<Sentence> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string w0, w1, w2, extra;
    require(static_cast<bool>(ls >> w0 >> w1 >> w2), errc::validation,
            "corpus line " + std::to_string(lineno) + " does not have three words");
    require(!(ls >> extra), errc::validation,
            "corpus line " + std::to_string(lineno) + " has more than three words");
    Sentence s{};
    s.tokens = {names.token_of(w0), names.token_of(w1), names.token_of(w2)};
    require(names.is_entity_token(s.tokens[0]) && names.is_entity_token(s.tokens[2]),
            errc::validation, "corpus line " + std::to_string(lineno) + " has a malformed shape");
    const int subject = names.entity_of(s.tokens[0]);
    const int relation = names.relation_of(s.tokens[1]);
    auto it = sr_index.find({subject, relation});
    require(it != sr_index.end(), errc::validation,
            "corpus line " + std::to_string(lineno) + " does not match any triple");
    require(g.triples[it->second].object == names.entity_of(s.tokens[2]), errc::validation,
            "corpus line " + std::to_string(lineno) + " object disagrees with the graph");
    s.triple_index = it->second;
    out.push_back(s);
  }
  return out;
}

}  // namespace ulab

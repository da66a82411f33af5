#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

enum class GraphKind { er, ba };

std::string to_string(GraphKind k);
GraphKind graph_kind_from_string(const std::string& s);

struct Triple {
  int subject;
  int relation;
  int object;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Ground-truth fact set. Triples are kept sorted; (subject, relation) is
// unique so every query has exactly one gold object.
struct KnowledgeGraph {
  GraphKind kind = GraphKind::er;
  uint64_t seed = 0;
  int n_entities = 0;
  int n_relations = 0;
  double er_p = 0.0;  // set when kind == er
  int ba_m = 0;       // set when kind == ba
  std::vector<Triple> triples;

  void validate() const;
};

struct DegreeTable {
  std::vector<int> out_degree;
  std::vector<int> in_degree;
  std::vector<int> total_degree;
};

// Undirected edges as (lo, hi) vertex pairs, sorted, no duplicates.
using EdgeList = std::vector<std::pair<int, int>>;

// Erdős–Rényi: every unordered pair independently with probability p.
EdgeList gen_er(int n, double p, uint64_t seed);

// Barabási–Albert: m-clique seed, then preferential attachment of m edges
// per new vertex. Always yields m*(n-m) + m*(m-1)/2 edges.
EdgeList gen_ba(int n, int m, uint64_t seed);

// Orients edges and assigns relations uniformly, re-drawing on
// (subject, relation) collisions and flipping orientation as a last resort.
KnowledgeGraph assign_relations(const EdgeList& edges, int n_entities, int n_relations,
                                uint64_t seed);

DegreeTable degree_table(const KnowledgeGraph& g);

// gen_er/gen_ba + assign_relations with sub-seeds derived from `seed`;
// fills in the metadata fields.
KnowledgeGraph synthesize_er(int n_entities, int n_relations, double p, uint64_t seed);
KnowledgeGraph synthesize_ba(int n_entities, int n_relations, int m, uint64_t seed);

// ER edge probability giving the same expected edge count as BA with
// attachment m (which is deterministic), so corpus sizes are comparable.
double er_probability_matching_ba(int n, int m);

std::string graph_to_json(const KnowledgeGraph& g);
KnowledgeGraph graph_from_json(const std::string& text);

}  // namespace ulab

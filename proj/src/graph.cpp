#include "ulab/graph.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

namespace ulab {

std::string to_string(GraphKind k) { return k == GraphKind::er ? "er" : "ba"; }

GraphKind graph_kind_from_string(const std::string& s) {
  if (s == "er") return GraphKind::er;
  if (s == "ba") return GraphKind::ba;
  fail(errc::validation, "unknown graph kind: " + s);
}

void KnowledgeGraph::validate() const {
  require(n_entities >= 2, errc::validation, "graph needs at least 2 entities");
  require(n_relations >= 1, errc::validation, "graph needs at least 1 relation");
  std::set<std::pair<int, int>> sr;
  for (const Triple& t : triples) {
    require(t.subject >= 0 && t.subject < n_entities, errc::validation,
            "triple subject out of range");
    require(t.object >= 0 && t.object < n_entities, errc::validation,
            "triple object out of range");
    require(t.relation >= 0 && t.relation < n_relations, errc::validation,
            "triple relation out of range");
    require(t.subject != t.object, errc::validation, "self-loop triple");
    require(sr.insert({t.subject, t.relation}).second, errc::validation,
            "duplicate (subject, relation) pair breaks functionality");
  }
  require(std::is_sorted(triples.begin(), triples.end()), errc::validation,
          "triples not in canonical order");
}

EdgeList gen_er(int n, double p, uint64_t seed) {
  require(n >= 2, errc::validation, "gen_er requires n >= 2");
  require(p >= 0.0 && p <= 1.0, errc::validation, "edge probability must be in [0, 1]");
  auto rng = make_rng(seed);
  EdgeList edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.next_unit() < p) edges.emplace_back(i, j);
  return edges;
}

EdgeList gen_ba(int n, int m, uint64_t seed) {
  require(n >= 2, errc::validation, "gen_ba requires n >= 2");
  require(m >= 1 && m < n, errc::validation, "gen_ba requires 1 <= m < n");
  auto rng = make_rng(seed);
  EdgeList edges;
  // Degree-proportional sampling bag: vertex id appears once per incident edge.
  std::vector<int> bag;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      edges.emplace_back(i, j);
      bag.push_back(i);
      bag.push_back(j);
    }
  std::vector<int> targets;
  for (int v = m; v < n; ++v) {
    targets.clear();
    while (static_cast<int>(targets.size()) < m) {
      int t;
      if (bag.empty()) {
        t = static_cast<int>(rng.below(static_cast<uint64_t>(v)));
      } else {
        t = bag[rng.below(bag.size())];
      }
      if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
    }
    for (int t : targets) {
      edges.emplace_back(std::min(v, t), std::max(v, t));
      bag.push_back(t);
    }
    for (int i = 0; i < m; ++i) bag.push_back(v);
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

KnowledgeGraph assign_relations(const EdgeList& edges, int n_entities, int n_relations,
                                uint64_t seed) {
  require(n_relations >= 1, errc::validation, "need at least 1 relation");
  for (const auto& [a, b] : edges) {
    require(a != b, errc::validation, "edge set contains a self-loop");
    require(a >= 0 && b >= 0 && a < n_entities && b < n_entities, errc::validation,
            "edge endpoint out of range");
  }
  auto rng = make_rng(seed);
  std::set<std::pair<int, int>> used;  // (subject, relation)
  std::vector<Triple> triples;
  triples.reserve(edges.size());

  auto try_place = [&](int s, int o) -> bool {
    for (int attempt = 0; attempt < n_relations; ++attempt) {
      const int r = static_cast<int>(rng.below(static_cast<uint64_t>(n_relations)));
      if (used.insert({s, r}).second) {
        triples.push_back({s, r, o});
        return true;
      }
    }
    return false;
  };

  for (const auto& [a, b] : edges) {
    const bool swap = rng.below(2) == 1;
    const int s = swap ? b : a;
    const int o = swap ? a : b;
    if (try_place(s, o)) continue;
    if (try_place(o, s)) continue;
    fail(errc::gate, "could not place edge (" + std::to_string(a) + ", " + std::to_string(b) +
                         ") after exhausting both orientations");
  }

  std::sort(triples.begin(), triples.end());
  KnowledgeGraph g;
  g.n_entities = n_entities;
  g.n_relations = n_relations;
  g.triples = std::move(triples);
  g.validate();
  return g;
}

DegreeTable degree_table(const KnowledgeGraph& g) {
  DegreeTable d;
  d.out_degree.assign(g.n_entities, 0);
  d.in_degree.assign(g.n_entities, 0);
  d.total_degree.assign(g.n_entities, 0);
  for (const Triple& t : g.triples) {
    d.out_degree[t.subject]++;
    d.in_degree[t.object]++;
  }
  for (int i = 0; i < g.n_entities; ++i) d.total_degree[i] = d.out_degree[i] + d.in_degree[i];
  return d;
}

KnowledgeGraph synthesize_er(int n_entities, int n_relations, double p, uint64_t seed) {
  auto root = make_rng(seed);
  const EdgeList edges = gen_er(n_entities, p, root.child(1).seed());
  KnowledgeGraph g = assign_relations(edges, n_entities, n_relations, root.child(2).seed());
  g.kind = GraphKind::er;
  g.seed = seed;
  g.er_p = p;
  return g;
}

KnowledgeGraph synthesize_ba(int n_entities, int n_relations, int m, uint64_t seed) {
  auto root = make_rng(seed);
  const EdgeList edges = gen_ba(n_entities, m, root.child(1).seed());
  KnowledgeGraph g = assign_relations(edges, n_entities, n_relations, root.child(2).seed());
  g.kind = GraphKind::ba;
  g.seed = seed;
  g.ba_m = m;
  return g;
}

double er_probability_matching_ba(int n, int m) {
  require(n >= 2 && m >= 1 && m < n, errc::validation, "invalid (n, m) for density matching");
  const double ba_edges =
      static_cast<double>(m) * (n - m) + static_cast<double>(m) * (m - 1) / 2.0;
  const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  return ba_edges / pairs;
}

std::string graph_to_json(const KnowledgeGraph& g) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(g.kind);
  j["seed"] = g.seed;
  j["n_entities"] = g.n_entities;
  j["n_relations"] = g.n_relations;
  if (g.kind == GraphKind::er) {
    j["params"] = nlohmann::ordered_json{{"p", g.er_p}};
  } else {
    j["params"] = nlohmann::ordered_json{{"m", g.ba_m}};
  }
  auto triples = nlohmann::ordered_json::array();
  for (const Triple& t : g.triples) triples.push_back({t.subject, t.relation, t.object});
  j["triples"] = std::move(triples);
  return j.dump(2) + "\n";
}

KnowledgeGraph graph_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::io, std::string("graph.json parse error: ") + e.what());
  }
  KnowledgeGraph g;
  try {
    g.kind = graph_kind_from_string(j.at("kind").get<std::string>());
    g.seed = j.at("seed").get<uint64_t>();
    g.n_entities = j.at("n_entities").get<int>();
    g.n_relations = j.at("n_relations").get<int>();
    if (g.kind == GraphKind::er) {
      g.er_p = j.at("params").at("p").get<double>();
    } else {
      g.ba_m = j.at("params").at("m").get<int>();
    }
    for (const auto& arr : j.at("triples")) {
      require(arr.is_array() && arr.size() == 3, errc::validation, "triple must have 3 fields");
      g.triples.push_back({arr[0].get<int>(), arr[1].get<int>(), arr[2].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::validation, std::string("graph.json schema error: ") + e.what());
  }
  g.validate();
  return g;
}

}  // namespace ulab

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "ulab/graph.hpp"

using namespace ulab;

TEST_CASE("gen_er forced and empty cases") {
  CHECK(gen_er(2, 1.0, 123).size() == 1);
  CHECK(gen_er(2, 1.0, 9).size() == 1);
  CHECK(gen_er(50, 0.0, 5).empty());
  CHECK_THROWS_AS(gen_er(1, 0.5, 0), Error);
  CHECK_THROWS_AS(gen_er(10, 1.5, 0), Error);
  CHECK_THROWS_AS(gen_er(10, -0.1, 0), Error);
}

TEST_CASE("gen_er mean edge count approaches p*n*(n-1)/2") {
  // Expectation oracle: p * C(n, 2) = 0.1 * 1225 = 122.5.
  const int n = 50;
  const double p = 0.1;
  double total = 0.0;
  const int trials = 1000;
  for (int s = 0; s < trials; ++s) total += double(gen_er(n, p, 1000 + s).size());
  const double mean = total / trials;
  CHECK(mean > 117.5);
  CHECK(mean < 127.5);
}

TEST_CASE("gen_er vertices span the requested range") {
  const auto edges = gen_er(200, 0.05, 77);
  for (const auto& [a, b] : edges) {
    CHECK(a >= 0);
    CHECK(b < 200);
    CHECK(a < b);
  }
}

TEST_CASE("gen_ba tiny complete case and exact edge count") {
  CHECK(gen_ba(3, 2, 4).size() == 3);  // triangle regardless of seed
  CHECK(gen_ba(3, 2, 99).size() == 3);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto edges = gen_ba(200, 2, seed);
    CHECK(int(edges.size()) == 2 * (200 - 2) + 1);  // m(n-m) + C(m,2)
    std::set<std::pair<int, int>> uniq(edges.begin(), edges.end());
    CHECK(uniq.size() == edges.size());
  }
  CHECK_THROWS_AS(gen_ba(5, 5, 0), Error);
  CHECK_THROWS_AS(gen_ba(5, 0, 0), Error);
}

TEST_CASE("gen_ba heavy tail: max degree at least 5x median") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto edges = gen_ba(200, 2, seed);
    std::vector<int> deg(200, 0);
    for (const auto& [a, b] : edges) {
      deg[a]++;
      deg[b]++;
    }
    std::sort(deg.begin(), deg.end());
    const int median = deg[100];
    const int mx = deg.back();
    CAPTURE(seed);
    CHECK(mx >= 5 * median);
  }
}

TEST_CASE("assign_relations basics") {
  SUBCASE("single edge becomes a single triple") {
    const KnowledgeGraph g = assign_relations({{0, 1}}, 2, 50, 3);
    REQUIRE(g.triples.size() == 1);
    CHECK(g.triples[0].relation >= 0);
    CHECK(g.triples[0].relation < 50);
  }
  SUBCASE("k edges become exactly k triples") {
    const auto edges = gen_ba(100, 2, 5);
    const KnowledgeGraph g = assign_relations(edges, 100, 50, 6);
    CHECK(g.triples.size() == edges.size());
  }
  SUBCASE("hub beyond relation capacity forces flipped orientations") {
    EdgeList star;
    for (int i = 1; i <= 60; ++i) star.emplace_back(0, i);
    const KnowledgeGraph g = assign_relations(star, 61, 50, 7);
    int hub_as_subject = 0, hub_as_object = 0;
    for (const Triple& t : g.triples) {
      if (t.subject == 0) hub_as_subject++;
      if (t.object == 0) hub_as_object++;
    }
    CHECK(hub_as_subject + hub_as_object == 60);
    CHECK(hub_as_subject <= 50);
    CHECK(hub_as_object > 0);
  }
  SUBCASE("self-loop edges are rejected") {
    CHECK_THROWS_AS(assign_relations({{3, 3}}, 5, 5, 0), Error);
  }
}

TEST_CASE("degree_table counts") {
  KnowledgeGraph g;
  g.n_entities = 4;
  g.n_relations = 3;
  SUBCASE("empty") {
    const auto d = degree_table(g);
    CHECK(std::accumulate(d.total_degree.begin(), d.total_degree.end(), 0) == 0);
  }
  SUBCASE("single triple") {
    g.triples = {{0, 1, 1}};
    const auto d = degree_table(g);
    CHECK(d.out_degree[0] == 1);
    CHECK(d.in_degree[1] == 1);
    CHECK(d.total_degree[0] == 1);
    CHECK(d.total_degree[1] == 1);
    CHECK(d.total_degree[2] == 0);
  }
  SUBCASE("handshake identity on a generated graph") {
    const KnowledgeGraph big = synthesize_ba(200, 50, 2, 11);
    const auto d = degree_table(big);
    const int total = std::accumulate(d.total_degree.begin(), d.total_degree.end(), 0);
    CHECK(total == 2 * int(big.triples.size()));
    const int out = std::accumulate(d.out_degree.begin(), d.out_degree.end(), 0);
    CHECK(out == int(big.triples.size()));
  }
}

TEST_CASE("determinism: same parameters give byte-identical serialization") {
  const auto a = graph_to_json(synthesize_ba(200, 50, 2, 42));
  const auto b = graph_to_json(synthesize_ba(200, 50, 2, 42));
  CHECK(a == b);
  const auto c = graph_to_json(synthesize_ba(200, 50, 2, 43));
  CHECK(a != c);
  const auto e1 = graph_to_json(synthesize_er(200, 50, 0.02, 42));
  const auto e2 = graph_to_json(synthesize_er(200, 50, 0.02, 42));
  CHECK(e1 == e2);
}

TEST_CASE("graph json round-trip preserves everything") {
  const KnowledgeGraph g = synthesize_er(100, 20, 0.03, 17);
  const KnowledgeGraph h = graph_from_json(graph_to_json(g));
  CHECK(h.kind == g.kind);
  CHECK(h.seed == g.seed);
  CHECK(h.n_entities == g.n_entities);
  CHECK(h.n_relations == g.n_relations);
  CHECK(h.er_p == g.er_p);
  CHECK(h.triples == g.triples);
  CHECK(graph_to_json(h) == graph_to_json(g));
}

TEST_CASE("er/ba degree shape contrast at n=200 m=2") {
  const double p = er_probability_matching_ba(200, 2);
  CHECK(p == doctest::Approx(397.0 / 19900.0));
  // ER histogram concentrated: max/median small; BA heavy-tailed (above).
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = synthesize_er(200, 50, p, seed);
    const auto d = degree_table(g);
    auto deg = d.total_degree;
    std::sort(deg.begin(), deg.end());
    CHECK(deg.back() <= 14);  // Binomial(199, ~0.02): far tail would be ~5 sd out
  }
}

TEST_CASE("functionality invariant holds on generated graphs") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    const auto g = synthesize_ba(200, 50, 2, seed);
    CHECK_NOTHROW(g.validate());
    std::set<std::pair<int, int>> sr;
    for (const Triple& t : g.triples) CHECK(sr.insert({t.subject, t.relation}).second);
  }
}

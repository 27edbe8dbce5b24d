#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "packetclip/error.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/rng.hpp"

using namespace packetclip;
using namespace packetclip::kg;

namespace {

ProviderConfig stub_cfg(uint64_t seed) {
  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::stub;
  cfg.seed = seed;
  return cfg;
}

// deterministic scripted provider for the error-path contracts
class ScriptedProvider : public ConceptProvider {
public:
  std::vector<std::vector<std::string>> key_batches;
  std::vector<std::vector<std::string>> assoc_batches;
  size_t key_call = 0, assoc_call = 0;

  std::vector<std::string> key_concepts(const std::string&, int) override {
    if (key_call >= key_batches.size()) return {};
    return key_batches[key_call++];
  }
  std::vector<std::string> associated(const std::string&, const std::vector<std::string>&,
                                      int) override {
    if (assoc_call >= assoc_batches.size()) return {};
    return assoc_batches[assoc_call++];
  }
};

// Kahn topological-sort oracle over the serialized node/edge lists
bool kahn_is_dag(const KnowledgeGraph& g) {
  auto nodes = g.node_index();
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> adj;
  for (auto& [id, _] : nodes) indeg[id] = 0;
  for (auto& [src, dst] : g.edges) {
    adj[src].push_back(dst);
    ++indeg[dst];
  }
  std::vector<std::string> q;
  for (auto& [id, d] : indeg)
    if (d == 0) q.push_back(id);
  size_t seen = 0;
  while (!q.empty()) {
    auto id = q.back();
    q.pop_back();
    ++seen;
    for (auto& nxt : adj[id])
      if (--indeg[nxt] == 0) q.push_back(nxt);
  }
  return seen == nodes.size();
}

}  // namespace

TEST_CASE("stub key concepts deterministic per (mission, seed)") {
  auto p1 = make_concept_provider(stub_cfg(42));
  auto p2 = make_concept_provider(stub_cfg(42));
  auto a = generate_key_concepts("dos", 5, *p1);
  auto b = generate_key_concepts("dos", 5, *p2);
  CHECK(a.concepts == b.concepts);
  REQUIRE(a.concepts.size() == 5);
  auto p3 = make_concept_provider(stub_cfg(43));
  auto c = generate_key_concepts("dos", 5, *p3);
  CHECK(a.concepts != c.concepts);
}

TEST_CASE("generate_key_concepts: V=1 and single-word invariant") {
  auto p = make_concept_provider(stub_cfg(1));
  auto layer = generate_key_concepts("reconnaissance", 1, *p);
  REQUIRE(layer.concepts.size() == 1);
  CHECK(layer.concepts[0].find(' ') == std::string::npos);
}

TEST_CASE("generate_key_concepts: duplicates deduplicated then padded by re-query") {
  ScriptedProvider p;
  p.key_batches = {{"flood", "flood", "botnet"}, {"denial", "botnet"}, {"storm"}};
  auto layer = generate_key_concepts("dos", 4, p);
  REQUIRE(layer.concepts.size() == 4);
  std::set<std::string> uniq(layer.concepts.begin(), layer.concepts.end());
  CHECK(uniq.size() == 4);
  CHECK(uniq.count("flood"));
  CHECK(uniq.count("storm"));
}

TEST_CASE("generate_key_concepts: multi-word rejected then hyphen-joined as fallback") {
  ScriptedProvider p;
  p.key_batches = {{"port scan", "flood"}};
  // everything else empty: retries exhaust, then the multi-word result is salvaged
  auto layer = generate_key_concepts("dos", 2, p);
  REQUIRE(layer.concepts.size() == 2);
  CHECK(layer.concepts[0] == "flood");
  CHECK(layer.concepts[1] == "port-scan");
}

TEST_CASE("generate_key_concepts: provider failure after retries") {
  ScriptedProvider p;  // always returns nothing
  try {
    generate_key_concepts("dos", 3, p);
    FAIL("expected provider error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::provider);
  }
}

TEST_CASE("expand_concepts: N=1 leaves layers unchanged") {
  auto p = make_concept_provider(stub_cfg(2));
  auto layer1 = generate_key_concepts("dos", 4, *p);
  auto layers = expand_concepts("dos", {layer1}, *p, 1);
  REQUIRE(layers.size() == 1);
  CHECK(layers[0].concepts == layer1.concepts);
}

TEST_CASE("expand_concepts: echoing provider stops expansion with one layer") {
  ScriptedProvider p;
  p.key_batches = {{"alpha", "beta"}};
  p.assoc_batches = {{"alpha", "beta"}};  // nothing new
  auto layer1 = generate_key_concepts("m", 2, p);
  ExpandReport report;
  auto layers = expand_concepts("m", {layer1}, p, 3, &report);
  CHECK(layers.size() == 1);
  CHECK(report.stopped_early);
  CHECK(report.layers_built == 1);
}

TEST_CASE("expand_concepts: stub layers pairwise disjoint (set oracle)") {
  for (uint64_t seed : {3u, 14u, 15u, 92u, 65u}) {
    auto p = make_concept_provider(stub_cfg(seed));
    auto layer1 = generate_key_concepts("dos", 4, *p);
    auto layers = expand_concepts("dos", {layer1}, *p, 3);
    std::set<std::string> all;
    size_t total = 0;
    for (const auto& layer : layers) {
      for (const auto& c : layer.concepts) all.insert(c);
      total += layer.concepts.size();
    }
    CHECK(all.size() == total);  // no overlap anywhere
  }
}

TEST_CASE("assemble_graph: edge counts for one layer of 3") {
  ConceptLayer l1{1, {"a", "b", "c"}};
  auto g = assemble_graph("m", {l1});
  CHECK(g.edges.size() == 6);  // 3 sensor-> plus 3 ->embedding
}

TEST_CASE("assemble_graph: edge counts for layers (2,3)") {
  ConceptLayer l1{1, {"a", "b"}};
  ConceptLayer l2{2, {"c", "d", "e"}};
  auto g = assemble_graph("m", {l1, l2});
  CHECK(g.edges.size() == 2 + 6 + 3);
}

TEST_CASE("assemble_graph: edge count formula across stub graphs") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto g = generate_graph("mission" + std::to_string(seed), 5, 2, stub_cfg(seed));
    size_t expect = g.layers.front().concepts.size();
    for (size_t h = 0; h + 1 < g.layers.size(); ++h)
      expect += g.layers[h].concepts.size() * g.layers[h + 1].concepts.size();
    expect += g.layers.back().concepts.size();
    CHECK(g.edges.size() == expect);
  }
}

TEST_CASE("assemble_graph: topological sort succeeds on stub graphs (Kahn oracle)") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto g = generate_graph("dos", 6, 2, stub_cfg(seed));
    CHECK(kahn_is_dag(g));
  }
}

TEST_CASE("validate_graph: assembled stub graph has zero violations") {
  auto g = generate_graph("reconnaissance", 8, 2, stub_cfg(7));
  auto report = validate_graph(g);
  for (const auto& v : report.violations) INFO(v.kind, ": ", v.detail);
  CHECK(report.ok());
}

TEST_CASE("validate_graph: injected back-edge names a cycle") {
  auto g = generate_graph("dos", 4, 2, stub_cfg(8));
  auto id1 = KnowledgeGraph::concept_node_id("dos", 1, 0);
  auto id2 = KnowledgeGraph::concept_node_id("dos", 2, 0);
  g.edges.emplace_back(id2, id1);  // back-edge
  auto report = validate_graph(g);
  bool cycle = false, family = false;
  for (const auto& v : report.violations) {
    if (v.kind == "cycle") cycle = true;
    if (v.kind == "edge-family") family = true;
  }
  CHECK(cycle);
  CHECK(family);
}

TEST_CASE("validate_graph: duplicated concept across layers flagged") {
  ConceptLayer l1{1, {"alpha", "beta"}};
  ConceptLayer l2{2, {"gamma", "alpha"}};
  auto g = assemble_graph("m", {l1, l2});
  auto report = validate_graph(g);
  bool dis = false;
  for (const auto& v : report.violations)
    if (v.kind == "layer-disjointness") dis = true;
  CHECK(dis);
}

TEST_CASE("validate_graph: sensor with incoming edge flagged") {
  ConceptLayer l1{1, {"a"}};
  auto g = assemble_graph("m", {l1});
  g.edges.emplace_back(g.embedding_id, g.sensor_id);
  auto report = validate_graph(g);
  CHECK(!report.ok());
}

TEST_CASE("serialization round-trip is field-exact") {
  for (uint64_t seed : {1u, 9u, 33u}) {
    auto g = generate_graph("brute_force", 5, 3, stub_cfg(seed));
    auto j = kg_to_json(g);
    auto back = kg_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.mission == g.mission);
    CHECK(back.sensor_id == g.sensor_id);
    CHECK(back.embedding_id == g.embedding_id);
    REQUIRE(back.layers.size() == g.layers.size());
    for (size_t i = 0; i < g.layers.size(); ++i) {
      CHECK(back.layers[i].index == g.layers[i].index);
      CHECK(back.layers[i].concepts == g.layers[i].concepts);
    }
    CHECK(back.edges == g.edges);
  }
}

TEST_CASE("normalize_concept folds case and strips noise") {
  CHECK(normalize_concept("  Flood!") == "flood");
  CHECK(normalize_concept("Port-Scan") == "port-scan");
  CHECK(normalize_concept("caf\xc3\xa9") == "caf");
}

TEST_CASE("vocab_report: counting and tie order") {
  std::vector<MissionText> texts = {{"dos", "attack attack network"}};
  auto table = vocab_report(texts, 10);
  REQUIRE(table.per_mission.count("dos"));
  const auto& rows = table.per_mission["dos"];
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].token == "attack");
  CHECK(rows[0].count == 2);
  CHECK(rows[1].token == "network");
  CHECK(rows[1].count == 1);
}

TEST_CASE("vocab_report: top_k=1 and descending sort with lexicographic ties") {
  std::vector<MissionText> texts = {{"m", "zeta alpha zeta alpha beta"}};
  auto one = vocab_report(texts, 1);
  REQUIRE(one.per_mission["m"].size() == 1);
  CHECK(one.per_mission["m"][0].token == "alpha");  // tie with zeta broken lexicographically
  auto full = vocab_report(texts, 10);
  CHECK(full.per_mission["m"][0].token == "alpha");
  CHECK(full.per_mission["m"][1].token == "zeta");
  CHECK(full.per_mission["m"][2].token == "beta");
}

TEST_CASE("vocab_report: frequencies sum to token count") {
  std::vector<MissionText> texts = {
      {"dos", "flood traffic flood saturation the a 42"},
      {"dos", "botnet flood"},
  };
  auto table = vocab_report(texts, 100);
  size_t sum = 0;
  for (const auto& row : table.per_mission["dos"]) sum += row.count;
  CHECK(sum == table.token_totals["dos"]);
  CHECK(table.token_totals["dos"] == 6);  // stopwords and the numeric token excluded
}

TEST_CASE("vocab_report: top_k below 1 rejected") {
  CHECK_THROWS_AS(vocab_report(std::vector<MissionText>{}, 0), Error);
}

TEST_CASE("vocab_report from graphs lists concept tokens") {
  std::map<std::string, KnowledgeGraph> kgs;
  kgs["dos"] = generate_graph("dos", 5, 2, stub_cfg(3));
  auto table = vocab_report(kgs, 10);
  CHECK(!table.per_mission["dos"].empty());
}

#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "packetclip/providers.hpp"

namespace packetclip::kg {

struct ConceptLayer {
  int index = 1;  // hierarchy level, 1-based
  std::vector<std::string> concepts;
};

// Mission-specific layered DAG. Node layers: 0 = sensor, 1..N = concept
// layers, embedding node = sink. Edges run sensor -> layer 1, layer h ->
// layer h+1 (complete bipartite), deepest layer -> embedding.
struct KnowledgeGraph {
  std::string mission;
  std::string sensor_id;
  std::string embedding_id;
  std::vector<ConceptLayer> layers;
  std::vector<std::pair<std::string, std::string>> edges;

  std::vector<std::string> all_concepts() const;
  size_t concept_count() const;
  // node id -> (layer, concept text); sensor = layer 0, embedding = -1
  std::map<std::string, std::pair<int, std::string>> node_index() const;
  static std::string concept_node_id(const std::string& mission, int layer, int index);
};

// lowercase, ASCII-fold, strip everything but [a-z0-9-]
std::string normalize_concept(const std::string& word);

class ConceptProvider {
public:
  virtual ~ConceptProvider() = default;
  // V candidate vocabulary words for a mission
  virtual std::vector<std::string> key_concepts(const std::string& mission, int v) = 0;
  // words associated with an existing layer's vocabulary
  virtual std::vector<std::string> associated(const std::string& mission,
                                              const std::vector<std::string>& layer_words,
                                              int next_layer_index) = 0;
};

std::unique_ptr<ConceptProvider> make_concept_provider(const ProviderConfig& cfg);

ConceptLayer generate_key_concepts(const std::string& mission, int v, ConceptProvider& provider);

struct ExpandReport {
  int layers_built = 1;
  bool stopped_early = false;
};

// Grows layers 2..n; each new layer drops any word already present earlier,
// and an empty remainder stops expansion.
std::vector<ConceptLayer> expand_concepts(const std::string& mission,
                                          std::vector<ConceptLayer> layers,
                                          ConceptProvider& provider, int n,
                                          ExpandReport* report = nullptr);

KnowledgeGraph assemble_graph(const std::string& mission, const std::vector<ConceptLayer>& layers);

struct Violation {
  std::string kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_graph(const KnowledgeGraph& g);

// Convenience: key concepts + expansion + assembly with a stub or http provider.
KnowledgeGraph generate_graph(const std::string& mission, int v, int n,
                              const ProviderConfig& provider_cfg);

nlohmann::ordered_json kg_to_json(const KnowledgeGraph& g);
KnowledgeGraph kg_from_json(const nlohmann::json& j);
void save_kg(const KnowledgeGraph& g, const std::string& path);
KnowledgeGraph load_kg(const std::string& path);

// ---------------------------------------------------------------------------
// term frequency reporting

struct MissionText {
  std::string mission;
  std::string text;
};

struct TermFrequencyTable {
  struct Row {
    std::string token;
    size_t count;
  };
  // mission -> rows sorted by descending count, ties lexicographic
  std::map<std::string, std::vector<Row>> per_mission;
  // mission -> total token count after stopword filtering
  std::map<std::string, size_t> token_totals;
};

TermFrequencyTable vocab_report(const std::vector<MissionText>& texts, size_t top_k);
TermFrequencyTable vocab_report(const std::map<std::string, KnowledgeGraph>& kgs, size_t top_k);

std::vector<std::string> tokenize_words(const std::string& text);  // lowercase [a-z0-9_]+ runs
bool is_stopword(const std::string& token);

}  // namespace packetclip::kg

#include "packetclip/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "packetclip/error.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::kg {

std::vector<std::string> KnowledgeGraph::all_concepts() const {
  std::vector<std::string> out;
  for (const auto& layer : layers)
    out.insert(out.end(), layer.concepts.begin(), layer.concepts.end());
  return out;
}

size_t KnowledgeGraph::concept_count() const {
  size_t n = 0;
  for (const auto& layer : layers) n += layer.concepts.size();
  return n;
}

std::string KnowledgeGraph::concept_node_id(const std::string& mission, int layer, int index) {
  return mission + ":L" + std::to_string(layer) + ":" + std::to_string(index);
}

std::map<std::string, std::pair<int, std::string>> KnowledgeGraph::node_index() const {
  std::map<std::string, std::pair<int, std::string>> idx;
  idx[sensor_id] = {0, mission};
  idx[embedding_id] = {-1, "embedding"};
  for (const auto& layer : layers)
    for (size_t i = 0; i < layer.concepts.size(); ++i)
      idx[concept_node_id(mission, layer.index, int(i))] = {layer.index, layer.concepts[i]};
  return idx;
}

std::string normalize_concept(const std::string& word) {
  std::string out;
  for (unsigned char c : word) {
    if (c >= 128) continue;  // ASCII fold: drop non-ASCII bytes
    char lc = char(std::tolower(c));
    if ((lc >= 'a' && lc <= 'z') || (lc >= '0' && lc <= '9') || lc == '-') out.push_back(lc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// providers

namespace {

std::string trim_ws(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_multi_word(const std::string& s) {
  std::string t = trim_ws(s);
  for (char c : t)
    if (c == ' ' || c == '\t') return true;
  return false;
}

std::string hyphen_join(const std::string& s) {
  std::string t = trim_ws(s);
  std::string out;
  bool pending_hyphen = false;
  for (char c : t) {
    if (c == ' ' || c == '\t') {
      pending_hyphen = !out.empty();
      continue;
    }
    if (pending_hyphen) {
      out.push_back('-');
      pending_hyphen = false;
    }
    out.push_back(c);
  }
  return normalize_concept(out);
}

const std::vector<std::string>& mission_bank(const std::string& mission) {
  static const std::vector<std::string> dos = {
      "flood",      "botnet",     "overload",   "denial",     "saturation", "exhaustion",
      "amplification", "jamming", "disruption", "bandwidth",  "volumetric", "slowloris",
      "overflow",   "storm",      "throttling", "reflection", "junk",       "barrage"};
  static const std::vector<std::string> recon = {
      "scanning",   "probing",    "enumeration", "mapping",     "discovery", "fingerprinting",
      "sweep",      "banner",     "topology",    "inventory",   "profiling", "harvesting",
      "lookup",     "crawling",   "surveillance", "osint",      "tracing",   "census"};
  static const std::vector<std::string> brute = {
      "password",   "credential", "dictionary", "guessing",   "cracking",  "login",
      "authentication", "lockout", "spraying",  "stuffing",   "wordlist",  "hydra",
      "retry",      "attempts",   "passphrase", "keyspace",   "combinations", "bruteforce"};
  static const std::vector<std::string> empty = {};
  std::string m = normalize_concept(mission);
  if (m == "dos" || m.find("flood") != std::string::npos || m == "slowloris") return dos;
  if (m == "reconnaissance" || m.find("scan") != std::string::npos) return recon;
  if (m == "brute-force" || m == "bruteforce" || m.find("dictionary") != std::string::npos)
    return brute;
  return empty;
}

const std::vector<std::string>& generic_bank() {
  static const std::vector<std::string> generic = {
      "attack",     "network",   "security",   "traffic",     "packet",     "threat",
      "intrusion",  "malware",   "anomaly",    "exploit",     "payload",    "breach",
      "firewall",   "protocol",  "vulnerability", "malicious", "defense",   "detection",
      "signature",  "alert",     "compromise", "infiltration", "persistence", "exfiltration",
      "spoofing",   "session",   "endpoint",   "telemetry"};
  return generic;
}

class StubConceptProvider : public ConceptProvider {
public:
  explicit StubConceptProvider(uint64_t seed) : seed_(seed) {}

  std::vector<std::string> key_concepts(const std::string& mission, int v) override {
    std::vector<std::string> pool = mission_bank(mission);
    if (pool.empty()) {
      pool = generic_bank();
      std::string m = normalize_concept(mission);
      if (!m.empty()) pool.insert(pool.begin(), m);
    }
    return draw(mission, "key", pool, v);
  }

  std::vector<std::string> associated(const std::string& mission,
                                      const std::vector<std::string>& layer_words,
                                      int next_layer_index) override {
    std::vector<std::string> pool = mission_bank(mission);
    const auto& gen = generic_bank();
    pool.insert(pool.end(), gen.begin(), gen.end());
    return draw(mission, "assoc" + std::to_string(next_layer_index), pool,
                int(layer_words.size()) + 2);
  }

private:
  std::vector<std::string> draw(const std::string& mission, const std::string& tag,
                                const std::vector<std::string>& pool, int count) {
    uint64_t call = calls_[mission + "/" + tag]++;
    Rng rng(mix_seed(mix_seed(mix_seed(seed_, mission), tag), call));
    std::vector<std::string> out;
    auto picks = rng.sample_without_replacement(pool.size(), size_t(count));
    for (size_t i : picks) out.push_back(pool[i]);
    // deterministic padding when more words are requested than the bank holds
    int extra = 0;
    while (int(out.size()) < count) {
      std::string base = pool.empty() ? normalize_concept(mission) : pool[size_t(extra) % pool.size()];
      if (base.empty()) base = "concept";
      out.push_back(base + std::to_string(2 + extra / std::max<size_t>(1, pool.size())));
      ++extra;
    }
    return out;
  }

  uint64_t seed_;
  std::unordered_map<std::string, uint64_t> calls_;
};

class HttpConceptProvider : public ConceptProvider {
public:
  explicit HttpConceptProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {}

  std::vector<std::string> key_concepts(const std::string& mission, int v) override {
    std::ostringstream prompt;
    prompt << "List " << v << " typical vocabularies to represent " << mission
           << ". Note: everything should be a single word. "
              "Answer as a comma-separated list with no extra text.";
    return parse_words(chat_complete(cfg_, prompt.str()));
  }

  std::vector<std::string> associated(const std::string& mission,
                                      const std::vector<std::string>& layer_words,
                                      int) override {
    std::ostringstream prompt;
    prompt << "What are associated words with vocabularies in set {";
    for (size_t i = 0; i < layer_words.size(); ++i) {
      if (i) prompt << ", ";
      prompt << layer_words[i];
    }
    prompt << "} for the mission " << mission
           << "? Answer with single words as a comma-separated list with no extra text.";
    return parse_words(chat_complete(cfg_, prompt.str()));
  }

private:
  static std::vector<std::string> parse_words(const std::string& content) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
      std::string t = trim_ws(cur);
      // strip list numbering like "3." or "-"
      while (!t.empty() && (std::isdigit(static_cast<unsigned char>(t[0])) || t[0] == '.' ||
                            t[0] == '-' || t[0] == '*' || t[0] == ')'))
        t.erase(t.begin());
      t = trim_ws(t);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    };
    for (char c : content) {
      if (c == ',' || c == '\n' || c == ';') {
        flush();
      } else {
        cur.push_back(c);
      }
    }
    flush();
    return out;
  }

  ProviderConfig cfg_;
};

}  // namespace

std::unique_ptr<ConceptProvider> make_concept_provider(const ProviderConfig& cfg) {
  if (cfg.kind == ProviderConfig::Kind::stub)
    return std::make_unique<StubConceptProvider>(cfg.seed);
  return std::make_unique<HttpConceptProvider>(cfg);
}

// ---------------------------------------------------------------------------
// generation

ConceptLayer generate_key_concepts(const std::string& mission, int v, ConceptProvider& provider) {
  if (v < 1) fail(Err::config, "key concept count must be >= 1");

  constexpr int kMaxRetries = 5;
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::vector<std::string> multi_word;
  int retries = 0;
  std::string last_provider_error;

  while (int(out.size()) < v && retries <= kMaxRetries) {
    std::vector<std::string> words;
    try {
      words = provider.key_concepts(mission, v - int(out.size()));
    } catch (const Error& e) {
      if (e.code() != Err::provider) throw;
      last_provider_error = e.what();
      ++retries;
      continue;
    }
    for (const auto& raw : words) {
      if (int(out.size()) >= v) break;
      if (is_multi_word(raw)) {
        multi_word.push_back(raw);
        continue;
      }
      std::string w = normalize_concept(raw);
      if (w.empty() || seen.count(w)) continue;
      seen.insert(w);
      out.push_back(w);
    }
    if (int(out.size()) < v) ++retries;
  }

  // retry budget exhausted: salvage rejected multi-word outputs by hyphen-joining
  for (const auto& raw : multi_word) {
    if (int(out.size()) >= v) break;
    std::string w = hyphen_join(raw);
    if (w.empty() || seen.count(w)) continue;
    seen.insert(w);
    out.push_back(w);
  }

  if (int(out.size()) < v)
    fail(Err::provider, "could not collect " + std::to_string(v) + " key concepts for mission '" +
                            mission + "' after " + std::to_string(kMaxRetries) + " retries" +
                            (last_provider_error.empty() ? "" : ": " + last_provider_error));
  return ConceptLayer{1, std::move(out)};
}

std::vector<ConceptLayer> expand_concepts(const std::string& mission,
                                          std::vector<ConceptLayer> layers,
                                          ConceptProvider& provider, int n, ExpandReport* report) {
  if (layers.empty()) fail(Err::state, "expand_concepts requires the key-concept layer");
  if (n < 1) fail(Err::config, "layer count must be >= 1");

  std::set<std::string> seen;
  for (const auto& layer : layers)
    for (const auto& c : layer.concepts) seen.insert(c);

  ExpandReport local;
  ExpandReport& rep = report ? *report : local;
  rep.stopped_early = false;

  for (int i = int(layers.size()) + 1; i <= n; ++i) {
    const auto& prev = layers.back();
    auto words = provider.associated(mission, prev.concepts, i);
    ConceptLayer next;
    next.index = i;
    std::set<std::string> in_layer;
    for (const auto& raw : words) {
      std::string w = is_multi_word(raw) ? hyphen_join(raw) : normalize_concept(raw);
      if (w.empty() || seen.count(w) || in_layer.count(w)) continue;
      in_layer.insert(w);
      next.concepts.push_back(w);
    }
    if (next.concepts.empty()) {
      rep.stopped_early = true;
      break;
    }
    for (const auto& c : next.concepts) seen.insert(c);
    layers.push_back(std::move(next));
  }
  rep.layers_built = int(layers.size());
  return layers;
}

KnowledgeGraph assemble_graph(const std::string& mission, const std::vector<ConceptLayer>& layers) {
  if (layers.empty()) fail(Err::state, "assemble_graph requires at least one concept layer");

  KnowledgeGraph g;
  g.mission = mission;
  g.sensor_id = mission + ":sensor";
  g.embedding_id = mission + ":embedding";
  g.layers = layers;
  for (size_t li = 0; li < g.layers.size(); ++li) g.layers[li].index = int(li) + 1;

  auto node_id = [&](int layer, int idx) {
    return KnowledgeGraph::concept_node_id(mission, layer, idx);
  };

  for (size_t i = 0; i < g.layers[0].concepts.size(); ++i)
    g.edges.emplace_back(g.sensor_id, node_id(1, int(i)));
  for (size_t li = 0; li + 1 < g.layers.size(); ++li)
    for (size_t i = 0; i < g.layers[li].concepts.size(); ++i)
      for (size_t j = 0; j < g.layers[li + 1].concepts.size(); ++j)
        g.edges.emplace_back(node_id(int(li) + 1, int(i)), node_id(int(li) + 2, int(j)));
  const auto& last = g.layers.back();
  for (size_t i = 0; i < last.concepts.size(); ++i)
    g.edges.emplace_back(node_id(last.index, int(i)), g.embedding_id);
  return g;
}

ValidationReport validate_graph(const KnowledgeGraph& g) {
  ValidationReport report;
  auto add = [&](const std::string& kind, const std::string& detail) {
    report.violations.push_back({kind, detail});
  };

  auto nodes = g.node_index();

  // concept well-formedness and cross-layer disjointness
  std::map<std::string, int> concept_layer;
  for (const auto& layer : g.layers) {
    std::set<std::string> in_layer;
    for (const auto& c : layer.concepts) {
      if (c.empty() || c.find(' ') != std::string::npos || c.find('\t') != std::string::npos)
        add("concept", "layer " + std::to_string(layer.index) + " concept '" + c +
                           "' is not a single word");
      if (!in_layer.insert(c).second)
        add("duplicate-concept", "concept '" + c + "' repeated inside layer " +
                                     std::to_string(layer.index));
      auto [it, fresh] = concept_layer.emplace(c, layer.index);
      if (!fresh && it->second != layer.index)
        add("layer-disjointness", "concept '" + c + "' appears in layers " +
                                      std::to_string(it->second) + " and " +
                                      std::to_string(layer.index));
    }
  }

  int max_layer = int(g.layers.size());
  std::map<std::string, int> in_deg, out_deg;
  std::set<std::pair<std::string, std::string>> seen_edges;
  for (const auto& [src, dst] : g.edges) {
    if (!nodes.count(src)) {
      add("edge", "edge source '" + src + "' is not a node");
      continue;
    }
    if (!nodes.count(dst)) {
      add("edge", "edge target '" + dst + "' is not a node");
      continue;
    }
    if (!seen_edges.insert({src, dst}).second)
      add("duplicate-edge", "edge " + src + " -> " + dst + " repeated");
    ++out_deg[src];
    ++in_deg[dst];
    int sl = nodes.at(src).first;
    int dl = nodes.at(dst).first;
    bool legal = (sl == 0 && dl == 1) || (sl >= 1 && dl == sl + 1 && dl <= max_layer) ||
                 (sl == max_layer && dl == -1);
    if (!legal)
      add("edge-family", "edge " + src + " -> " + dst + " is outside the permitted families");
  }

  if (in_deg.count(g.sensor_id))
    add("sensor-degree", "sensor node '" + g.sensor_id + "' has incoming edges");
  if (out_deg.count(g.embedding_id))
    add("embedding-degree", "embedding node '" + g.embedding_id + "' has outgoing edges");

  // Kahn's algorithm; leftovers indicate a cycle
  {
    std::map<std::string, int> deg = in_deg;
    std::vector<std::string> frontier;
    for (const auto& [id, _] : nodes)
      if (!deg.count(id)) frontier.push_back(id);
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& [src, dst] : g.edges)
      if (nodes.count(src) && nodes.count(dst)) adj[src].push_back(dst);
    size_t visited = 0;
    while (!frontier.empty()) {
      std::string id = frontier.back();
      frontier.pop_back();
      ++visited;
      for (const auto& nxt : adj[id]) {
        if (--deg[nxt] == 0) {
          deg.erase(nxt);
          frontier.push_back(nxt);
        }
      }
    }
    if (visited != nodes.size()) {
      std::string stuck;
      for (const auto& [id, d] : deg)
        if (d > 0) {
          stuck = id;
          break;
        }
      add("cycle", "graph is not a DAG; unresolved node '" + stuck + "'");
    }
  }

  return report;
}

KnowledgeGraph generate_graph(const std::string& mission, int v, int n,
                              const ProviderConfig& provider_cfg) {
  auto provider = make_concept_provider(provider_cfg);
  auto layer1 = generate_key_concepts(mission, v, *provider);
  auto layers = expand_concepts(mission, {layer1}, *provider, n);
  return assemble_graph(mission, layers);
}

// ---------------------------------------------------------------------------
// serialization

nlohmann::ordered_json kg_to_json(const KnowledgeGraph& g) {
  nlohmann::ordered_json j;
  j["mission"] = g.mission;
  auto nodes = nlohmann::ordered_json::array();
  nodes.push_back({{"id", g.sensor_id}, {"text", g.mission}, {"layer", 0}});
  for (const auto& layer : g.layers)
    for (size_t i = 0; i < layer.concepts.size(); ++i)
      nodes.push_back({{"id", KnowledgeGraph::concept_node_id(g.mission, layer.index, int(i))},
                       {"text", layer.concepts[i]},
                       {"layer", layer.index}});
  nodes.push_back({{"id", g.embedding_id}, {"text", "embedding"}, {"layer", "embedding"}});
  j["nodes"] = std::move(nodes);
  auto edges = nlohmann::ordered_json::array();
  for (const auto& [src, dst] : g.edges) edges.push_back({src, dst});
  j["edges"] = std::move(edges);
  return j;
}

KnowledgeGraph kg_from_json(const nlohmann::json& j) {
  KnowledgeGraph g;
  g.mission = j.at("mission").get<std::string>();
  std::map<int, ConceptLayer> layers;
  for (const auto& node : j.at("nodes")) {
    const auto& layer = node.at("layer");
    if (layer.is_string()) {
      if (layer.get<std::string>() != "embedding")
        fail(Err::graph, "unknown node layer tag: " + layer.get<std::string>());
      g.embedding_id = node.at("id").get<std::string>();
    } else {
      int li = layer.get<int>();
      if (li == 0) {
        g.sensor_id = node.at("id").get<std::string>();
      } else {
        layers[li].index = li;
        layers[li].concepts.push_back(node.at("text").get<std::string>());
      }
    }
  }
  for (auto& [_, layer] : layers) g.layers.push_back(std::move(layer));
  for (const auto& e : j.at("edges"))
    g.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  if (g.sensor_id.empty() || g.embedding_id.empty())
    fail(Err::graph, "knowledge graph json lacks sensor or embedding node");
  return g;
}

void save_kg(const KnowledgeGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::io, "cannot write knowledge graph: " + path);
  out << kg_to_json(g).dump(2) << "\n";
}

KnowledgeGraph load_kg(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open knowledge graph: " + path);
  nlohmann::json j;
  in >> j;
  return kg_from_json(j);
}

// ---------------------------------------------------------------------------
// term frequency

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    char lc = char(std::tolower(c));
    if ((lc >= 'a' && lc <= 'z') || (lc >= '0' && lc <= '9') || lc == '_') {
      cur.push_back(lc);
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool is_stopword(const std::string& token) {
  static const std::set<std::string> stop = {
      "a",  "an",  "the",  "to",   "of",   "was", "with", "and", "or",   "in",  "on",
      "at", "for", "from", "this", "that", "is",  "are",  "were", "it",  "its", "as",
      "by", "over", "per", "s",    "into", "via", "be",   "has", "had",  "have"};
  if (stop.count(token)) return true;
  // purely numeric tokens carry no vocabulary signal
  bool all_digit = !token.empty();
  for (char c : token)
    if (c < '0' || c > '9') all_digit = false;
  return all_digit;
}

TermFrequencyTable vocab_report(const std::vector<MissionText>& texts, size_t top_k) {
  if (top_k < 1) fail(Err::config, "vocab_report requires top_k >= 1");
  std::map<std::string, std::map<std::string, size_t>> counts;
  std::map<std::string, size_t> totals;
  for (const auto& mt : texts) {
    for (const auto& tok : tokenize_words(mt.text)) {
      if (is_stopword(tok)) continue;
      ++counts[mt.mission][tok];
      ++totals[mt.mission];
    }
  }
  TermFrequencyTable table;
  table.token_totals = std::move(totals);
  for (auto& [mission, freq] : counts) {
    std::vector<TermFrequencyTable::Row> rows;
    rows.reserve(freq.size());
    for (auto& [tok, cnt] : freq) rows.push_back({tok, cnt});
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.count != b.count ? a.count > b.count : a.token < b.token;
    });
    if (rows.size() > top_k) rows.resize(top_k);
    table.per_mission[mission] = std::move(rows);
  }
  return table;
}

TermFrequencyTable vocab_report(const std::map<std::string, KnowledgeGraph>& kgs, size_t top_k) {
  std::vector<MissionText> texts;
  for (const auto& [mission, g] : kgs) {
    std::string joined;
    for (const auto& c : g.all_concepts()) {
      joined += c;
      joined += ' ';
    }
    texts.push_back({mission, joined});
  }
  return vocab_report(texts, top_k);
}

}  // namespace packetclip::kg

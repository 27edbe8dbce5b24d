#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "packetclip/ingest.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/providers.hpp"

namespace packetclip::textgen {

struct TemplateText {
  std::string text;
  std::string label;
  int flow_index = -1;
  std::vector<std::string> injected_concepts;
  bool injection_clamped = false;  // asked for more concepts than the graph holds
};

struct TextSample {
  enum class Provenance { template_text, paraphrased };
  std::string text;
  std::string label;
  Provenance provenance = Provenance::template_text;
};

using TemplateSet = std::vector<std::string>;

struct TemplateLibrary {
  std::map<std::string, TemplateSet> per_class;
  TemplateSet default_set;

  const TemplateSet& for_label(const std::string& label) const;
  static TemplateLibrary builtin();
  static TemplateLibrary load(const std::string& path);  // JSON {"default":[...], "<class>":[...]}
};

// Fills {placeholder} slots from flow columns. Durations render with 3
// decimals, counts as integers. Unknown placeholder -> template-error.
TemplateText render_template(const ingest::FlowRecord& flow, const TemplateSet& templates,
                             uint64_t seed);

// Samples k concept words (uniform, without replacement) from the graph's
// concept layers and appends them as an "involving ..." clause.
TemplateText inject_concepts(TemplateText t, const kg::KnowledgeGraph& graph, int k, uint64_t seed);

class ParaphraseProvider {
public:
  virtual ~ParaphraseProvider() = default;
  // Throws provider-error (message carries the original text) on failure.
  virtual std::string paraphrase(const std::string& text) = 0;
};

std::unique_ptr<ParaphraseProvider> make_paraphrase_provider(const ProviderConfig& cfg);

TextSample paraphrase(const TemplateText& t, ParaphraseProvider& provider);

struct PairedSample {
  TextSample text;
  ingest::PacketRecord packet;
};

struct PairedCorpus {
  std::vector<PairedSample> samples;
  std::vector<std::string> class_set;

  size_t size() const { return samples.size(); }
  void rebuild_class_set();
};

struct BuildReport {
  size_t provider_errors = 0;
  size_t missing_flow = 0;  // packets with no aligned flow (text built from packet fields)
};

// One text per packet: render -> inject (skipped for labels with no mission
// graph, e.g. benign) -> paraphrase, with template fallback on provider
// errors. Pairing index i aligns text[i] with packet[i].
PairedCorpus build_corpus(const std::vector<ingest::FlowRecord>& flows,
                          const std::map<std::string, kg::KnowledgeGraph>& kgs_by_mission,
                          const std::map<std::string, std::string>& label_to_mission,
                          const ingest::LabeledSequence& packets,
                          const std::vector<int>& flow_of_packet, ParaphraseProvider& provider,
                          const TemplateLibrary& templates, int inject_k, uint64_t seed,
                          BuildReport* report = nullptr);

void save_corpus_jsonl(const PairedCorpus& corpus, const std::string& path);
PairedCorpus load_corpus_jsonl(const std::string& path);

std::string payload_to_hex(const std::vector<uint8_t>& payload);
std::vector<uint8_t> payload_from_hex(const std::string& hex);

}  // namespace packetclip::textgen

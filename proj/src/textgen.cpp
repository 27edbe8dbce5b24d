#include "packetclip/textgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "packetclip/error.hpp"
#include "packetclip/kvconfig.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::textgen {

// ---------------------------------------------------------------------------
// template library

namespace {

TemplateSet default_templates() {
  return {
      "A {proto} flow to port {dst_port} carried {packet_count} packets.",
      "The flow from {src_addr} to {dst_addr} lasted {duration} seconds and moved {byte_count} bytes.",
      "Traffic labeled {label} used {proto} on port {dst_port} with {packet_count} packets.",
      "Over {duration} seconds this {proto} connection exchanged {byte_count} bytes in {packet_count} packets.",
      "A session between {src_addr} and {dst_addr} sent {packet_count} {proto} packets toward port {dst_port}.",
      "This {label} flow produced {packet_count} packets and {byte_count} bytes over {proto}.",
  };
}

}  // namespace

TemplateLibrary TemplateLibrary::builtin() {
  TemplateLibrary lib;
  lib.default_set = default_templates();
  lib.per_class["benign"] = {
      "Routine {proto} traffic from {src_addr} to {dst_addr} carried {packet_count} packets in {duration} seconds.",
      "A normal {proto} session on port {dst_port} moved {byte_count} bytes without incident.",
      "Ordinary {label} activity: {packet_count} packets from {src_addr} over {duration} seconds.",
      "The host {src_addr} held a routine {proto} exchange of {byte_count} bytes with {dst_addr}.",
      "Everyday {proto} traffic to port {dst_port} completed with {packet_count} packets.",
      "A benign flow lasting {duration} seconds sent {packet_count} packets to {dst_addr}.",
  };
  lib.per_class["dos"] = {
      "A {label} flood pushed {packet_count} {proto} packets at port {dst_port} within {duration} seconds.",
      "The host {src_addr} hammered {dst_addr} with {byte_count} bytes of {proto} traffic.",
      "Denial of service activity: {packet_count} packets aimed at port {dst_port} in {duration} seconds.",
      "An overwhelming {proto} barrage from {src_addr} delivered {packet_count} packets, saturating {dst_addr}.",
      "This {label} event flooded port {dst_port} with {byte_count} bytes over {proto}.",
      "Rapid {proto} packets from {src_addr} exhausted {dst_addr}, {packet_count} packets in {duration} seconds.",
  };
  lib.per_class["reconnaissance"] = {
      "A {label} sweep from {src_addr} probed {dst_addr} on port {dst_port} with {packet_count} packets.",
      "Scanning activity touched port {dst_port} using {proto}, sending {packet_count} packets in {duration} seconds.",
      "The source {src_addr} mapped services of {dst_addr} with {byte_count} bytes of {proto} probes.",
      "Probe traffic labeled {label} enumerated {dst_addr} over {duration} seconds.",
      "A stealthy {proto} scan from {src_addr} issued {packet_count} probe packets at port {dst_port}.",
      "Reconnaissance traffic gathered a service inventory of {dst_addr} using {packet_count} packets.",
  };
  lib.per_class["brute_force"] = {
      "A {label} run from {src_addr} attempted {packet_count} logins against port {dst_port}.",
      "Credential guessing over {proto} hit {dst_addr} with {packet_count} attempts in {duration} seconds.",
      "The attacker at {src_addr} cycled passwords toward {dst_addr}, moving {byte_count} bytes.",
      "Repeated authentication tries labeled {label} targeted port {dst_port} over {duration} seconds.",
      "A dictionary-driven session sent {packet_count} {proto} packets at {dst_addr}.",
      "Brute force traffic from {src_addr} probed credentials on port {dst_port} with {byte_count} bytes.",
  };
  return lib;
}

const TemplateSet& TemplateLibrary::for_label(const std::string& label) const {
  auto it = per_class.find(label);
  if (it != per_class.end()) return it->second;
  // fine-grained labels fall back to their attack family
  auto family = [&]() -> std::string {
    if (label.find("flood") != std::string::npos || label == "slowloris") return "dos";
    if (label.find("scan") != std::string::npos) return "reconnaissance";
    if (label.find("dictionary") != std::string::npos || label.find("brute") != std::string::npos)
      return "brute_force";
    return "";
  }();
  if (!family.empty()) {
    it = per_class.find(family);
    if (it != per_class.end()) return it->second;
  }
  return default_set;
}

TemplateLibrary TemplateLibrary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::io, "cannot open template library: " + path);
  nlohmann::json j;
  in >> j;
  TemplateLibrary lib;
  for (auto& [key, value] : j.items()) {
    TemplateSet set = value.get<TemplateSet>();
    if (key == "default")
      lib.default_set = std::move(set);
    else
      lib.per_class[key] = std::move(set);
  }
  if (lib.default_set.empty()) lib.default_set = default_templates();
  return lib;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

std::string format_real3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string format_count(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(std::llround(v)));
  return buf;
}

std::string placeholder_value(const ingest::FlowRecord& flow, const std::string& name) {
  if (name == "proto") return ingest::protocol_name(flow.key.protocol);
  if (name == "src_addr") return flow.key.src_addr;
  if (name == "dst_addr") return flow.key.dst_addr;
  if (name == "src_port") return std::to_string(flow.key.src_port);
  if (name == "dst_port") return std::to_string(flow.key.dst_port);
  if (name == "duration") return format_real3(flow.duration_s);
  if (name == "packet_count") return format_count(flow.packet_count);
  if (name == "byte_count") return format_count(flow.byte_count);
  if (name == "label") return flow.label;
  if (auto it = flow.rates.find(name); it != flow.rates.end()) return format_real3(it->second);
  if (auto it = flow.aux.find(name); it != flow.aux.end()) return it->second;
  fail(Err::template_error, name);
}

}  // namespace

TemplateText render_template(const ingest::FlowRecord& flow, const TemplateSet& templates,
                             uint64_t seed) {
  if (templates.empty()) fail(Err::config, "template set is empty");
  const std::string& tpl = templates[size_t(mix_seed(seed, "template") % templates.size())];

  std::string out;
  out.reserve(tpl.size() + 32);
  for (size_t i = 0; i < tpl.size();) {
    if (tpl[i] == '{') {
      size_t close = tpl.find('}', i);
      if (close == std::string::npos) fail(Err::template_error, tpl.substr(i));
      std::string name = tpl.substr(i + 1, close - i - 1);
      out += placeholder_value(flow, name);
      i = close + 1;
    } else {
      out.push_back(tpl[i]);
      ++i;
    }
  }
  TemplateText t;
  t.text = std::move(out);
  t.label = flow.label;
  return t;
}

TemplateText inject_concepts(TemplateText t, const kg::KnowledgeGraph& graph, int k,
                             uint64_t seed) {
  if (k < 0) fail(Err::config, "concept count must be >= 0");
  if (k == 0) return t;

  auto concepts = graph.all_concepts();
  if (size_t(k) > concepts.size()) {
    t.injection_clamped = true;
    k = int(concepts.size());
  }
  Rng rng(mix_seed(mix_seed(seed, "inject"), graph.mission));
  auto picks = rng.sample_without_replacement(concepts.size(), size_t(k));

  std::string clause = " involving ";
  for (size_t i = 0; i < picks.size(); ++i) {
    if (i) clause += ", ";
    clause += concepts[picks[i]];
  }
  if (!t.text.empty() && t.text.back() == '.') {
    t.text.pop_back();
    t.text += clause + ".";
  } else {
    t.text += clause;
  }
  for (size_t i : picks) t.injected_concepts.push_back(concepts[i]);
  return t;
}

// ---------------------------------------------------------------------------
// paraphrasing

namespace {

const std::map<std::string, std::string>& synonym_table() {
  static const std::map<std::string, std::string> table = {
      {"flow", "stream"},        {"carried", "transported"}, {"packets", "datagrams"},
      {"packet", "datagram"},    {"port", "endpoint"},       {"attack", "assault"},
      {"traffic", "activity"},   {"connection", "session"},  {"sent", "emitted"},
      {"bytes", "octets"},       {"lasted", "spanned"},      {"network", "infrastructure"},
      {"scan", "probe"},         {"scanning", "probing"},    {"login", "signin"},
      {"logins", "signins"},     {"password", "passcode"},   {"passwords", "passcodes"},
      {"flood", "deluge"},       {"flooded", "deluged"},     {"malicious", "hostile"},
      {"rapid", "quick"},        {"moved", "shifted"},       {"labeled", "tagged"},
      {"routine", "ordinary"},   {"normal", "typical"},      {"host", "machine"},
      {"probed", "examined"},    {"session", "exchange"},    {"toward", "at"},
      {"exchanged", "swapped"},  {"aimed", "directed"},      {"pushed", "drove"},
  };
  return table;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_ws(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

class StubParaphraseProvider : public ParaphraseProvider {
public:
  explicit StubParaphraseProvider(uint64_t seed) : seed_(seed) {}

  std::string paraphrase(const std::string& text) override {
    if (text.empty()) fail(Err::provider, "cannot paraphrase empty text; original: " + text);
    Rng rng(mix_seed(mix_seed(seed_, "paraphrase"), fnv1a64(text)));

    auto words = split_ws(text);
    const size_t n = words.size();

    // synonym substitution, capped at 40% of tokens so the token multiset
    // overlap with the input stays at or above 50%
    std::vector<size_t> candidates;
    for (size_t i = 0; i < n; ++i) {
      if (synonym_for(words[i]) != nullptr) candidates.push_back(i);
    }
    size_t budget = std::min(candidates.size(), (n * 2) / 5);
    auto picks = rng.sample_without_replacement(candidates.size(), budget);
    std::vector<size_t> chosen;
    for (size_t p : picks) chosen.push_back(candidates[p]);
    std::sort(chosen.begin(), chosen.end());
    for (size_t i : chosen) words[i] = substitute(words[i]);

    std::string out = join_ws(words);

    // clause rotation
    auto clauses = split_clauses(out);
    if (clauses.size() >= 2) {
      size_t shift = 1 + rng.uniform_int(clauses.size() - 1);
      std::rotate(clauses.begin(), clauses.begin() + long(shift), clauses.end());
      out = join_clauses(clauses);
    }

    if (out == text && n >= 2) {
      // move the leading word to the back so the output always differs
      auto ws = split_ws(out);
      std::rotate(ws.begin(), ws.begin() + 1, ws.end());
      out = join_ws(ws);
    }
    if (out == text && n >= 2) out = "notably " + out;
    return out;
  }

private:
  static const std::string* synonym_for(const std::string& word) {
    std::string core, prefix, suffix;
    split_punct(word, &prefix, &core, &suffix);
    std::string low;
    for (char c : core) low.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    auto it = synonym_table().find(low);
    return it == synonym_table().end() ? nullptr : &it->second;
  }

  static std::string substitute(const std::string& word) {
    std::string core, prefix, suffix;
    split_punct(word, &prefix, &core, &suffix);
    const std::string* rep = synonym_for(word);
    if (!rep) return word;
    std::string r = *rep;
    if (!core.empty() && std::isupper(static_cast<unsigned char>(core[0])) && !r.empty())
      r[0] = char(std::toupper(static_cast<unsigned char>(r[0])));
    return prefix + r + suffix;
  }

  static void split_punct(const std::string& word, std::string* prefix, std::string* core,
                          std::string* suffix) {
    size_t b = 0, e = word.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(word[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(word[e - 1]))) --e;
    *prefix = word.substr(0, b);
    *core = word.substr(b, e - b);
    *suffix = word.substr(e);
  }

  static std::vector<std::string> split_clauses(const std::string& text) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
      size_t pos = text.find(", ", start);
      if (pos == std::string::npos) {
        out.push_back(text.substr(start));
        break;
      }
      out.push_back(text.substr(start, pos - start));
      start = pos + 2;
    }
    return out;
  }

  static std::string join_clauses(const std::vector<std::string>& clauses) {
    std::string out;
    for (size_t i = 0; i < clauses.size(); ++i) {
      if (i) out += ", ";
      out += clauses[i];
    }
    return out;
  }

  uint64_t seed_;
};

class HttpParaphraseProvider : public ParaphraseProvider {
public:
  explicit HttpParaphraseProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {}

  std::string paraphrase(const std::string& text) override {
    try {
      return chat_complete(cfg_, "Paraphrase the following sentence, keeping every technical "
                                 "term and number intact. Answer with the sentence only.\n" +
                                     text);
    } catch (const Error& e) {
      fail(Err::provider, std::string(e.what()) + "; original: " + text);
    }
  }

private:
  ProviderConfig cfg_;
};

}  // namespace

std::unique_ptr<ParaphraseProvider> make_paraphrase_provider(const ProviderConfig& cfg) {
  if (cfg.kind == ProviderConfig::Kind::stub)
    return std::make_unique<StubParaphraseProvider>(cfg.seed);
  return std::make_unique<HttpParaphraseProvider>(cfg);
}

TextSample paraphrase(const TemplateText& t, ParaphraseProvider& provider) {
  TextSample sample;
  sample.label = t.label;
  sample.text = provider.paraphrase(t.text);
  sample.provenance = TextSample::Provenance::paraphrased;
  if (sample.text.empty()) fail(Err::provider, "empty paraphrase; original: " + t.text);
  return sample;
}

// ---------------------------------------------------------------------------
// corpus

void PairedCorpus::rebuild_class_set() {
  class_set.clear();
  for (const auto& s : samples) class_set.push_back(s.packet.label);
  std::sort(class_set.begin(), class_set.end());
  class_set.erase(std::unique(class_set.begin(), class_set.end()), class_set.end());
}

PairedCorpus build_corpus(const std::vector<ingest::FlowRecord>& flows,
                          const std::map<std::string, kg::KnowledgeGraph>& kgs_by_mission,
                          const std::map<std::string, std::string>& label_to_mission,
                          const ingest::LabeledSequence& packets,
                          const std::vector<int>& flow_of_packet, ParaphraseProvider& provider,
                          const TemplateLibrary& templates, int inject_k, uint64_t seed,
                          BuildReport* report) {
  if (!flow_of_packet.empty() && flow_of_packet.size() != packets.records.size())
    fail(Err::shape, "flow_of_packet size does not match packet count");

  BuildReport local;
  BuildReport& rep = report ? *report : local;

  PairedCorpus corpus;
  corpus.samples.reserve(packets.records.size());

  for (size_t i = 0; i < packets.records.size(); ++i) {
    const auto& packet = packets.records[i];
    const int flow_idx = flow_of_packet.empty() ? -1 : flow_of_packet[i];

    ingest::FlowRecord pseudo;
    const ingest::FlowRecord* flow;
    if (flow_idx >= 0) {
      flow = &flows[size_t(flow_idx)];
    } else {
      ++rep.missing_flow;
      pseudo.key = packet.flow_key;
      pseudo.start_ts_us = packet.ts_us;
      pseudo.packet_count = 1;
      pseudo.byte_count = double(packet.payload.size());
      pseudo.label = packet.label;
      flow = &pseudo;
    }

    uint64_t sample_seed = mix_seed(seed, i);
    TemplateText t = render_template(*flow, templates.for_label(packet.label), sample_seed);
    t.label = packet.label;
    t.flow_index = flow_idx;

    if (inject_k > 0) {
      auto mit = label_to_mission.find(packet.label);
      if (mit != label_to_mission.end()) {
        auto git = kgs_by_mission.find(mit->second);
        if (git != kgs_by_mission.end())
          t = inject_concepts(std::move(t), git->second, inject_k, sample_seed);
      }
    }

    PairedSample ps;
    ps.packet = packet;
    try {
      ps.text = paraphrase(t, provider);
    } catch (const Error& e) {
      if (e.code() != Err::provider) throw;
      ++rep.provider_errors;
      ps.text.text = t.text;
      ps.text.label = t.label;
      ps.text.provenance = TextSample::Provenance::template_text;
    }
    corpus.samples.push_back(std::move(ps));
  }

  corpus.rebuild_class_set();
  return corpus;
}

// ---------------------------------------------------------------------------
// persistence

std::string payload_to_hex(const std::vector<uint8_t>& payload) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(payload.size() * 2);
  for (uint8_t b : payload) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

std::vector<uint8_t> payload_from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) fail(Err::state, "hex payload has odd length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(Err::state, std::string("bad hex digit '") + c + "'");
  };
  std::vector<uint8_t> out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = uint8_t((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  return out;
}

void save_corpus_jsonl(const PairedCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::io, "cannot write corpus: " + path);
  for (const auto& s : corpus.samples) {
    nlohmann::ordered_json j;
    j["text"] = s.text.text;
    j["packet_hex"] = payload_to_hex(s.packet.payload);
    j["label"] = s.packet.label;
    j["ts"] = s.packet.ts_us;
    j["provenance"] =
        s.text.provenance == TextSample::Provenance::paraphrased ? "paraphrased" : "template";
    out << j.dump() << "\n";
  }
}

PairedCorpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open corpus: " + path);
  PairedCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    PairedSample s;
    s.text.text = j.at("text").get<std::string>();
    s.text.label = j.at("label").get<std::string>();
    s.text.provenance = j.at("provenance").get<std::string>() == "paraphrased"
                            ? TextSample::Provenance::paraphrased
                            : TextSample::Provenance::template_text;
    s.packet.payload = payload_from_hex(j.at("packet_hex").get<std::string>());
    s.packet.label = s.text.label;
    s.packet.ts_us = j.at("ts").get<int64_t>();
    corpus.samples.push_back(std::move(s));
  }
  corpus.rebuild_class_set();
  return corpus;
}

}  // namespace packetclip::textgen

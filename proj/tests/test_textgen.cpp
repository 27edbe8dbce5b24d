#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include "httplib.h"
#include "packetclip/error.hpp"
#include "packetclip/ingest.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/rng.hpp"
#include "packetclip/textgen.hpp"

using namespace packetclip;
using namespace packetclip::textgen;

namespace {

ingest::FlowRecord demo_flow() {
  ingest::FlowRecord f;
  f.key.src_addr = "10.0.0.1";
  f.key.dst_addr = "10.0.0.2";
  f.key.src_port = 1234;
  f.key.dst_port = 80;
  f.key.protocol = 6;
  f.start_ts_us = 1000;
  f.duration_s = 2.5;
  f.packet_count = 12;
  f.byte_count = 3400;
  f.label = "dos";
  return f;
}

ProviderConfig stub_cfg(uint64_t seed) {
  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::stub;
  cfg.seed = seed;
  return cfg;
}

std::multiset<std::string> token_multiset(const std::string& text) {
  std::multiset<std::string> ms;
  for (const auto& t : kg::tokenize_words(text)) ms.insert(t);
  return ms;
}

double multiset_overlap(const std::string& a, const std::string& b) {
  auto ma = token_multiset(a);
  auto mb = token_multiset(b);
  size_t common = 0;
  for (const auto& t : ma)
    if (mb.count(t)) {
      mb.erase(mb.find(t));
      ++common;
    }
  return double(common) / double(std::max(ma.size(), token_multiset(b).size()));
}

kg::KnowledgeGraph small_graph(int n_concepts) {
  kg::ConceptLayer l1{1, {}};
  for (int i = 0; i < n_concepts; ++i) l1.concepts.push_back("concept" + std::to_string(i));
  return kg::assemble_graph("dos", {l1});
}

}  // namespace

TEST_CASE("render_template: exact fill") {
  TemplateSet tpl = {"A {proto} flow to port {dst_port} carried {packet_count} packets."};
  auto t = render_template(demo_flow(), tpl, 7);
  CHECK(t.text == "A tcp flow to port 80 carried 12 packets.");
  CHECK(t.label == "dos");
}

TEST_CASE("render_template: duration formatted with 3 decimals") {
  TemplateSet tpl = {"lasted {duration} s moving {byte_count} bytes"};
  auto t = render_template(demo_flow(), tpl, 0);
  CHECK(t.text == "lasted 2.500 s moving 3400 bytes");
}

TEST_CASE("render_template: deterministic per seed and varies across seeds") {
  TemplateSet tpl;
  for (int i = 0; i < 6; ++i) tpl.push_back("variant " + std::to_string(i) + " {proto}");
  auto a = render_template(demo_flow(), tpl, 5);
  auto b = render_template(demo_flow(), tpl, 5);
  CHECK(a.text == b.text);
  std::set<std::string> seen;
  for (uint64_t s = 0; s < 30; ++s) seen.insert(render_template(demo_flow(), tpl, s).text);
  CHECK(seen.size() > 1);
}

TEST_CASE("render_template: unknown placeholder names itself") {
  TemplateSet tpl = {"bad {foo} placeholder"};
  try {
    render_template(demo_flow(), tpl, 0);
    FAIL("expected template-error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::template_error);
    CHECK(std::string(e.what()) == "foo");
  }
}

TEST_CASE("render_template: rates and aux columns usable") {
  auto flow = demo_flow();
  flow.rates["pkts_per_s"] = 4.8;
  flow.aux["note"] = "steady";
  TemplateSet tpl = {"rate {pkts_per_s} note {note}"};
  auto t = render_template(flow, tpl, 0);
  CHECK(t.text == "rate 4.800 note steady");
}

TEST_CASE("inject_concepts: k=0 identity") {
  TemplateText t;
  t.text = "Something happened.";
  t.label = "dos";
  auto out = inject_concepts(t, small_graph(5), 0, 3);
  CHECK(out.text == t.text);
  CHECK(out.injected_concepts.empty());
}

TEST_CASE("inject_concepts: deterministic sample without replacement") {
  TemplateText t;
  t.text = "Something happened.";
  auto a = inject_concepts(t, small_graph(5), 2, 9);
  auto b = inject_concepts(t, small_graph(5), 2, 9);
  CHECK(a.text == b.text);
  REQUIRE(a.injected_concepts.size() == 2);
  CHECK(a.injected_concepts[0] != a.injected_concepts[1]);
  CHECK(a.text.find("involving") != std::string::npos);
  CHECK(a.text.back() == '.');
}

TEST_CASE("inject_concepts: k beyond pool clamps with flag") {
  TemplateText t;
  t.text = "Something happened.";
  auto out = inject_concepts(t, small_graph(5), 10, 1);
  CHECK(out.injected_concepts.size() == 5);
  CHECK(out.injection_clamped);
}

TEST_CASE("stub paraphrase: deterministic and differing for 4+ words") {
  auto provider = make_paraphrase_provider(stub_cfg(11));
  std::string input = "A tcp flow to port 80 carried 12 packets.";
  auto a = provider->paraphrase(input);
  auto b = provider->paraphrase(input);
  CHECK(a == b);
  CHECK(a != input);
  CHECK(!a.empty());
}

TEST_CASE("stub paraphrase: property over random rendered templates") {
  auto provider = make_paraphrase_provider(stub_cfg(21));
  auto lib = TemplateLibrary::builtin();
  int checked = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    for (const auto& [cls, tpls] : lib.per_class) {
      auto flow = demo_flow();
      flow.label = cls;
      auto t = render_template(flow, tpls, seed);
      if (kg::tokenize_words(t.text).size() < 4) continue;
      auto out = provider->paraphrase(t.text);
      INFO("input: ", t.text, " output: ", out);
      CHECK(out != t.text);
      CHECK(!out.empty());
      CHECK(multiset_overlap(t.text, out) >= 0.5);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("paraphrase wraps provider output with provenance") {
  auto provider = make_paraphrase_provider(stub_cfg(2));
  TemplateText t;
  t.text = "A tcp flow to port 80 carried 12 packets.";
  t.label = "dos";
  auto sample = paraphrase(t, *provider);
  CHECK(sample.label == "dos");
  CHECK(sample.provenance == TextSample::Provenance::paraphrased);
  CHECK(!sample.text.empty());
}

TEST_CASE("http paraphrase: empty body becomes provider-error; corpus falls back to template") {
  httplib::Server server;
  std::atomic<int> mode{0};  // 0 = empty content, 1 = ok
  server.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
    if (mode == 0)
      res.set_content(R"({"choices":[{"message":{"content":""}}]})", "application/json");
    else
      res.set_content(R"({"choices":[{"message":{"content":"Rewritten sentence."}}]})",
                      "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::http;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  cfg.timeout_s = 5.0;
  auto provider = make_paraphrase_provider(cfg);

  TemplateText t;
  t.text = "Original sentence for the provider.";
  t.label = "dos";
  try {
    paraphrase(t, *provider);
    FAIL("expected provider-error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::provider);
    CHECK(std::string(e.what()).find("Original sentence") != std::string::npos);
  }

  // through build_corpus the failure becomes a template-provenance fallback
  auto data = ingest::synth_dataset(2, 6, 4);
  auto aligned = ingest::align(data.flows, data.seq, 1.0);
  BuildReport report;
  auto corpus = build_corpus(data.flows, {}, {}, aligned.seq, aligned.flow_of_packet, *provider,
                             TemplateLibrary::builtin(), 0, 9, &report);
  CHECK(report.provider_errors == corpus.samples.size());
  for (const auto& s : corpus.samples)
    CHECK(s.text.provenance == TextSample::Provenance::template_text);

  // and a healthy response is used verbatim
  mode = 1;
  auto sample = paraphrase(t, *provider);
  CHECK(sample.text == "Rewritten sentence.");
  CHECK(sample.provenance == TextSample::Provenance::paraphrased);

  server.stop();
  th.join();
}

TEST_CASE("build_corpus: cardinality and label pairing") {
  auto data = ingest::synth_dataset(4, 25, 8);
  auto aligned = ingest::align(data.flows, data.seq, 1.0);
  std::map<std::string, kg::KnowledgeGraph> kgs;
  kgs["dos"] = small_graph(4);
  std::map<std::string, std::string> l2m = {{"benign", "benign"},
                                            {"dos", "dos"},
                                            {"reconnaissance", "reconnaissance"},
                                            {"brute_force", "brute_force"}};
  auto provider = make_paraphrase_provider(stub_cfg(3));
  auto corpus = build_corpus(data.flows, kgs, l2m, aligned.seq, aligned.flow_of_packet, *provider,
                             TemplateLibrary::builtin(), 2, 10);
  REQUIRE(corpus.samples.size() == aligned.seq.records.size());
  // multiset oracle: corpus labels equal packet labels
  std::multiset<std::string> corpus_labels, packet_labels;
  for (const auto& s : corpus.samples) {
    CHECK(s.text.label == s.packet.label);  // pairing bijection
    corpus_labels.insert(s.text.label);
  }
  for (const auto& r : aligned.seq.records) packet_labels.insert(r.label);
  CHECK(corpus_labels == packet_labels);
}

TEST_CASE("build_corpus: empty input gives empty corpus") {
  ingest::LabeledSequence empty;
  auto provider = make_paraphrase_provider(stub_cfg(1));
  auto corpus = build_corpus({}, {}, {}, empty, {}, *provider, TemplateLibrary::builtin(), 0, 0);
  CHECK(corpus.samples.empty());
}

TEST_CASE("build_corpus: vocabulary grows with concept injection") {
  auto data = ingest::synth_dataset(4, 30, 12);
  auto aligned = ingest::align(data.flows, data.seq, 1.0);
  std::map<std::string, kg::KnowledgeGraph> kgs;
  ProviderConfig pc = stub_cfg(5);
  for (const auto& m : {"dos", "reconnaissance", "brute_force"})
    kgs[m] = kg::generate_graph(m, 8, 2, pc);
  std::map<std::string, std::string> l2m = {{"benign", "benign"},
                                            {"dos", "dos"},
                                            {"reconnaissance", "reconnaissance"},
                                            {"brute_force", "brute_force"}};
  auto provider = make_paraphrase_provider(stub_cfg(6));

  auto count_vocab = [](const PairedCorpus& c) {
    std::set<std::string> vocab;
    for (const auto& s : c.samples)
      for (const auto& t : kg::tokenize_words(s.text.text)) vocab.insert(t);
    return vocab.size();
  };
  auto with = build_corpus(data.flows, kgs, l2m, aligned.seq, aligned.flow_of_packet, *provider,
                           TemplateLibrary::builtin(), 3, 17);
  auto without = build_corpus(data.flows, kgs, l2m, aligned.seq, aligned.flow_of_packet,
                              *provider, TemplateLibrary::builtin(), 0, 17);
  CHECK(count_vocab(with) >= count_vocab(without));
  CHECK(count_vocab(with) > count_vocab(without));  // concepts add tokens on this data
}

TEST_CASE("corpus jsonl round-trip preserves pairing") {
  auto data = ingest::synth_dataset(3, 10, 2);
  auto aligned = ingest::align(data.flows, data.seq, 1.0);
  auto provider = make_paraphrase_provider(stub_cfg(4));
  auto corpus = build_corpus(data.flows, {}, {}, aligned.seq, aligned.flow_of_packet, *provider,
                             TemplateLibrary::builtin(), 0, 3);
  auto path = (std::filesystem::temp_directory_path() / "pc_corpus.jsonl").string();
  save_corpus_jsonl(corpus, path);
  auto back = load_corpus_jsonl(path);
  REQUIRE(back.samples.size() == corpus.samples.size());
  for (size_t i = 0; i < corpus.samples.size(); ++i) {
    CHECK(back.samples[i].text.text == corpus.samples[i].text.text);
    CHECK(back.samples[i].text.label == corpus.samples[i].text.label);
    CHECK(back.samples[i].packet.payload == corpus.samples[i].packet.payload);
    CHECK(back.samples[i].packet.ts_us == corpus.samples[i].packet.ts_us);
  }
}

TEST_CASE("template library: fine labels fall back to their family") {
  auto lib = TemplateLibrary::builtin();
  CHECK(&lib.for_label("syn_flood") == &lib.per_class.at("dos"));
  CHECK(&lib.for_label("port_scan") == &lib.per_class.at("reconnaissance"));
  CHECK(&lib.for_label("dictionary_attack") == &lib.per_class.at("brute_force"));
  CHECK(&lib.for_label("unknown_thing") == &lib.default_set);
  for (const auto& [cls, set] : lib.per_class) CHECK(set.size() >= 5);
  CHECK(lib.default_set.size() >= 5);
}

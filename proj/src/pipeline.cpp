#include "packetclip/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "packetclip/error.hpp"
#include "packetclip/rng.hpp"

namespace fs = std::filesystem;

namespace packetclip::pipeline {

// ---------------------------------------------------------------------------
// config

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  return PipelineConfig{KvConfig::parse_file(path)};
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  return PipelineConfig{KvConfig::parse_text(text)};
}

std::string PipelineConfig::config_hash() const { return hex64(fnv1a64(raw.canonical_text())); }

ProviderConfig PipelineConfig::provider(const std::string& role) const {
  ProviderConfig cfg;
  cfg.kind = ProviderConfig::kind_from_string(raw.get("provider.kind", "stub"));
  cfg.endpoint = raw.get("provider.endpoint", "");
  cfg.model = raw.get("provider.model", "default");
  cfg.timeout_s = raw.get_real("provider.timeout", 10.0);
  cfg.seed = mix_seed(seed(), "provider:" + role);
  if (cfg.kind == ProviderConfig::Kind::http && cfg.endpoint.empty())
    fail(Err::config, "provider.kind = http requires provider.endpoint");
  return cfg;
}

contrastive::TrainConfig PipelineConfig::contrastive_config() const {
  contrastive::TrainConfig cfg;
  cfg.lr = raw.get_real("contrastive.lr", 5.0e-4);
  cfg.beta1 = raw.get_real("contrastive.beta1", 0.9);
  cfg.beta2 = raw.get_real("contrastive.beta2", 0.8);
  cfg.epsilon = raw.get_real("contrastive.epsilon", 1.0e-6);
  cfg.steps = int(raw.get_int("contrastive.steps", 3000));
  cfg.batch = int(raw.get_int("contrastive.batch", 128));
  cfg.tau = raw.get_real("contrastive.tau", 0.07);
  cfg.denominator = contrastive::denominator_from_string(
      raw.get("contrastive.denominator", "standard"));
  cfg.ssl_mode = contrastive::ssl_mode_from_string(raw.get("contrastive.ssl_mode", "both"));
  cfg.embed_dim = int(raw.get_int("embed.dim", 128));
  cfg.seed = mix_seed(seed(), "contrastive");
  return cfg;
}

reason::ReasonerConfig PipelineConfig::reasoner_config() const {
  reason::ReasonerConfig cfg;
  cfg.feature_dim = int(raw.get_int("reasoner.d", 8));
  cfg.gnn_layers = int(raw.get_int("reasoner.layers", 3));
  cfg.d_model = int(raw.get_int("reasoner.d_model", 128));
  cfg.heads = int(raw.get_int("reasoner.heads", 8));
  cfg.head_dim = int(raw.get_int("reasoner.head_dim", 8));
  cfg.ffn_dim = int(raw.get_int("reasoner.ffn_dim", 64));
  cfg.depth = int(raw.get_int("reasoner.depth", 1));
  cfg.window = int(raw.get_int("reasoner.window", 30));
  cfg.cls_hidden = int(raw.get_int("reasoner.cls_hidden", 64));
  cfg.activation = reason::activation_from_string(raw.get("reasoner.activation", "tanh"));
  cfg.unit_embeddings = raw.get_bool("reasoner.unit_embeddings", true);
  cfg.embed_dim = int(raw.get_int("embed.dim", 128));  // adjusted to the trained heads at use
  return cfg;
}

reason::ReasonTrainConfig PipelineConfig::reasoner_train_config() const {
  reason::ReasonTrainConfig cfg;
  cfg.lr = raw.get_real("reasoner.lr", 5.0e-4);
  cfg.beta1 = raw.get_real("reasoner.beta1", 0.9);
  cfg.beta2 = raw.get_real("reasoner.beta2", 0.8);
  cfg.epsilon = raw.get_real("reasoner.epsilon", 1.0e-6);
  cfg.steps = int(raw.get_int("reasoner.steps", 3000));
  cfg.batch = int(raw.get_int("reasoner.batch", 128));
  cfg.segment_len = int(raw.get_int("reasoner.segment_len", 8));
  cfg.smoothing_lambda = raw.get_real("reasoner.smoothing", 0.1);
  cfg.seed = mix_seed(seed(), "reasoner");
  return cfg;
}

std::map<std::string, std::string> PipelineConfig::label_to_mission(
    const std::vector<std::string>& labels) const {
  auto overrides = raw.section("grouping");
  std::map<std::string, std::string> out;
  for (const auto& label : labels) {
    auto it = overrides.find(label);
    if (it != overrides.end()) {
      out[label] = it->second;
      continue;
    }
    if (label == "benign") {
      out[label] = "benign";
    } else if (label.find("flood") != std::string::npos || label == "slowloris" ||
               label == "dos") {
      out[label] = "dos";
    } else if (label.find("scan") != std::string::npos || label == "reconnaissance") {
      out[label] = "reconnaissance";
    } else if (label.find("dictionary") != std::string::npos ||
               label.find("brute") != std::string::npos) {
      out[label] = "brute_force";
    } else {
      out[label] = label;  // already coarse or unknown: group of its own
    }
  }
  return out;
}

std::vector<double> PipelineConfig::sweep_fractions() const {
  auto list = raw.get_list("eval.fractions");
  if (list.empty()) return {1.0, 0.7, 0.5, 0.4, 0.3};
  std::vector<double> out;
  for (const auto& s : list) out.push_back(std::stod(s));
  return out;
}

// ---------------------------------------------------------------------------
// dataset artifact

namespace {

nlohmann::ordered_json key_to_json(const ingest::FlowKey& k) {
  return {{"src", k.src_addr},
          {"dst", k.dst_addr},
          {"sport", k.src_port},
          {"dport", k.dst_port},
          {"proto", int(k.protocol)}};
}

ingest::FlowKey key_from_json(const nlohmann::json& j) {
  ingest::FlowKey k;
  k.src_addr = j.at("src").get<std::string>();
  k.dst_addr = j.at("dst").get<std::string>();
  k.src_port = uint16_t(j.at("sport").get<int>());
  k.dst_port = uint16_t(j.at("dport").get<int>());
  k.protocol = uint8_t(j.at("proto").get<int>());
  return k;
}

}  // namespace

nlohmann::ordered_json dataset_to_json(const Dataset& ds) {
  nlohmann::ordered_json j;
  j["classes"] = ds.seq.class_set;
  auto packets = nlohmann::ordered_json::array();
  for (const auto& r : ds.seq.records)
    packets.push_back({{"ts", r.ts_us},
                       {"label", r.label},
                       {"payload_hex", textgen::payload_to_hex(r.payload)},
                       {"key", key_to_json(r.flow_key)}});
  j["packets"] = std::move(packets);
  auto flows = nlohmann::ordered_json::array();
  for (const auto& f : ds.flows)
    flows.push_back({{"key", key_to_json(f.key)},
                     {"start_ts_us", f.start_ts_us},
                     {"duration", f.duration_s},
                     {"packet_count", f.packet_count},
                     {"byte_count", f.byte_count},
                     {"label", f.label},
                     {"rates", f.rates},
                     {"aux", f.aux}});
  j["flows"] = std::move(flows);
  j["flow_of_packet"] = ds.flow_of_packet;
  j["align"] = {{"matched", ds.align_matched}, {"unmatched", ds.align_unmatched}};
  return j;
}

Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset ds;
  for (const auto& p : j.at("packets")) {
    ingest::PacketRecord r;
    r.ts_us = p.at("ts").get<int64_t>();
    r.label = p.at("label").get<std::string>();
    r.payload = textgen::payload_from_hex(p.at("payload_hex").get<std::string>());
    r.flow_key = key_from_json(p.at("key"));
    ds.seq.records.push_back(std::move(r));
  }
  ds.seq.rebuild_class_set();
  for (const auto& f : j.at("flows")) {
    ingest::FlowRecord fr;
    fr.key = key_from_json(f.at("key"));
    fr.start_ts_us = f.at("start_ts_us").get<int64_t>();
    fr.duration_s = f.at("duration").get<double>();
    fr.packet_count = f.at("packet_count").get<double>();
    fr.byte_count = f.at("byte_count").get<double>();
    fr.label = f.at("label").get<std::string>();
    fr.rates = f.at("rates").get<std::map<std::string, double>>();
    fr.aux = f.at("aux").get<std::map<std::string, std::string>>();
    ds.flows.push_back(std::move(fr));
  }
  ds.flow_of_packet = j.at("flow_of_packet").get<std::vector<int>>();
  ds.align_matched = j.at("align").at("matched").get<size_t>();
  ds.align_unmatched = j.at("align").at("unmatched").get<size_t>();
  return ds;
}

// ---------------------------------------------------------------------------
// shared helpers

uint64_t file_fnv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot hash missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::io, "cannot write " + path);
  out << text;
}

namespace {

nlohmann::json read_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "missing " + what + ": " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

ingest::LabeledSequence to_coarse(const ingest::LabeledSequence& seq,
                                  const std::map<std::string, std::string>& l2m) {
  ingest::LabeledSequence out = seq;
  for (auto& r : out.records) {
    auto it = l2m.find(r.label);
    if (it != l2m.end()) r.label = it->second;
  }
  out.rebuild_class_set();
  return out;
}

std::vector<std::string> mission_names(const std::map<std::string, std::string>& l2m) {
  std::set<std::string> names;
  for (const auto& [_, g] : l2m)
    if (g != "benign") names.insert(g);
  return {names.begin(), names.end()};
}

// zero-shot prompt: the label words plus a few key concepts of its mission
std::vector<std::pair<std::string, std::string>> class_prompts(
    const std::vector<std::string>& labels, const std::map<std::string, std::string>& l2m,
    const std::map<std::string, kg::KnowledgeGraph>& kgs) {
  std::vector<std::pair<std::string, std::string>> prompts;
  for (const auto& label : labels) {
    std::string words = label;
    for (auto& c : words)
      if (c == '_') c = ' ';
    std::string prompt = words + " network traffic";
    auto mit = l2m.find(label);
    if (mit != l2m.end()) {
      auto git = kgs.find(mit->second);
      if (git != kgs.end() && !git->second.layers.empty()) {
        const auto& concepts = git->second.layers.front().concepts;
        prompt += " involving";
        for (size_t i = 0; i < concepts.size() && i < 5; ++i)
          prompt += (i ? ", " : " ") + concepts[i];
      }
    }
    prompts.emplace_back(label, prompt);
  }
  return prompts;
}

struct TrainedStack {
  contrastive::Heads heads;
  reason::ReasonModel model;
  std::vector<reason::MissionContext> contexts;
  std::vector<double> pretrain_curve;
  std::vector<double> train_curve;
};

embed::BaseEncoder make_text_encoder(const PipelineConfig& cfg) {
  embed::BaseEncoderConfig ec;
  ec.modality = embed::BaseEncoderConfig::Modality::text;
  ec.output_dim = int(cfg.raw.get_int("embed.base_dim", 512));
  if (cfg.raw.has("embed.text_vectors")) {
    ec.kind = embed::BaseEncoderConfig::Kind::external_import;
    ec.vectors_path = cfg.raw.get("embed.text_vectors");
  }
  return embed::BaseEncoder(ec);
}

embed::BaseEncoder make_packet_encoder(const PipelineConfig& cfg) {
  embed::BaseEncoderConfig ec;
  ec.modality = embed::BaseEncoderConfig::Modality::packet;
  ec.output_dim = int(cfg.raw.get_int("embed.base_dim", 512));
  if (cfg.raw.has("embed.packet_vectors")) {
    ec.kind = embed::BaseEncoderConfig::Kind::external_import;
    ec.vectors_path = cfg.raw.get("embed.packet_vectors");
  }
  return embed::BaseEncoder(ec);
}

contrastive::PretrainResult pretrain_for_split(const PipelineConfig& cfg,
                                               const textgen::PairedCorpus& corpus,
                                               const std::vector<size_t>& train_indices) {
  textgen::PairedCorpus sub;
  for (size_t i : train_indices) {
    if (i >= corpus.samples.size()) fail(Err::state, "corpus/train index out of range");
    sub.samples.push_back(corpus.samples[i]);
  }
  sub.rebuild_class_set();

  auto tc = cfg.contrastive_config();
  tc.batch = std::max(2, std::min(tc.batch, int(sub.samples.size())));
  auto text_enc = make_text_encoder(cfg);
  auto packet_enc = make_packet_encoder(cfg);
  return contrastive::pretrain_heads(sub, text_enc, packet_enc, tc);
}

reason::TrainResult train_for_split(const PipelineConfig& cfg, const contrastive::Heads& heads,
                                    const std::map<std::string, kg::KnowledgeGraph>& kgs,
                                    const ingest::LabeledSequence& coarse_train,
                                    const std::vector<std::string>& classes,
                                    std::vector<reason::MissionContext>* contexts_out) {
  auto rcfg = cfg.reasoner_config();
  rcfg.embed_dim = heads.packet.embed_dim();
  auto text_enc = make_text_encoder(cfg);
  auto packet_enc = make_packet_encoder(cfg);

  std::vector<reason::MissionContext> contexts;
  for (const auto& [mission, graph] : kgs)
    contexts.push_back(reason::make_mission_context(graph, heads, text_enc, rcfg));

  auto result = reason::train_reasoner(coarse_train, contexts, heads, packet_enc, rcfg,
                                       cfg.reasoner_train_config(), classes);
  if (contexts_out) *contexts_out = std::move(contexts);
  return result;
}

double mauc_for_stack(const PipelineConfig& cfg, const TrainedStack& stack,
                      const ingest::LabeledSequence& coarse_test) {
  auto packet_enc = make_packet_encoder(cfg);
  Mat probs = reason::infer_stream(coarse_test, stack.model, stack.contexts, stack.heads,
                                   packet_enc);
  std::vector<std::string> truth;
  for (const auto& r : coarse_test.records) truth.push_back(r.label);
  auto report = eval::evaluate_probs(probs, stack.model.classes, truth);
  return report.mauc;
}

}  // namespace

// ---------------------------------------------------------------------------
// pipeline

Pipeline::Pipeline(PipelineConfig config, std::string out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {
  fs::create_directories(out_dir_);
  std::string mpath = artifact("manifest.json");
  if (fs::exists(mpath)) {
    manifest_ = read_json_file(mpath, "manifest");
  } else {
    manifest_ = nlohmann::json::object();
  }
}

const std::vector<std::string>& Pipeline::stage_order() {
  static const std::vector<std::string> order = {"ingest", "kg",    "corpus",
                                                 "pretrain", "train", "evaluate"};
  return order;
}

std::string Pipeline::artifact(const std::string& name) const {
  return (fs::path(out_dir_) / name).string();
}

bool Pipeline::stage_is_fresh(const std::string& name) const {
  if (!manifest_.contains("config_hash") ||
      manifest_["config_hash"].get<std::string>() != config_.config_hash())
    return false;
  if (!manifest_.contains("stages") || !manifest_["stages"].contains(name)) return false;
  for (const auto& [file, hash] : manifest_["stages"][name]["artifacts"].items()) {
    std::string path = artifact(file);
    if (!fs::exists(path)) return false;
    if (hex64(file_fnv(path)) != hash.get<std::string>()) return false;
  }
  return true;
}

void Pipeline::record_stage(const std::string& name, const std::vector<std::string>& artifacts) {
  manifest_["config_hash"] = config_.config_hash();
  nlohmann::json files = nlohmann::json::object();
  for (const auto& file : artifacts) files[file] = hex64(file_fnv(artifact(file)));
  manifest_["stages"][name] = {{"artifacts", files}};
  std::ofstream out(artifact("manifest.json"), std::ios::binary);
  if (!out) fail(Err::io, "cannot write manifest");
  out << manifest_.dump(2) << "\n";
}

std::vector<std::string> Pipeline::run(bool resume) {
  std::vector<std::string> executed;
  for (const auto& name : stage_order()) {
    if (resume && stage_is_fresh(name)) continue;
    run_stage(name);
    executed.push_back(name);
  }
  return executed;
}

void Pipeline::run_stage(const std::string& name) {
  try {
    if (name == "ingest")
      stage_ingest();
    else if (name == "kg")
      stage_kg();
    else if (name == "corpus")
      stage_corpus();
    else if (name == "pretrain")
      stage_pretrain();
    else if (name == "train")
      stage_train();
    else if (name == "evaluate")
      stage_evaluate();
    else if (name == "infer")
      stage_infer();
    else
      fail(Err::config, "unknown stage: " + name);
  } catch (const Error& e) {
    throw Error(e.code(), "[stage " + name + "] " + e.what());
  }
}

Dataset Pipeline::load_dataset() const {
  return dataset_from_json(read_json_file(artifact("dataset.json"), "dataset artifact"));
}

std::map<std::string, kg::KnowledgeGraph> Pipeline::load_kgs() const {
  auto j = read_json_file(artifact("kgs.json"), "knowledge graph artifact");
  std::map<std::string, kg::KnowledgeGraph> kgs;
  for (const auto& [mission, gj] : j.items()) kgs[mission] = kg::kg_from_json(gj);
  return kgs;
}

void Pipeline::stage_ingest() {
  Dataset ds;
  const auto& raw = config_.raw;
  std::string source = raw.get("data.source", "synth");
  double window = raw.get_real("data.align_window", 1.0);

  if (source == "synth") {
    ingest::SynthOptions opt;
    opt.max_payload_len = size_t(raw.get_int("data.max_payload_len", 128));
    opt.informative_prob = raw.get_real("data.synth.informative_prob", 0.5);
    opt.signature_density = raw.get_real("data.synth.signature_density", 0.8);
    auto synth = ingest::synth_dataset(int(raw.get_int("data.synth.num_classes", 4)),
                                       int(raw.get_int("data.synth.per_class", 500)),
                                       config_.seed(), opt);
    auto aligned = ingest::align(synth.flows, synth.seq, window);
    ds.seq = std::move(aligned.seq);
    ds.flows = std::move(synth.flows);
    ds.flow_of_packet = std::move(aligned.flow_of_packet);
    ds.align_matched = aligned.matched;
    ds.align_unmatched = aligned.unmatched;
  } else if (source == "files") {
    ingest::PcapReadOptions opt;
    opt.max_payload_len = size_t(raw.get_int("data.max_payload_len", 128));
    opt.strip_to_transport = raw.get_bool("data.strip_transport", false);
    auto seq = ingest::read_pcap(raw.get("data.pcap"), opt);
    std::map<std::string, std::string> schema;
    if (raw.has("data.schema_map")) {
      for (auto& [k, v] : KvConfig::parse_file(raw.get("data.schema_map")).entries()) schema[k] = v;
    }
    auto flows = ingest::read_flow_csv(raw.get("data.flow_csv"), schema);
    auto aligned = ingest::align(flows.flows, seq, window);
    ds.seq = std::move(aligned.seq);
    ds.flows = std::move(flows.flows);
    ds.flow_of_packet = std::move(aligned.flow_of_packet);
    ds.align_matched = aligned.matched;
    ds.align_unmatched = aligned.unmatched;
  } else {
    fail(Err::config, "data.source must be synth or files");
  }

  write_text_file(artifact("dataset.json"), dataset_to_json(ds).dump(2) + "\n");
  record_stage("ingest", {"dataset.json"});
}

void Pipeline::stage_kg() {
  Dataset ds = load_dataset();
  auto l2m = config_.label_to_mission(ds.seq.class_set);
  auto missions = mission_names(l2m);

  auto provider_cfg = config_.provider("concepts");
  int v = int(config_.raw.get_int("kg.v", 10));
  int n = int(config_.raw.get_int("kg.n", 2));

  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& mission : missions) {
    auto graph = kg::generate_graph(mission, v, n, provider_cfg);
    auto report = kg::validate_graph(graph);
    if (!report.ok())
      fail(Err::graph, "generated graph for mission '" + mission + "' failed validation: " +
                           report.violations.front().kind);
    out[mission] = kg::kg_to_json(graph);
  }
  write_text_file(artifact("kgs.json"), out.dump(2) + "\n");
  record_stage("kg", {"kgs.json"});
}

void Pipeline::stage_corpus() {
  Dataset ds = load_dataset();
  auto kgs = load_kgs();
  auto l2m = config_.label_to_mission(ds.seq.class_set);

  textgen::TemplateLibrary lib = config_.raw.has("corpus.templates")
                                     ? textgen::TemplateLibrary::load(config_.raw.get("corpus.templates"))
                                     : textgen::TemplateLibrary::builtin();
  auto provider = textgen::make_paraphrase_provider(config_.provider("paraphrase"));
  textgen::BuildReport report;
  auto corpus = textgen::build_corpus(ds.flows, kgs, l2m, ds.seq, ds.flow_of_packet, *provider,
                                      lib, int(config_.raw.get_int("corpus.inject_k", 3)),
                                      mix_seed(config_.seed(), "corpus"), &report);
  textgen::save_corpus_jsonl(corpus, artifact("corpus.jsonl"));
  nlohmann::ordered_json rj = {{"samples", corpus.samples.size()},
                               {"provider_errors", report.provider_errors},
                               {"missing_flow", report.missing_flow}};
  write_text_file(artifact("corpus_report.json"), rj.dump(2) + "\n");
  record_stage("corpus", {"corpus.jsonl", "corpus_report.json"});
}

void Pipeline::stage_pretrain() {
  Dataset ds = load_dataset();
  auto corpus = textgen::load_corpus_jsonl(artifact("corpus.jsonl"));
  if (corpus.samples.size() != ds.seq.records.size())
    fail(Err::state, "corpus/dataset size mismatch; rebuild the corpus stage");

  auto split = ingest::split_dataset(ds.seq, config_.raw.get_real("split.fraction", 1.0),
                                     config_.seed());
  auto result = pretrain_for_split(config_, corpus, split.train_indices);
  contrastive::save_heads(result.heads, artifact("heads.json"));

  std::ostringstream log;
  for (size_t i = 0; i < result.loss_curve.size(); ++i) {
    nlohmann::ordered_json row = {{"step", i}, {"loss", result.loss_curve[i]}};
    log << row.dump() << "\n";
  }
  write_text_file(artifact("pretrain_log.jsonl"), log.str());
  record_stage("pretrain", {"heads.json", "pretrain_log.jsonl"});
}

void Pipeline::stage_train() {
  Dataset ds = load_dataset();
  auto kgs = load_kgs();
  auto heads = contrastive::load_heads(artifact("heads.json"));
  auto l2m = config_.label_to_mission(ds.seq.class_set);

  auto split = ingest::split_dataset(ds.seq, config_.raw.get_real("split.fraction", 1.0),
                                     config_.seed());
  auto coarse_train = to_coarse(split.train, l2m);
  auto coarse_all = to_coarse(ds.seq, l2m);

  auto result = train_for_split(config_, heads, kgs, coarse_train, coarse_all.class_set, nullptr);
  reason::save_model(result.model, artifact("model.json"));

  std::ostringstream log;
  for (size_t i = 0; i < result.loss_curve.size(); ++i) {
    nlohmann::ordered_json row = {{"step", i}, {"loss", result.loss_curve[i]}};
    log << row.dump() << "\n";
  }
  write_text_file(artifact("train_log.jsonl"), log.str());
  record_stage("train", {"model.json", "train_log.jsonl"});
}

void Pipeline::stage_evaluate() {
  Dataset ds = load_dataset();
  auto kgs = load_kgs();
  auto heads = contrastive::load_heads(artifact("heads.json"));
  auto model = reason::load_model(artifact("model.json"));
  auto corpus = textgen::load_corpus_jsonl(artifact("corpus.jsonl"));
  auto l2m = config_.label_to_mission(ds.seq.class_set);

  auto text_enc = make_text_encoder(config_);
  auto packet_enc = make_packet_encoder(config_);

  auto rcfg = model.config;
  std::vector<reason::MissionContext> contexts;
  for (const auto& [mission, graph] : kgs)
    contexts.push_back(reason::make_mission_context(graph, heads, text_enc, rcfg));

  auto split = ingest::split_dataset(ds.seq, config_.raw.get_real("split.fraction", 1.0),
                                     config_.seed());
  auto coarse_train = to_coarse(split.train, l2m);
  auto coarse_test = to_coarse(split.test, l2m);

  // hierarchical model on the held-out tail
  Mat probs = reason::infer_stream(coarse_test, model, contexts, heads, packet_enc);
  std::vector<std::string> truth;
  for (const auto& r : coarse_test.records) truth.push_back(r.label);
  auto reasoner_metrics = eval::evaluate_probs(probs, model.classes, truth);

  // per-packet logistic probe over the same projected embeddings
  auto embed_rows = [&](const ingest::LabeledSequence& seq) {
    Mat x(int(seq.records.size()), heads.packet.embed_dim());
    for (size_t i = 0; i < seq.records.size(); ++i) {
      Mat z = reason::packet_embedding(seq.records[i].payload, heads, packet_enc, rcfg);
      std::copy(z.data(), z.data() + z.size(), x.row(int(i)));
    }
    return x;
  };
  std::vector<std::string> train_truth;
  for (const auto& r : coarse_train.records) train_truth.push_back(r.label);
  auto probe = eval::logistic_probe(embed_rows(coarse_train), train_truth,
                                    embed_rows(coarse_test), truth, model.classes,
                                    mix_seed(config_.seed(), "probe"));

  // zero-shot over fine labels
  auto prompts = class_prompts(ds.seq.class_set, l2m, kgs);
  int top_k = std::min<int>(5, int(prompts.size()));
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> fine_truth;
  for (size_t i : split.test_indices) {
    rankings.push_back(contrastive::zero_shot_classify(ds.seq.records[i].payload, heads, text_enc,
                                                       packet_enc, prompts, top_k));
    fine_truth.push_back(ds.seq.records[i].label);
  }
  double top1 = eval::top_k_accuracy(rankings, fine_truth, 1);
  double top5 = eval::top_k_accuracy(rankings, fine_truth, top_k);

  // vocabulary frequencies per mission
  std::vector<kg::MissionText> texts;
  for (const auto& s : corpus.samples) {
    auto mit = l2m.find(s.packet.label);
    texts.push_back({mit == l2m.end() ? s.packet.label : mit->second, s.text.text});
  }
  auto vocab = kg::vocab_report(texts, size_t(config_.raw.get_int("eval.vocab_top_k", 10)));

  auto cost = eval::cost_report(model, contexts);

  nlohmann::ordered_json mj;
  mj["config_fingerprint"] = config_.config_hash();
  mj["counts"] = {{"train", coarse_train.records.size()}, {"test", coarse_test.records.size()}};
  mj["classes"] = model.classes;
  auto auc_block = [](const std::map<std::string, double>& per_class, double mauc,
                      const std::vector<std::string>& excluded) {
    nlohmann::ordered_json b;
    b["per_class"] = per_class;
    b["mauc"] = mauc;
    b["excluded"] = excluded;
    return b;
  };
  mj["auc"]["packetclip_gnn"] =
      auc_block(reasoner_metrics.per_class_auc, reasoner_metrics.mauc,
                reasoner_metrics.excluded_classes);
  mj["auc"]["logistic_probe"] = auc_block(probe.per_class_auc, probe.mauc, {});
  mj["zero_shot"] = {{"top1", top1}, {"top5", top5}, {"k", top_k},
                     {"classes", ds.seq.class_set}};
  nlohmann::ordered_json vj = nlohmann::ordered_json::object();
  for (const auto& [mission, rows] : vocab.per_mission) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& row : rows) arr.push_back({row.token, row.count});
    vj[mission] = std::move(arr);
  }
  mj["vocab"] = std::move(vj);
  mj["cost"] = {{"param_count", cost.param_count},
                {"flops_per_forward", cost.flops_per_forward},
                {"convention", cost.convention},
                {"param_breakdown", cost.param_breakdown},
                {"flops_breakdown", cost.flops_breakdown}};
  write_text_file(artifact("metrics.json"), mj.dump(2) + "\n");

  std::ostringstream scores;
  for (size_t i = 0; i < coarse_test.records.size(); ++i) {
    nlohmann::ordered_json row;
    row["ts"] = coarse_test.records[i].ts_us;
    nlohmann::ordered_json sm = nlohmann::ordered_json::object();
    for (size_t c = 0; c < model.classes.size(); ++c)
      sm[model.classes[c]] = probs.at(int(i), int(c));
    row["scores"] = std::move(sm);
    row["label"] = coarse_test.records[i].label;
    scores << row.dump() << "\n";
  }
  write_text_file(artifact("eval_scores.jsonl"), scores.str());
  record_stage("evaluate", {"metrics.json", "eval_scores.jsonl"});
}

void Pipeline::stage_infer() {
  Dataset ds = load_dataset();
  auto kgs = load_kgs();
  auto heads = contrastive::load_heads(artifact("heads.json"));
  auto model = reason::load_model(artifact("model.json"));
  auto l2m = config_.label_to_mission(ds.seq.class_set);

  auto text_enc = make_text_encoder(config_);
  auto packet_enc = make_packet_encoder(config_);
  std::vector<reason::MissionContext> contexts;
  for (const auto& [mission, graph] : kgs)
    contexts.push_back(reason::make_mission_context(graph, heads, text_enc, model.config));

  auto coarse = to_coarse(ds.seq, l2m);
  Mat probs = reason::infer_stream(coarse, model, contexts, heads, packet_enc);

  std::ostringstream scores;
  for (size_t i = 0; i < coarse.records.size(); ++i) {
    nlohmann::ordered_json row;
    row["ts"] = coarse.records[i].ts_us;
    nlohmann::ordered_json sm = nlohmann::ordered_json::object();
    for (size_t c = 0; c < model.classes.size(); ++c)
      sm[model.classes[c]] = probs.at(int(i), int(c));
    row["scores"] = std::move(sm);
    row["label"] = coarse.records[i].label;
    scores << row.dump() << "\n";
  }
  write_text_file(artifact("scores.jsonl"), scores.str());
  record_stage("infer", {"scores.jsonl"});
}

// ---------------------------------------------------------------------------
// sweep, cost, report

std::vector<eval::SweepPoint> run_sweep(const PipelineConfig& config, const std::string& out_dir,
                                        const std::vector<double>& fractions) {
  Pipeline bootstrap(config, out_dir);
  // data, graphs and corpus are fraction-independent
  if (!fs::exists(fs::path(out_dir) / "dataset.json")) bootstrap.run_stage("ingest");
  if (!fs::exists(fs::path(out_dir) / "kgs.json")) bootstrap.run_stage("kg");
  if (!fs::exists(fs::path(out_dir) / "corpus.jsonl")) bootstrap.run_stage("corpus");

  auto ds = dataset_from_json(
      read_json_file((fs::path(out_dir) / "dataset.json").string(), "dataset artifact"));
  auto corpus = textgen::load_corpus_jsonl((fs::path(out_dir) / "corpus.jsonl").string());
  auto kgs_json = read_json_file((fs::path(out_dir) / "kgs.json").string(), "kg artifact");
  std::map<std::string, kg::KnowledgeGraph> kgs;
  for (const auto& [mission, gj] : kgs_json.items()) kgs[mission] = kg::kg_from_json(gj);
  auto l2m = config.label_to_mission(ds.seq.class_set);
  auto coarse_all = to_coarse(ds.seq, l2m);

  auto run_fn = [&](const ingest::SplitResult& split, double) {
    TrainedStack stack;
    auto pre = pretrain_for_split(config, corpus, split.train_indices);
    stack.heads = std::move(pre.heads);
    auto coarse_train = to_coarse(split.train, l2m);
    auto trained = train_for_split(config, stack.heads, kgs, coarse_train, coarse_all.class_set,
                                   &stack.contexts);
    stack.model = std::move(trained.model);
    return mauc_for_stack(config, stack, to_coarse(split.test, l2m));
  };

  auto curve = eval::scarcity_sweep(ds.seq, fractions, config.seed(), run_fn);

  nlohmann::ordered_json sj = nlohmann::ordered_json::array();
  std::ostringstream csv;
  csv << "fraction,mauc,failed,error\n";
  for (const auto& p : curve) {
    sj.push_back({{"fraction", p.fraction},
                  {"mauc", p.mauc},
                  {"failed", p.failed},
                  {"error", p.error}});
    csv << p.fraction << "," << p.mauc << "," << (p.failed ? 1 : 0) << "," << p.error << "\n";
  }
  write_text_file((fs::path(out_dir) / "sweep.json").string(), sj.dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "sweep.csv").string(), csv.str());
  return curve;
}

nlohmann::ordered_json cost_json(const PipelineConfig& config) {
  auto rcfg = config.reasoner_config();
  std::vector<std::string> missions = config.raw.get_list("missions");
  if (missions.empty()) missions = {"brute_force", "dos", "reconnaissance"};

  ProviderConfig stub;
  stub.kind = ProviderConfig::Kind::stub;
  stub.seed = mix_seed(config.seed(), "provider:concepts");
  int v = int(config.raw.get_int("kg.v", 10));
  int n = int(config.raw.get_int("kg.n", 2));

  std::vector<reason::MissionContext> contexts;
  for (const auto& mission : missions) {
    auto graph = kg::generate_graph(mission, v, n, stub);
    contexts.push_back(reason::make_context_structure(graph, rcfg.embed_dim));
  }

  int classes = int(config.raw.get_int("eval.cost_classes", 4));
  std::vector<std::string> class_names;
  for (int i = 0; i < classes; ++i) class_names.push_back("class" + std::to_string(i));
  auto model = reason::ReasonModel::init(rcfg, missions, class_names, config.seed());
  auto cost = eval::cost_report(model, contexts);

  nlohmann::ordered_json j;
  j["param_count"] = cost.param_count;
  j["flops_per_forward"] = cost.flops_per_forward;
  j["convention"] = cost.convention;
  j["param_breakdown"] = cost.param_breakdown;
  j["flops_breakdown"] = cost.flops_breakdown;
  j["shape"] = {{"missions", missions.size()},
                {"classes", classes},
                {"d", rcfg.feature_dim},
                {"layers", rcfg.gnn_layers},
                {"d_model", rcfg.d_model},
                {"heads", rcfg.heads},
                {"head_dim", rcfg.head_dim},
                {"ffn_dim", rcfg.ffn_dim},
                {"depth", rcfg.depth},
                {"window", rcfg.window}};
  return j;
}

std::string render_report(const std::string& artifact_dir) {
  std::string mpath = (fs::path(artifact_dir) / "metrics.json").string();
  if (!fs::exists(mpath)) fail(Err::io, "missing evaluation artifact: " + mpath);
  auto mj = read_json_file(mpath, "metrics");

  std::ostringstream out;
  out << "== AUC by class (one-vs-rest) ==\n";
  auto classes = mj.at("classes").get<std::vector<std::string>>();
  out << "model";
  for (const auto& c : classes) out << "," << c;
  out << ",mAUC\n";
  for (const auto& model : {"logistic_probe", "packetclip_gnn"}) {
    const auto& block = mj.at("auc").at(model);
    out << model;
    char buf[32];
    for (const auto& c : classes) {
      if (block.at("per_class").contains(c)) {
        std::snprintf(buf, sizeof(buf), "%.3f", block.at("per_class").at(c).get<double>());
        out << "," << buf;
      } else {
        out << ",-";
      }
    }
    std::snprintf(buf, sizeof(buf), "%.3f", block.at("mauc").get<double>());
    out << "," << buf << "\n";
  }

  out << "\n== Zero-shot accuracy ==\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "top-1,%.3f\ntop-%d,%.3f\n",
                mj.at("zero_shot").at("top1").get<double>(), mj.at("zero_shot").at("k").get<int>(),
                mj.at("zero_shot").at("top5").get<double>());
  out << buf;

  out << "\n== Term frequency (per mission) ==\n";
  for (const auto& [mission, rows] : mj.at("vocab").items()) {
    out << "[" << mission << "]";
    for (const auto& row : rows)
      out << " " << row.at(0).get<std::string>() << ":" << row.at(1).get<long long>();
    out << "\n";
  }

  out << "\n== Cost ==\n";
  out << "parameters," << mj.at("cost").at("param_count").get<long long>() << "\n";
  out << "flops_per_forward," << mj.at("cost").at("flops_per_forward").get<long long>() << " ("
      << mj.at("cost").at("convention").get<std::string>() << ")\n";

  std::string spath = (fs::path(artifact_dir) / "sweep.json").string();
  if (fs::exists(spath)) {
    auto sj = read_json_file(spath, "sweep");
    out << "\n== Data scarcity (fraction -> mAUC) ==\n";
    for (const auto& p : sj) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.3f%s\n", p.at("fraction").get<double>(),
                    p.at("mauc").get<double>(), p.at("failed").get<bool>() ? ",FAILED" : "");
      out << buf;
    }
  }
  return out.str();
}

}  // namespace packetclip::pipeline

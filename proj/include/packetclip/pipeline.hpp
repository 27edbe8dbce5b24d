#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "packetclip/contrastive.hpp"
#include "packetclip/eval.hpp"
#include "packetclip/ingest.hpp"
#include "packetclip/kvconfig.hpp"
#include "packetclip/reason.hpp"
#include "packetclip/textgen.hpp"

namespace packetclip::pipeline {

// One declarative key-value file drives every stage; §-style hyperparameters
// carry their published defaults.
struct PipelineConfig {
  KvConfig raw;

  static PipelineConfig from_file(const std::string& path);
  static PipelineConfig from_text(const std::string& text);

  uint64_t seed() const { return uint64_t(raw.get_int("seed", 42)); }
  std::string config_hash() const;

  ProviderConfig provider(const std::string& role) const;  // role: concepts|paraphrase
  contrastive::TrainConfig contrastive_config() const;
  reason::ReasonerConfig reasoner_config() const;
  reason::ReasonTrainConfig reasoner_train_config() const;

  // fine label -> coarse group (mission or benign); explicit grouping.* keys
  // override the built-in attack-family mapping
  std::map<std::string, std::string> label_to_mission(
      const std::vector<std::string>& labels) const;

  std::vector<double> sweep_fractions() const;
};

struct Dataset {
  ingest::LabeledSequence seq;  // fine-grained labels
  std::vector<ingest::FlowRecord> flows;
  std::vector<int> flow_of_packet;
  size_t align_matched = 0;
  size_t align_unmatched = 0;
};

nlohmann::ordered_json dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const nlohmann::json& j);

// Pipeline stages in execution order: ingest, kg, corpus, pretrain, train,
// evaluate. Artifacts and their content hashes are tracked in manifest.json;
// a stage is skipped on resume when the manifest entry matches the current
// config hash and the artifact bytes are unchanged.
class Pipeline {
public:
  Pipeline(PipelineConfig config, std::string out_dir);

  static const std::vector<std::string>& stage_order();

  // returns the names of stages that actually executed
  std::vector<std::string> run(bool resume);
  void run_stage(const std::string& name);

  const std::string& out_dir() const { return out_dir_; }

private:
  void stage_ingest();
  void stage_kg();
  void stage_corpus();
  void stage_pretrain();
  void stage_train();
  void stage_evaluate();
  void stage_infer();

  bool stage_is_fresh(const std::string& name) const;
  void record_stage(const std::string& name, const std::vector<std::string>& artifacts);
  std::string artifact(const std::string& name) const;

  Dataset load_dataset() const;
  std::map<std::string, kg::KnowledgeGraph> load_kgs() const;

  PipelineConfig config_;
  std::string out_dir_;
  nlohmann::json manifest_;
};

// Standalone evaluation products
struct EvalArtifacts {
  eval::MetricReport reasoner;
  eval::ProbeResult probe;
  double zero_shot_top1 = 0;
  double zero_shot_top5 = 0;
  eval::CostReport cost;
};

// `report` renders metrics.json (+ sweep.csv when present) as fixed-layout
// text tables; missing artifacts are named in the error.
std::string render_report(const std::string& artifact_dir);

// Fractions swept against the fixed test split; writes sweep.json + sweep.csv.
std::vector<eval::SweepPoint> run_sweep(const PipelineConfig& config, const std::string& out_dir,
                                        const std::vector<double>& fractions);

// Parameter/FLOP accounting for the configured model shape (stub graphs).
nlohmann::ordered_json cost_json(const PipelineConfig& config);

uint64_t file_fnv(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace packetclip::pipeline

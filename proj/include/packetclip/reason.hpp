#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "packetclip/autodiff.hpp"
#include "packetclip/contrastive.hpp"
#include "packetclip/embed.hpp"
#include "packetclip/ingest.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/mat.hpp"

namespace packetclip::reason {

enum class Activation { tanh, identity };
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct ReasonerConfig {
  int feature_dim = 8;   // per-node feature width D
  int gnn_layers = 3;    // L
  int embed_dim = 128;   // adapter input width; must match the heads' output
  int d_model = 128;
  int heads = 8;
  int head_dim = 8;      // attention width = heads * head_dim
  int ffn_dim = 64;
  int depth = 1;         // transformer layers
  int window = 30;       // A
  int cls_hidden = 64;
  Activation activation = Activation::tanh;
  // project packet/concept embeddings onto the unit sphere before the
  // adapter; contrastive pretraining constrains directions only
  bool unit_embeddings = true;
};

struct MissionReasoner {
  std::string mission;
  Mat adapter_w;             // D x embed_dim, identity-slice init
  Mat adapter_b;             // 1 x D
  std::vector<Mat> layer_w;  // L of D x D
  std::vector<Mat> layer_b;  // L of 1 x D
};

struct TemporalLayer {
  Mat ln1_g, ln1_b;
  Mat wq, bq, wk, bk, wv, bv;  // (heads*head_dim) x d_model
  Mat wo, bo;                  // d_model x (heads*head_dim)
  Mat ln2_g, ln2_b;
  Mat ff1_w, ff1_b;            // ffn_dim x d_model
  Mat ff2_w, ff2_b;            // d_model x ffn_dim
};

struct TemporalHead {
  Mat in_w, in_b;  // d_model x (M*D)
  Mat pos;         // A x d_model, learned
  std::vector<TemporalLayer> layers;
  Mat lnf_g, lnf_b;
  Mat cls1_w, cls1_b;  // cls_hidden x d_model
  Mat cls2_w, cls2_b;  // C x cls_hidden
};

struct ReasonModel {
  ReasonerConfig config;
  std::vector<std::string> missions;
  std::vector<std::string> classes;
  std::vector<MissionReasoner> reasoners;  // parallel to missions
  TemporalHead temporal;

  static ReasonModel init(const ReasonerConfig& cfg, const std::vector<std::string>& missions,
                          const std::vector<std::string>& classes, uint64_t seed);

  // canonical order shared by the optimizer, the tape and the checkpoint
  std::vector<Mat*> parameters();
  std::vector<std::pair<std::string, const Mat*>> named_parameters() const;
  long long parameter_count() const;
  int class_index(const std::string& label) const;  // -1 if unknown
};

// A mission graph bound to its precomputed (projected) concept embeddings.
struct MissionContext {
  kg::KnowledgeGraph graph;
  std::vector<std::string> node_ids;       // sensor, concepts by (layer, index), embedding
  std::vector<std::vector<int>> preds;     // per node, predecessor positions
  int embedding_node = -1;
  Mat concept_base;                        // n_concepts x embed_dim
};

// Node ordering and predecessor lists only; concept_base left as zeros.
MissionContext make_context_structure(const kg::KnowledgeGraph& g, int embed_dim);

MissionContext make_mission_context(const kg::KnowledgeGraph& g, const contrastive::Heads& heads,
                                    const embed::BaseEncoder& text_encoder,
                                    const ReasonerConfig& cfg);

// Projected (and optionally unit-normalized) packet embedding, the reasoner's
// sensor input.
Mat packet_embedding(const std::vector<uint8_t>& payload, const contrastive::Heads& heads,
                     const embed::BaseEncoder& packet_encoder, const ReasonerConfig& cfg);

// ---------------------------------------------------------------------------
// per-operation reference path (single packet, explicit node map)

using FeatureAssignment = std::map<std::string, Mat>;  // node id -> 1 x D

// Sensor <- adapted packet embedding, concepts <- adapted text embeddings,
// embedding node <- all-ones (the multiplicative identity for Eq.-style
// element-wise aggregation).
FeatureAssignment init_node_features(const MissionContext& ctx, const std::vector<uint8_t>& payload,
                                     const contrastive::Heads& heads,
                                     const embed::BaseEncoder& packet_encoder,
                                     const MissionReasoner& reasoner, const ReasonerConfig& cfg);

// x <- W^(l) x + b^(l) on every node vector; l is 1-based.
FeatureAssignment layer_transform(const FeatureAssignment& fa, const MissionReasoner& reasoner,
                                  int l);

// Synchronous update: x_v <- mean_u phi(x_v_prev . x_u_prev) over predecessor
// nodes u; nodes without predecessors keep their value.
FeatureAssignment message_pass(const kg::KnowledgeGraph& g, const FeatureAssignment& fa, int l,
                               Activation activation);

// init -> repeat (transform; pass) for l=1..L per mission; concatenated
// embedding-node features in mission order.
Mat mission_forward(const std::vector<MissionContext>& contexts,
                    const std::vector<uint8_t>& payload, const ReasonModel& model,
                    const contrastive::Heads& heads, const embed::BaseEncoder& packet_encoder);

// Probability vector over classes from exactly A frame tokens.
Mat temporal_forward(const std::vector<Mat>& tokens, const ReasonModel& model);

// ---------------------------------------------------------------------------
// batched engine (training + streaming inference)

class Engine {
public:
  Engine(const ReasonModel* model, const std::vector<MissionContext>* contexts);

  struct Forward {
    ad::Tape tape;
    ad::NodeId tokens = -1;  // n_tokens x M*D
    ad::NodeId probs = -1;   // n_windows x C
    ad::NodeId loss = -1;    // scalar when labels supplied
    std::vector<ad::NodeId> params;  // parallel to model->parameters()
  };

  // packet_z rows are token positions (projected packet embeddings); windows
  // hold indices into those rows, each of length model config window.
  Forward forward(const Mat& packet_z, const std::vector<std::vector<int>>& windows,
                  const std::vector<int>* labels,
                  const std::vector<std::pair<int, int>>* smooth_pairs, double smoothing_lambda,
                  bool needs_grad) const;

  // forward-only helpers
  Mat tokens_for(const Mat& packet_z) const;
  Mat probs_for(const Mat& tokens, const std::vector<std::vector<int>>& windows) const;

private:
  ad::NodeId build_gnn_tokens(ad::Tape& tape, const std::vector<ad::NodeId>& params,
                              ad::NodeId packet_z) const;
  ad::NodeId build_temporal(ad::Tape& tape, const std::vector<ad::NodeId>& params,
                            ad::NodeId window_rows, int n_windows) const;
  std::vector<ad::NodeId> push_params(ad::Tape& tape, bool needs_grad) const;

  // canonical parameter offsets
  int mission_param_base(int mission) const;
  int temporal_param_base() const;

  const ReasonModel* model_;
  const std::vector<MissionContext>* contexts_;
};

// ---------------------------------------------------------------------------
// training and streaming

struct ReasonTrainConfig {
  double lr = 5.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.8;
  double epsilon = 1.0e-6;
  int steps = 3000;
  int batch = 128;       // windows per step
  int segment_len = 8;   // consecutive anchors per sampled segment
  double smoothing_lambda = 0.1;
  uint64_t seed = 0;
};

struct TrainResult {
  ReasonModel model;
  std::vector<double> loss_curve;
};

TrainResult train_reasoner(const ingest::LabeledSequence& train,
                           const std::vector<MissionContext>& contexts,
                           const contrastive::Heads& heads,
                           const embed::BaseEncoder& packet_encoder, const ReasonerConfig& rcfg,
                           const ReasonTrainConfig& tcfg, const std::vector<std::string>& classes);

// Window indices for anchor t over a stream of length n: positions
// t-A+1..t, left-padded by repeating the earliest position.
std::vector<int> window_indices(int anchor, int window);

// Per-packet class probabilities over a time-ordered sequence.
Mat infer_stream(const ingest::LabeledSequence& seq, const ReasonModel& model,
                 const std::vector<MissionContext>& contexts, const contrastive::Heads& heads,
                 const embed::BaseEncoder& packet_encoder);

nlohmann::ordered_json model_to_json(const ReasonModel& model);
ReasonModel model_from_json(const nlohmann::json& j);
void save_model(const ReasonModel& model, const std::string& path);
ReasonModel load_model(const std::string& path);

}  // namespace packetclip::reason

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "packetclip/embed.hpp"
#include "packetclip/mat.hpp"
#include "packetclip/textgen.hpp"

namespace packetclip::contrastive {

enum class DenominatorMode {
  standard,       // positive included in the denominator (SimCLR-style)
  paper_literal,  // denominator over negatives only
};

enum class SslMode { none, packet_only, both };

DenominatorMode denominator_from_string(const std::string& s);
SslMode ssl_mode_from_string(const std::string& s);
std::string to_string(DenominatorMode m);
std::string to_string(SslMode m);

struct TrainConfig {
  double lr = 5.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.8;
  double epsilon = 1.0e-6;
  int steps = 3000;
  int batch = 128;
  double tau = 0.07;
  DenominatorMode denominator = DenominatorMode::standard;
  SslMode ssl_mode = SslMode::both;
  uint64_t seed = 0;
  int embed_dim = 128;
};

// Single-pair InfoNCE at given temperature.
double info_nce(const Mat& z_t, const Mat& z_p_pos, const std::vector<Mat>& negatives, double tau,
                DenominatorMode mode);

// Trainable head pair; identity heads stand in for disabled sides.
struct Heads {
  embed::ProjectionHead text;
  embed::ProjectionHead packet;
  SslMode mode = SslMode::both;

  Mat project_text(const Mat& base) const { return embed::project(base, text); }
  Mat project_packet(const Mat& base) const { return embed::project(base, packet); }

  static Heads init(SslMode mode, int embed_dim, int text_base_dim, int packet_base_dim,
                    uint64_t seed);
};

struct ContrastiveBatch {
  Mat text_base;    // B x text_base_dim
  Mat packet_base;  // B x packet_base_dim; row i is the positive for text row i
};

struct HeadGrads {
  bool has_text = false;
  bool has_packet = false;
  Mat d_text_w, d_text_b;
  Mat d_packet_w, d_packet_b;
};

// Mean in-batch InfoNCE; row i's negatives are the other packet rows.
double batch_loss(const ContrastiveBatch& batch, const Heads& heads, double tau,
                  DenominatorMode mode);

// Exact analytic gradient of batch_loss w.r.t. the trainable head parameters.
HeadGrads info_nce_grad(const ContrastiveBatch& batch, const Heads& heads, double tau,
                        DenominatorMode mode, double* loss_out = nullptr);

struct PretrainResult {
  Heads heads;
  std::vector<double> loss_curve;  // one entry per step
};

PretrainResult pretrain_heads(const textgen::PairedCorpus& corpus,
                              const embed::BaseEncoder& text_encoder,
                              const embed::BaseEncoder& packet_encoder, const TrainConfig& config);

// Labels ranked by cosine between the projected packet embedding and each
// projected class-prompt embedding; ties break by prompt order.
std::vector<std::string> zero_shot_classify(
    const std::vector<uint8_t>& payload, const Heads& heads,
    const embed::BaseEncoder& text_encoder, const embed::BaseEncoder& packet_encoder,
    const std::vector<std::pair<std::string, std::string>>& class_prompts, int k);

nlohmann::ordered_json heads_to_json(const Heads& heads);
Heads heads_from_json(const nlohmann::json& j);
void save_heads(const Heads& heads, const std::string& path);
Heads load_heads(const std::string& path);

}  // namespace packetclip::contrastive

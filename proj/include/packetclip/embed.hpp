#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "packetclip/mat.hpp"

namespace packetclip::embed {

struct BaseEncoderConfig {
  enum class Modality { packet, text };
  enum class Kind { hashed_ngram, external_import };
  Modality modality = Modality::packet;
  Kind kind = Kind::hashed_ngram;
  int output_dim = 512;
  std::string vectors_path;  // external_import: JSONL {"id":..., "vec":[...]}
};

// Frozen deterministic feature extractor. The hashed-ngram default stands in
// for a pretrained encoder; external_import replays vectors computed offline
// by a real one, keyed by content digest.
class BaseEncoder {
public:
  explicit BaseEncoder(BaseEncoderConfig cfg);

  Mat encode_packet(const std::vector<uint8_t>& payload, bool* empty_warn = nullptr) const;
  Mat encode_text(const std::string& text, bool* empty_warn = nullptr) const;

  int output_dim() const { return cfg_.output_dim; }
  BaseEncoderConfig::Modality modality() const { return cfg_.modality; }

  static std::string packet_id(const std::vector<uint8_t>& payload);
  static std::string text_id(const std::string& text);

private:
  Mat lookup(const std::string& id) const;

  BaseEncoderConfig cfg_;
  std::unordered_map<std::string, std::vector<double>> imported_;
};

struct ProjectionHead {
  Mat weight;  // embed_dim x input_dim
  Mat bias;    // 1 x embed_dim
  bool identity = false;
  uint64_t seed = 0;

  int input_dim() const { return weight.cols(); }
  int embed_dim() const { return weight.rows(); }

  static ProjectionHead init(int embed_dim, int input_dim, uint64_t seed);
  static ProjectionHead make_identity(int dim);
};

// weight * base + bias; raises shape-error on dimension mismatch
Mat project(const Mat& base, const ProjectionHead& head);

// Cosine similarity of row vectors; zero-input convention: returns 0 and sets
// the flag instead of dividing by zero.
double cosine(const Mat& a, const Mat& b, bool* zero_flag = nullptr);

nlohmann::ordered_json head_to_json(const ProjectionHead& head);
ProjectionHead head_from_json(const nlohmann::json& j);

}  // namespace packetclip::embed

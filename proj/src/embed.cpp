#include "packetclip/embed.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "packetclip/error.hpp"
#include "packetclip/kvconfig.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::embed {

namespace {

void l2_normalize(Mat& v) {
  double n = v.frob_norm();
  if (n == 0.0) return;
  for (auto& x : v.values()) x /= n;
}

size_t bucket_of(const void* data, size_t len, uint64_t tag, int dim) {
  uint64_t h = fnv1a64(data, len);
  h = mix_seed(h, tag);
  return size_t(h % uint64_t(dim));
}

}  // namespace

BaseEncoder::BaseEncoder(BaseEncoderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.output_dim < 1) fail(Err::config, "encoder output_dim must be >= 1");
  if (cfg_.kind == BaseEncoderConfig::Kind::external_import) {
    std::ifstream in(cfg_.vectors_path);
    if (!in) fail(Err::io, "cannot open precomputed vectors: " + cfg_.vectors_path);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line);
      auto id = j.at("id").get<std::string>();
      auto vec = j.at("vec").get<std::vector<double>>();
      if (int(vec.size()) != cfg_.output_dim)
        fail(Err::shape, "imported vector for id '" + id + "' has dim " +
                             std::to_string(vec.size()) + ", expected " +
                             std::to_string(cfg_.output_dim));
      imported_[id] = std::move(vec);
    }
  }
}

std::string BaseEncoder::packet_id(const std::vector<uint8_t>& payload) {
  return "p:" + hex64(fnv1a64(payload.data(), payload.size()));
}

std::string BaseEncoder::text_id(const std::string& text) {
  return "t:" + hex64(fnv1a64(text));
}

Mat BaseEncoder::lookup(const std::string& id) const {
  auto it = imported_.find(id);
  if (it == imported_.end())
    fail(Err::state, "no imported vector for sample id '" + id + "'");
  return Mat(1, cfg_.output_dim, it->second);
}

Mat BaseEncoder::encode_packet(const std::vector<uint8_t>& payload, bool* empty_warn) const {
  if (cfg_.modality != BaseEncoderConfig::Modality::packet)
    fail(Err::state, "encoder modality is not packet");
  if (empty_warn) *empty_warn = false;
  if (payload.empty()) {
    if (empty_warn) *empty_warn = true;
    return Mat(1, cfg_.output_dim);
  }
  if (cfg_.kind == BaseEncoderConfig::Kind::external_import) return lookup(packet_id(payload));

  Mat v(1, cfg_.output_dim);
  double* out = v.data();
  for (size_t i = 0; i < payload.size(); ++i)
    out[bucket_of(&payload[i], 1, 0x11, cfg_.output_dim)] += 1.0;
  for (size_t i = 0; i + 1 < payload.size(); ++i)
    out[bucket_of(&payload[i], 2, 0x22, cfg_.output_dim)] += 1.0;
  l2_normalize(v);
  return v;
}

Mat BaseEncoder::encode_text(const std::string& text, bool* empty_warn) const {
  if (cfg_.modality != BaseEncoderConfig::Modality::text)
    fail(Err::state, "encoder modality is not text");
  if (empty_warn) *empty_warn = false;
  auto tokens = kg::tokenize_words(text);
  if (tokens.empty()) {
    if (empty_warn) *empty_warn = true;
    return Mat(1, cfg_.output_dim);
  }
  if (cfg_.kind == BaseEncoderConfig::Kind::external_import) return lookup(text_id(text));

  Mat v(1, cfg_.output_dim);
  double* out = v.data();
  for (const auto& tok : tokens)
    out[bucket_of(tok.data(), tok.size(), 0x33, cfg_.output_dim)] += 1.0;
  for (size_t i = 0; i + 1 < tokens.size(); ++i) {
    std::string bigram = tokens[i] + " " + tokens[i + 1];
    out[bucket_of(bigram.data(), bigram.size(), 0x44, cfg_.output_dim)] += 1.0;
  }
  l2_normalize(v);
  return v;
}

ProjectionHead ProjectionHead::init(int embed_dim, int input_dim, uint64_t seed) {
  if (embed_dim < 1 || input_dim < 1) fail(Err::config, "projection head dims must be >= 1");
  ProjectionHead head;
  head.seed = seed;
  Rng rng(mix_seed(seed, "head-init"));
  double bound = 1.0 / std::sqrt(double(input_dim));
  head.weight = Mat::random_uniform(embed_dim, input_dim, -bound, bound, rng);
  head.bias = Mat(1, embed_dim);
  return head;
}

ProjectionHead ProjectionHead::make_identity(int dim) {
  ProjectionHead head;
  head.identity = true;
  head.weight = Mat::identity(dim);
  head.bias = Mat(1, dim);
  return head;
}

Mat project(const Mat& base, const ProjectionHead& head) {
  if (base.cols() != head.weight.cols() || base.rows() != 1)
    fail(Err::shape, "projection input dim " + std::to_string(base.cols()) +
                         " does not match head input dim " + std::to_string(head.weight.cols()));
  if (head.identity) return base;
  Mat out = matmul_nt(base, head.weight);  // (1 x in)(in x embed)^T form
  axpy(out, 1.0, head.bias);
  return out;
}

double cosine(const Mat& a, const Mat& b, bool* zero_flag) {
  if (a.size() != b.size()) fail(Err::shape, "cosine dim mismatch");
  if (zero_flag) *zero_flag = false;
  double na = a.frob_norm();
  double nb = b.frob_norm();
  if (na == 0.0 || nb == 0.0) {
    if (zero_flag) *zero_flag = true;
    return 0.0;
  }
  return dot(a, b) / (na * nb);
}

nlohmann::ordered_json head_to_json(const ProjectionHead& head) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["embed_dim"] = head.weight.rows();
  j["input_dim"] = head.weight.cols();
  j["seed"] = head.seed;
  j["identity"] = head.identity;
  auto w = nlohmann::ordered_json::array();
  for (int r = 0; r < head.weight.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (int c = 0; c < head.weight.cols(); ++c) row.push_back(head.weight.at(r, c));
    w.push_back(std::move(row));
  }
  j["weight"] = std::move(w);
  auto b = nlohmann::ordered_json::array();
  for (int c = 0; c < head.bias.cols(); ++c) b.push_back(head.bias.at(0, c));
  j["bias"] = std::move(b);
  return j;
}

ProjectionHead head_from_json(const nlohmann::json& j) {
  int version = j.at("version").get<int>();
  if (version != 1) fail(Err::state, "unsupported head checkpoint version " + std::to_string(version));
  int embed_dim = j.at("embed_dim").get<int>();
  int input_dim = j.at("input_dim").get<int>();
  ProjectionHead head;
  head.seed = j.value("seed", uint64_t(0));
  head.identity = j.value("identity", false);
  head.weight = Mat(embed_dim, input_dim);
  const auto& w = j.at("weight");
  if (int(w.size()) != embed_dim) fail(Err::shape, "head weight row count mismatch");
  for (int r = 0; r < embed_dim; ++r) {
    const auto& row = w.at(size_t(r));
    if (int(row.size()) != input_dim) fail(Err::shape, "head weight col count mismatch");
    for (int c = 0; c < input_dim; ++c) head.weight.at(r, c) = row.at(size_t(c)).get<double>();
  }
  const auto& b = j.at("bias");
  if (int(b.size()) != embed_dim) fail(Err::shape, "head bias size mismatch");
  head.bias = Mat(1, embed_dim);
  for (int c = 0; c < embed_dim; ++c) head.bias.at(0, c) = b.at(size_t(c)).get<double>();
  return head;
}

}  // namespace packetclip::embed

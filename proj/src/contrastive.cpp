#include "packetclip/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "packetclip/autodiff.hpp"
#include "packetclip/error.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::contrastive {

DenominatorMode denominator_from_string(const std::string& s) {
  if (s == "standard") return DenominatorMode::standard;
  if (s == "paper-literal" || s == "paper_literal") return DenominatorMode::paper_literal;
  fail(Err::config, "unknown denominator mode: " + s);
}

SslMode ssl_mode_from_string(const std::string& s) {
  if (s == "none") return SslMode::none;
  if (s == "packet-only" || s == "packet_only") return SslMode::packet_only;
  if (s == "both") return SslMode::both;
  fail(Err::config, "unknown ssl mode: " + s);
}

std::string to_string(DenominatorMode m) {
  return m == DenominatorMode::standard ? "standard" : "paper-literal";
}

std::string to_string(SslMode m) {
  switch (m) {
    case SslMode::none: return "none";
    case SslMode::packet_only: return "packet-only";
    case SslMode::both: return "both";
  }
  return "both";
}

// ---------------------------------------------------------------------------
// single-pair loss

double info_nce(const Mat& z_t, const Mat& z_p_pos, const std::vector<Mat>& negatives, double tau,
                DenominatorMode mode) {
  if (tau <= 0.0) fail(Err::config, "temperature must be > 0");
  if (negatives.empty()) fail(Err::config, "info_nce requires at least one negative");

  const double s_pos = embed::cosine(z_t, z_p_pos) / tau;
  std::vector<double> scores;
  scores.reserve(negatives.size() + 1);
  if (mode == DenominatorMode::standard) scores.push_back(s_pos);
  for (const auto& z : negatives) scores.push_back(embed::cosine(z_t, z) / tau);

  double max_s = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (double s : scores) z += std::exp(s - max_s);
  return -(s_pos - (max_s + std::log(z)));
}

// ---------------------------------------------------------------------------
// heads

Heads Heads::init(SslMode mode, int embed_dim, int text_base_dim, int packet_base_dim,
                  uint64_t seed) {
  Heads heads;
  heads.mode = mode;
  switch (mode) {
    case SslMode::both:
      heads.text = embed::ProjectionHead::init(embed_dim, text_base_dim, mix_seed(seed, "text"));
      heads.packet =
          embed::ProjectionHead::init(embed_dim, packet_base_dim, mix_seed(seed, "packet"));
      break;
    case SslMode::packet_only:
      // shared space = raw text feature space
      heads.text = embed::ProjectionHead::make_identity(text_base_dim);
      heads.packet =
          embed::ProjectionHead::init(text_base_dim, packet_base_dim, mix_seed(seed, "packet"));
      break;
    case SslMode::none:
      if (text_base_dim != packet_base_dim)
        fail(Err::config, "ssl mode 'none' needs equal base encoder dims for cosine");
      heads.text = embed::ProjectionHead::make_identity(text_base_dim);
      heads.packet = embed::ProjectionHead::make_identity(packet_base_dim);
      break;
  }
  return heads;
}

// ---------------------------------------------------------------------------
// batch loss and analytic gradient

namespace {

struct BatchForward {
  Mat zt;        // B x e, projected
  Mat zp;        // B x e
  Mat zt_hat;    // row-normalized
  Mat zp_hat;
  std::vector<double> nt;  // row norms
  std::vector<double> np;
  Mat scores;    // B x B cosine / tau
  double loss = 0;
};

Mat apply_head(const Mat& base, const embed::ProjectionHead& head) {
  if (head.identity) return base;
  Mat out = matmul_nt(base, head.weight);
  for (int r = 0; r < out.rows(); ++r) {
    double* row = out.row(r);
    const double* bias = head.bias.row(0);
    for (int c = 0; c < out.cols(); ++c) row[c] += bias[c];
  }
  return out;
}

void normalize_rows(const Mat& z, Mat* z_hat, std::vector<double>* norms) {
  *z_hat = z;
  norms->assign(size_t(z.rows()), 0.0);
  for (int r = 0; r < z.rows(); ++r) {
    double* row = z_hat->row(r);
    double n = 0;
    for (int c = 0; c < z.cols(); ++c) n += row[c] * row[c];
    n = std::sqrt(n);
    (*norms)[size_t(r)] = n;
    if (n > 0)
      for (int c = 0; c < z.cols(); ++c) row[c] /= n;
  }
}

BatchForward forward_batch(const ContrastiveBatch& batch, const Heads& heads, double tau,
                           DenominatorMode mode) {
  if (tau <= 0.0) fail(Err::config, "temperature must be > 0");
  const int b = batch.text_base.rows();
  if (b != batch.packet_base.rows()) fail(Err::shape, "contrastive batch size mismatch");
  if (b < 2) fail(Err::config, "contrastive batch needs at least 2 rows");

  BatchForward f;
  f.zt = apply_head(batch.text_base, heads.text);
  f.zp = apply_head(batch.packet_base, heads.packet);
  if (f.zt.cols() != f.zp.cols()) fail(Err::shape, "projected embedding dims differ");
  normalize_rows(f.zt, &f.zt_hat, &f.nt);
  normalize_rows(f.zp, &f.zp_hat, &f.np);
  f.scores = matmul_nt(f.zt_hat, f.zp_hat);
  for (auto& v : f.scores.values()) v /= tau;

  double total = 0;
  for (int i = 0; i < b; ++i) {
    const double* row = f.scores.row(i);
    double max_s = -1e300;
    for (int j = 0; j < b; ++j) {
      if (mode == DenominatorMode::paper_literal && j == i) continue;
      max_s = std::max(max_s, row[j]);
    }
    double z = 0;
    for (int j = 0; j < b; ++j) {
      if (mode == DenominatorMode::paper_literal && j == i) continue;
      z += std::exp(row[j] - max_s);
    }
    total += (max_s + std::log(z)) - row[i];
  }
  f.loss = total / b;
  return f;
}

}  // namespace

double batch_loss(const ContrastiveBatch& batch, const Heads& heads, double tau,
                  DenominatorMode mode) {
  return forward_batch(batch, heads, tau, mode).loss;
}

HeadGrads info_nce_grad(const ContrastiveBatch& batch, const Heads& heads, double tau,
                        DenominatorMode mode, double* loss_out) {
  BatchForward f = forward_batch(batch, heads, tau, mode);
  if (loss_out) *loss_out = f.loss;
  const int b = f.scores.rows();
  const int e = f.zt.cols();

  // dL/dS
  Mat ds(b, b);
  for (int i = 0; i < b; ++i) {
    const double* row = f.scores.row(i);
    double* dr = ds.row(i);
    double max_s = -1e300;
    for (int j = 0; j < b; ++j) {
      if (mode == DenominatorMode::paper_literal && j == i) continue;
      max_s = std::max(max_s, row[j]);
    }
    double z = 0;
    for (int j = 0; j < b; ++j) {
      if (mode == DenominatorMode::paper_literal && j == i) continue;
      z += std::exp(row[j] - max_s);
    }
    for (int j = 0; j < b; ++j) {
      double soft = (mode == DenominatorMode::paper_literal && j == i)
                        ? 0.0
                        : std::exp(row[j] - max_s) / z;
      dr[j] = (soft - (j == i ? 1.0 : 0.0)) / (double(b) * tau);
    }
  }

  // through the cosine similarity matrix C = zt_hat zp_hat^T
  Mat dzt_hat = matmul(ds, f.zp_hat);     // B x e
  Mat dzp_hat = matmul_tn(ds, f.zt_hat);  // B x e

  auto unnormalize = [e](const Mat& d_hat, const Mat& hat, const std::vector<double>& norms) {
    Mat dz(d_hat.rows(), e);
    for (int r = 0; r < d_hat.rows(); ++r) {
      double n = norms[size_t(r)];
      if (n == 0) continue;  // zero embedding: cosine fixed at 0, no gradient
      const double* dh = d_hat.row(r);
      const double* h = hat.row(r);
      double proj = 0;
      for (int c = 0; c < e; ++c) proj += dh[c] * h[c];
      double* dr = dz.row(r);
      for (int c = 0; c < e; ++c) dr[c] = (dh[c] - proj * h[c]) / n;
    }
    return dz;
  };

  Mat dzt = unnormalize(dzt_hat, f.zt_hat, f.nt);
  Mat dzp = unnormalize(dzp_hat, f.zp_hat, f.np);

  HeadGrads grads;
  if (!heads.text.identity) {
    grads.has_text = true;
    grads.d_text_w = matmul_tn(dzt, batch.text_base);
    grads.d_text_b = Mat(1, e);
    for (int r = 0; r < b; ++r)
      for (int c = 0; c < e; ++c) grads.d_text_b.at(0, c) += dzt.at(r, c);
  }
  if (!heads.packet.identity) {
    grads.has_packet = true;
    grads.d_packet_w = matmul_tn(dzp, batch.packet_base);
    grads.d_packet_b = Mat(1, e);
    for (int r = 0; r < b; ++r)
      for (int c = 0; c < e; ++c) grads.d_packet_b.at(0, c) += dzp.at(r, c);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// pretraining

PretrainResult pretrain_heads(const textgen::PairedCorpus& corpus,
                              const embed::BaseEncoder& text_encoder,
                              const embed::BaseEncoder& packet_encoder,
                              const TrainConfig& config) {
  const int n = int(corpus.samples.size());
  if (config.batch < 2) fail(Err::config, "pretraining batch must be >= 2");
  if (n < config.batch) fail(Err::config, "corpus smaller than one batch");
  if (config.steps < 1) fail(Err::config, "pretraining needs steps >= 1");
  if (config.tau <= 0) fail(Err::config, "temperature must be > 0");

  // base encodings are frozen; compute once
  Mat text_base(n, text_encoder.output_dim());
  Mat packet_base(n, packet_encoder.output_dim());
  for (int i = 0; i < n; ++i) {
    Mat t = text_encoder.encode_text(corpus.samples[size_t(i)].text.text);
    Mat p = packet_encoder.encode_packet(corpus.samples[size_t(i)].packet.payload);
    std::copy(t.data(), t.data() + t.size(), text_base.row(i));
    std::copy(p.data(), p.data() + p.size(), packet_base.row(i));
  }

  PretrainResult result;
  result.heads = Heads::init(config.ssl_mode, config.embed_dim, text_encoder.output_dim(),
                             packet_encoder.output_dim(), config.seed);

  std::vector<Mat*> params;
  if (!result.heads.text.identity) {
    params.push_back(&result.heads.text.weight);
    params.push_back(&result.heads.text.bias);
  }
  if (!result.heads.packet.identity) {
    params.push_back(&result.heads.packet.weight);
    params.push_back(&result.heads.packet.bias);
  }
  ad::Adam adam;
  adam.lr = config.lr;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.epsilon = config.epsilon;
  adam.init(params);

  Rng shuffle_rng(mix_seed(config.seed, "pretrain-shuffle"));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  shuffle_rng.shuffle(order);
  size_t cursor = 0;

  result.loss_curve.reserve(size_t(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    if (cursor + size_t(config.batch) > order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    ContrastiveBatch batch;
    batch.text_base = Mat(config.batch, text_base.cols());
    batch.packet_base = Mat(config.batch, packet_base.cols());
    for (int r = 0; r < config.batch; ++r) {
      int src = order[cursor + size_t(r)];
      std::copy(text_base.row(src), text_base.row(src) + text_base.cols(),
                batch.text_base.row(r));
      std::copy(packet_base.row(src), packet_base.row(src) + packet_base.cols(),
                batch.packet_base.row(r));
    }
    cursor += size_t(config.batch);

    double loss;
    if (params.empty()) {
      loss = batch_loss(batch, result.heads, config.tau, config.denominator);
    } else {
      HeadGrads grads = info_nce_grad(batch, result.heads, config.tau, config.denominator, &loss);
      std::vector<const Mat*> gptrs;
      if (grads.has_text) {
        gptrs.push_back(&grads.d_text_w);
        gptrs.push_back(&grads.d_text_b);
      }
      if (grads.has_packet) {
        gptrs.push_back(&grads.d_packet_w);
        gptrs.push_back(&grads.d_packet_b);
      }
      adam.step(params, gptrs);
    }
    if (!std::isfinite(loss)) {
      double wn = result.heads.text.identity ? 0.0 : result.heads.text.weight.frob_norm();
      double pn = result.heads.packet.identity ? 0.0 : result.heads.packet.weight.frob_norm();
      fail(Err::numeric, "non-finite pretraining loss at step " + std::to_string(step) +
                             " (|W_T|=" + std::to_string(wn) + ", |W_P|=" + std::to_string(pn) +
                             ")");
    }
    result.loss_curve.push_back(loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// zero-shot

std::vector<std::string> zero_shot_classify(
    const std::vector<uint8_t>& payload, const Heads& heads,
    const embed::BaseEncoder& text_encoder, const embed::BaseEncoder& packet_encoder,
    const std::vector<std::pair<std::string, std::string>>& class_prompts, int k) {
  if (k < 0 || size_t(k) > class_prompts.size())
    fail(Err::config, "zero-shot k must be within the class count");

  Mat zp = heads.project_packet(packet_encoder.encode_packet(payload));

  std::vector<std::pair<double, size_t>> ranked;  // (-cos, prompt index)
  ranked.reserve(class_prompts.size());
  for (size_t i = 0; i < class_prompts.size(); ++i) {
    Mat zt = heads.project_text(text_encoder.encode_text(class_prompts[i].second));
    ranked.emplace_back(-embed::cosine(zp, zt), i);
  }
  std::stable_sort(ranked.begin(), ranked.end());

  std::vector<std::string> out;
  out.reserve(size_t(k));
  for (int i = 0; i < k; ++i) out.push_back(class_prompts[ranked[size_t(i)].second].first);
  return out;
}

// ---------------------------------------------------------------------------
// persistence

nlohmann::ordered_json heads_to_json(const Heads& heads) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["mode"] = to_string(heads.mode);
  j["text"] = embed::head_to_json(heads.text);
  j["packet"] = embed::head_to_json(heads.packet);
  return j;
}

Heads heads_from_json(const nlohmann::json& j) {
  Heads heads;
  heads.mode = ssl_mode_from_string(j.at("mode").get<std::string>());
  heads.text = embed::head_from_json(j.at("text"));
  heads.packet = embed::head_from_json(j.at("packet"));
  return heads;
}

void save_heads(const Heads& heads, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::io, "cannot write heads checkpoint: " + path);
  out << heads_to_json(heads).dump(2) << "\n";
}

Heads load_heads(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open heads checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  return heads_from_json(j);
}

}  // namespace packetclip::contrastive

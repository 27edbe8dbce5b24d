#include "packetclip/reason.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "packetclip/error.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::reason {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  fail(Err::config, "unknown activation: " + s);
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

namespace {

Mat identity_slice(int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < std::min(rows, cols); ++i) m.at(i, i) = 1.0;
  return m;
}

Mat uniform_init(int rows, int cols, uint64_t seed, const std::string& tag) {
  Rng rng(mix_seed(seed, tag));
  double bound = 1.0 / std::sqrt(double(cols));
  return Mat::random_uniform(rows, cols, -bound, bound, rng);
}

Mat ones_mat(int rows, int cols) {
  Mat m(rows, cols);
  m.fill(1.0);
  return m;
}

double apply_activation(double v, Activation a) {
  return a == Activation::tanh ? std::tanh(v) : v;
}

}  // namespace

// ---------------------------------------------------------------------------
// model init and parameter plumbing

ReasonModel ReasonModel::init(const ReasonerConfig& cfg, const std::vector<std::string>& missions,
                              const std::vector<std::string>& classes, uint64_t seed) {
  if (missions.empty()) fail(Err::config, "reasoner needs at least one mission");
  if (classes.size() < 2) fail(Err::config, "reasoner needs at least two classes");
  if (cfg.feature_dim < 1 || cfg.gnn_layers < 1 || cfg.window < 1 || cfg.depth < 1)
    fail(Err::config, "invalid reasoner dimensions");

  ReasonModel model;
  model.config = cfg;
  model.missions = missions;
  model.classes = classes;

  const int d = cfg.feature_dim;
  for (size_t mi = 0; mi < missions.size(); ++mi) {
    MissionReasoner r;
    r.mission = missions[mi];
    r.adapter_w = identity_slice(d, cfg.embed_dim);
    r.adapter_b = Mat(1, d);
    uint64_t mseed = mix_seed(seed, "mission:" + r.mission);
    for (int l = 0; l < cfg.gnn_layers; ++l) {
      // gain 3 keeps element-wise-product messages from vanishing through depth
      Mat w = identity_slice(d, d);
      for (auto& v : w.values()) v *= 3.0;
      Mat noise = uniform_init(d, d, mseed, "layer" + std::to_string(l));
      axpy(w, 0.05, noise);
      r.layer_w.push_back(std::move(w));
      r.layer_b.emplace_back(1, d);
    }
    model.reasoners.push_back(std::move(r));
  }

  const int token_dim = int(missions.size()) * d;
  const int attn_dim = cfg.heads * cfg.head_dim;
  uint64_t tseed = mix_seed(seed, "temporal");
  TemporalHead& t = model.temporal;
  t.in_w = uniform_init(cfg.d_model, token_dim, tseed, "in_w");
  t.in_b = Mat(1, cfg.d_model);
  {
    Rng rng(mix_seed(tseed, "pos"));
    t.pos = Mat::random_uniform(cfg.window, cfg.d_model, -0.05, 0.05, rng);
  }
  for (int layer = 0; layer < cfg.depth; ++layer) {
    TemporalLayer tl;
    std::string tag = "layer" + std::to_string(layer) + ":";
    tl.ln1_g = ones_mat(1, cfg.d_model);
    tl.ln1_b = Mat(1, cfg.d_model);
    tl.wq = uniform_init(attn_dim, cfg.d_model, tseed, tag + "wq");
    tl.bq = Mat(1, attn_dim);
    tl.wk = uniform_init(attn_dim, cfg.d_model, tseed, tag + "wk");
    tl.bk = Mat(1, attn_dim);
    tl.wv = uniform_init(attn_dim, cfg.d_model, tseed, tag + "wv");
    tl.bv = Mat(1, attn_dim);
    tl.wo = uniform_init(cfg.d_model, attn_dim, tseed, tag + "wo");
    tl.bo = Mat(1, cfg.d_model);
    tl.ln2_g = ones_mat(1, cfg.d_model);
    tl.ln2_b = Mat(1, cfg.d_model);
    tl.ff1_w = uniform_init(cfg.ffn_dim, cfg.d_model, tseed, tag + "ff1");
    tl.ff1_b = Mat(1, cfg.ffn_dim);
    tl.ff2_w = uniform_init(cfg.d_model, cfg.ffn_dim, tseed, tag + "ff2");
    tl.ff2_b = Mat(1, cfg.d_model);
    t.layers.push_back(std::move(tl));
  }
  t.lnf_g = ones_mat(1, cfg.d_model);
  t.lnf_b = Mat(1, cfg.d_model);
  t.cls1_w = uniform_init(cfg.cls_hidden, cfg.d_model, tseed, "cls1");
  t.cls1_b = Mat(1, cfg.cls_hidden);
  t.cls2_w = uniform_init(int(classes.size()), cfg.cls_hidden, tseed, "cls2");
  t.cls2_b = Mat(1, int(classes.size()));
  return model;
}

std::vector<Mat*> ReasonModel::parameters() {
  std::vector<Mat*> out;
  for (auto& r : reasoners) {
    out.push_back(&r.adapter_w);
    out.push_back(&r.adapter_b);
    for (size_t l = 0; l < r.layer_w.size(); ++l) {
      out.push_back(&r.layer_w[l]);
      out.push_back(&r.layer_b[l]);
    }
  }
  TemporalHead& t = temporal;
  out.push_back(&t.in_w);
  out.push_back(&t.in_b);
  out.push_back(&t.pos);
  for (auto& tl : t.layers) {
    out.push_back(&tl.ln1_g);
    out.push_back(&tl.ln1_b);
    out.push_back(&tl.wq);
    out.push_back(&tl.bq);
    out.push_back(&tl.wk);
    out.push_back(&tl.bk);
    out.push_back(&tl.wv);
    out.push_back(&tl.bv);
    out.push_back(&tl.wo);
    out.push_back(&tl.bo);
    out.push_back(&tl.ln2_g);
    out.push_back(&tl.ln2_b);
    out.push_back(&tl.ff1_w);
    out.push_back(&tl.ff1_b);
    out.push_back(&tl.ff2_w);
    out.push_back(&tl.ff2_b);
  }
  out.push_back(&t.lnf_g);
  out.push_back(&t.lnf_b);
  out.push_back(&t.cls1_w);
  out.push_back(&t.cls1_b);
  out.push_back(&t.cls2_w);
  out.push_back(&t.cls2_b);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ReasonModel::named_parameters() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (size_t mi = 0; mi < reasoners.size(); ++mi) {
    const auto& r = reasoners[mi];
    std::string p = "mission." + r.mission + ".";
    out.emplace_back(p + "adapter_w", &r.adapter_w);
    out.emplace_back(p + "adapter_b", &r.adapter_b);
    for (size_t l = 0; l < r.layer_w.size(); ++l) {
      out.emplace_back(p + "w" + std::to_string(l + 1), &r.layer_w[l]);
      out.emplace_back(p + "b" + std::to_string(l + 1), &r.layer_b[l]);
    }
  }
  const TemporalHead& t = temporal;
  out.emplace_back("temporal.in_w", &t.in_w);
  out.emplace_back("temporal.in_b", &t.in_b);
  out.emplace_back("temporal.pos", &t.pos);
  for (size_t li = 0; li < t.layers.size(); ++li) {
    const auto& tl = t.layers[li];
    std::string p = "temporal.layer" + std::to_string(li) + ".";
    out.emplace_back(p + "ln1_g", &tl.ln1_g);
    out.emplace_back(p + "ln1_b", &tl.ln1_b);
    out.emplace_back(p + "wq", &tl.wq);
    out.emplace_back(p + "bq", &tl.bq);
    out.emplace_back(p + "wk", &tl.wk);
    out.emplace_back(p + "bk", &tl.bk);
    out.emplace_back(p + "wv", &tl.wv);
    out.emplace_back(p + "bv", &tl.bv);
    out.emplace_back(p + "wo", &tl.wo);
    out.emplace_back(p + "bo", &tl.bo);
    out.emplace_back(p + "ln2_g", &tl.ln2_g);
    out.emplace_back(p + "ln2_b", &tl.ln2_b);
    out.emplace_back(p + "ff1_w", &tl.ff1_w);
    out.emplace_back(p + "ff1_b", &tl.ff1_b);
    out.emplace_back(p + "ff2_w", &tl.ff2_w);
    out.emplace_back(p + "ff2_b", &tl.ff2_b);
  }
  out.emplace_back("temporal.lnf_g", &t.lnf_g);
  out.emplace_back("temporal.lnf_b", &t.lnf_b);
  out.emplace_back("temporal.cls1_w", &t.cls1_w);
  out.emplace_back("temporal.cls1_b", &t.cls1_b);
  out.emplace_back("temporal.cls2_w", &t.cls2_w);
  out.emplace_back("temporal.cls2_b", &t.cls2_b);
  return out;
}

long long ReasonModel::parameter_count() const {
  long long total = 0;
  for (const auto& [_, m] : named_parameters()) total += (long long)(m->size());
  return total;
}

int ReasonModel::class_index(const std::string& label) const {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == label) return int(i);
  return -1;
}

// ---------------------------------------------------------------------------
// mission context

MissionContext make_context_structure(const kg::KnowledgeGraph& g, int embed_dim) {
  MissionContext ctx;
  ctx.graph = g;

  ctx.node_ids.push_back(g.sensor_id);
  int n_concepts = 0;
  for (const auto& layer : g.layers)
    for (size_t i = 0; i < layer.concepts.size(); ++i) {
      ctx.node_ids.push_back(kg::KnowledgeGraph::concept_node_id(g.mission, layer.index, int(i)));
      ++n_concepts;
    }
  ctx.node_ids.push_back(g.embedding_id);
  ctx.embedding_node = int(ctx.node_ids.size()) - 1;

  std::map<std::string, int> pos;
  for (size_t i = 0; i < ctx.node_ids.size(); ++i) pos[ctx.node_ids[i]] = int(i);
  ctx.preds.assign(ctx.node_ids.size(), {});
  for (const auto& [src, dst] : g.edges) {
    auto si = pos.find(src);
    auto di = pos.find(dst);
    if (si == pos.end() || di == pos.end())
      fail(Err::graph, "edge references unknown node: " + src + " -> " + dst);
    ctx.preds[size_t(di->second)].push_back(si->second);
  }
  ctx.concept_base = Mat(n_concepts, embed_dim);
  return ctx;
}

MissionContext make_mission_context(const kg::KnowledgeGraph& g, const contrastive::Heads& heads,
                                    const embed::BaseEncoder& text_encoder,
                                    const ReasonerConfig& cfg) {
  MissionContext ctx = make_context_structure(g, cfg.embed_dim);
  std::vector<std::string> concept_texts;
  for (const auto& layer : g.layers)
    for (const auto& c : layer.concepts) concept_texts.push_back(c);

  for (size_t i = 0; i < concept_texts.size(); ++i) {
    Mat z = heads.project_text(text_encoder.encode_text(concept_texts[i]));
    if (cfg.unit_embeddings) {
      double n = z.frob_norm();
      if (n > 0)
        for (auto& v : z.values()) v /= n;
    }
    if (z.cols() != cfg.embed_dim)
      fail(Err::config, "projected concept dim " + std::to_string(z.cols()) +
                            " does not match reasoner embed_dim " + std::to_string(cfg.embed_dim));
    std::copy(z.data(), z.data() + z.size(), ctx.concept_base.row(int(i)));
  }
  return ctx;
}

Mat packet_embedding(const std::vector<uint8_t>& payload, const contrastive::Heads& heads,
                     const embed::BaseEncoder& packet_encoder, const ReasonerConfig& cfg) {
  Mat z = heads.project_packet(packet_encoder.encode_packet(payload));
  if (cfg.unit_embeddings) {
    double n = z.frob_norm();
    if (n > 0)
      for (auto& v : z.values()) v /= n;
  }
  if (z.cols() != cfg.embed_dim)
    fail(Err::config, "projected packet dim " + std::to_string(z.cols()) +
                          " does not match reasoner embed_dim " + std::to_string(cfg.embed_dim));
  return z;
}

// ---------------------------------------------------------------------------
// reference per-operation path

namespace {

Mat affine_row(const Mat& x, const Mat& w, const Mat& b) {
  if (x.cols() != w.cols())
    fail(Err::shape, "feature dim " + std::to_string(x.cols()) + " does not match weight dim " +
                         std::to_string(w.cols()));
  Mat out = matmul_nt(x, w);
  axpy(out, 1.0, b);
  return out;
}

}  // namespace

FeatureAssignment init_node_features(const MissionContext& ctx,
                                     const std::vector<uint8_t>& payload,
                                     const contrastive::Heads& heads,
                                     const embed::BaseEncoder& packet_encoder,
                                     const MissionReasoner& reasoner, const ReasonerConfig& cfg) {
  Mat z = packet_embedding(payload, heads, packet_encoder, cfg);
  FeatureAssignment fa;
  fa[ctx.graph.sensor_id] = affine_row(z, reasoner.adapter_w, reasoner.adapter_b);
  int concept_row = 0;
  for (size_t i = 1; i + 1 < ctx.node_ids.size(); ++i) {
    Mat c(1, ctx.concept_base.cols());
    std::copy(ctx.concept_base.row(concept_row), ctx.concept_base.row(concept_row) + ctx.concept_base.cols(),
              c.data());
    fa[ctx.node_ids[i]] = affine_row(c, reasoner.adapter_w, reasoner.adapter_b);
    ++concept_row;
  }
  fa[ctx.graph.embedding_id] = ones_mat(1, cfg.feature_dim);
  return fa;
}

FeatureAssignment layer_transform(const FeatureAssignment& fa, const MissionReasoner& reasoner,
                                  int l) {
  if (l < 1 || size_t(l) > reasoner.layer_w.size())
    fail(Err::config, "layer index " + std::to_string(l) + " out of range");
  FeatureAssignment out;
  for (const auto& [id, vec] : fa)
    out[id] = affine_row(vec, reasoner.layer_w[size_t(l - 1)], reasoner.layer_b[size_t(l - 1)]);
  return out;
}

FeatureAssignment message_pass(const kg::KnowledgeGraph& g, const FeatureAssignment& fa, int l,
                               Activation activation) {
  (void)l;  // the same synchronous rule applies at every layer
  auto nodes = g.node_index();
  std::map<std::string, std::vector<std::string>> preds;
  for (const auto& [src, dst] : g.edges) preds[dst].push_back(src);

  for (const auto& [id, _] : nodes)
    if (!fa.count(id)) fail(Err::graph, "feature assignment misses node '" + id + "'");

  FeatureAssignment out;
  for (const auto& [id, _] : nodes) {
    const Mat& x_v = fa.at(id);
    auto pit = preds.find(id);
    if (pit == preds.end() || pit->second.empty()) {
      out[id] = x_v;
      continue;
    }
    Mat acc(1, x_v.cols());
    for (const auto& uid : pit->second) {
      const Mat& x_u = fa.at(uid);
      if (x_u.cols() != x_v.cols()) fail(Err::shape, "message dim mismatch at node '" + id + "'");
      for (int c = 0; c < x_v.cols(); ++c)
        acc.at(0, c) += apply_activation(x_v.at(0, c) * x_u.at(0, c), activation);
    }
    for (auto& v : acc.values()) v /= double(pit->second.size());
    out[id] = std::move(acc);
  }
  return out;
}

Mat mission_forward(const std::vector<MissionContext>& contexts,
                    const std::vector<uint8_t>& payload, const ReasonModel& model,
                    const contrastive::Heads& heads, const embed::BaseEncoder& packet_encoder) {
  if (contexts.size() != model.reasoners.size())
    fail(Err::config, "context count does not match mission count");
  const int d = model.config.feature_dim;
  Mat token(1, int(contexts.size()) * d);
  for (size_t mi = 0; mi < contexts.size(); ++mi) {
    auto fa = init_node_features(contexts[mi], payload, heads, packet_encoder,
                                 model.reasoners[mi], model.config);
    for (int l = 1; l <= model.config.gnn_layers; ++l) {
      fa = layer_transform(fa, model.reasoners[mi], l);
      fa = message_pass(contexts[mi].graph, fa, l, model.config.activation);
    }
    const Mat& emb = fa.at(contexts[mi].graph.embedding_id);
    for (int c = 0; c < d; ++c) token.at(0, int(mi) * d + c) = emb.at(0, c);
  }
  return token;
}

// ---------------------------------------------------------------------------
// engine

Engine::Engine(const ReasonModel* model, const std::vector<MissionContext>* contexts)
    : model_(model), contexts_(contexts) {
  if (model_->reasoners.size() != contexts_->size())
    fail(Err::config, "engine: context count does not match mission count");
}

int Engine::mission_param_base(int mission) const {
  return mission * (2 + 2 * model_->config.gnn_layers);
}

int Engine::temporal_param_base() const {
  return int(model_->reasoners.size()) * (2 + 2 * model_->config.gnn_layers);
}

std::vector<ad::NodeId> Engine::push_params(ad::Tape& tape, bool needs_grad) const {
  std::vector<ad::NodeId> ids;
  auto* self = const_cast<ReasonModel*>(model_);
  for (Mat* p : self->parameters()) ids.push_back(tape.leaf(*p, needs_grad));
  return ids;
}

ad::NodeId Engine::build_gnn_tokens(ad::Tape& tape, const std::vector<ad::NodeId>& params,
                                    ad::NodeId packet_z) const {
  const auto& cfg = model_->config;
  const int n = tape.val(packet_z).rows();
  std::vector<ad::NodeId> mission_tokens;

  for (size_t mi = 0; mi < contexts_->size(); ++mi) {
    const MissionContext& ctx = (*contexts_)[mi];
    const int base = mission_param_base(int(mi));
    const ad::NodeId aw = params[size_t(base)];
    const ad::NodeId ab = params[size_t(base) + 1];

    ad::NodeId sensor = tape.linear(packet_z, aw, ab);
    ad::NodeId concepts = -1;
    if (ctx.concept_base.rows() > 0) {
      ad::NodeId cbase = tape.leaf(ctx.concept_base);
      concepts = tape.linear(cbase, aw, ab);
    }

    std::vector<ad::NodeId> feats(ctx.node_ids.size(), -1);
    feats[0] = sensor;
    for (int j = 0; j < ctx.concept_base.rows(); ++j)
      feats[size_t(j) + 1] = tape.broadcast_row(tape.gather_rows(concepts, {j}), n);
    feats[size_t(ctx.embedding_node)] = tape.leaf(ones_mat(n, cfg.feature_dim));

    for (int l = 0; l < cfg.gnn_layers; ++l) {
      const ad::NodeId wl = params[size_t(base) + 2 + 2 * size_t(l)];
      const ad::NodeId bl = params[size_t(base) + 3 + 2 * size_t(l)];
      std::vector<ad::NodeId> affine(feats.size());
      for (size_t v = 0; v < feats.size(); ++v) affine[v] = tape.linear(feats[v], wl, bl);
      std::vector<ad::NodeId> next(feats.size());
      for (size_t v = 0; v < feats.size(); ++v) {
        const auto& pr = ctx.preds[v];
        if (pr.empty()) {
          next[v] = affine[v];
          continue;
        }
        std::vector<ad::NodeId> terms;
        terms.reserve(pr.size());
        for (int u : pr) {
          ad::NodeId m = tape.mul(affine[v], affine[size_t(u)]);
          terms.push_back(cfg.activation == Activation::tanh ? tape.tanh_(m) : m);
        }
        next[v] = tape.scale(tape.sum_list(terms), 1.0 / double(pr.size()));
      }
      feats = std::move(next);
    }
    mission_tokens.push_back(feats[size_t(ctx.embedding_node)]);
  }
  return tape.concat_cols(mission_tokens);
}

ad::NodeId Engine::build_temporal(ad::Tape& tape, const std::vector<ad::NodeId>& params,
                                  ad::NodeId window_rows, int n_windows) const {
  const auto& cfg = model_->config;
  int p = temporal_param_base();
  const ad::NodeId in_w = params[size_t(p++)];
  const ad::NodeId in_b = params[size_t(p++)];
  const ad::NodeId pos = params[size_t(p++)];

  ad::NodeId x = tape.linear(window_rows, in_w, in_b);
  x = tape.add_position(x, pos, cfg.window);

  for (int layer = 0; layer < cfg.depth; ++layer) {
    const ad::NodeId ln1_g = params[size_t(p++)];
    const ad::NodeId ln1_b = params[size_t(p++)];
    const ad::NodeId wq = params[size_t(p++)];
    const ad::NodeId bq = params[size_t(p++)];
    const ad::NodeId wk = params[size_t(p++)];
    const ad::NodeId bk = params[size_t(p++)];
    const ad::NodeId wv = params[size_t(p++)];
    const ad::NodeId bv = params[size_t(p++)];
    const ad::NodeId wo = params[size_t(p++)];
    const ad::NodeId bo = params[size_t(p++)];
    const ad::NodeId ln2_g = params[size_t(p++)];
    const ad::NodeId ln2_b = params[size_t(p++)];
    const ad::NodeId ff1_w = params[size_t(p++)];
    const ad::NodeId ff1_b = params[size_t(p++)];
    const ad::NodeId ff2_w = params[size_t(p++)];
    const ad::NodeId ff2_b = params[size_t(p++)];

    // pre-LN attention block
    ad::NodeId h = tape.layer_norm(x, ln1_g, ln1_b);
    ad::NodeId q = tape.linear(h, wq, bq);
    ad::NodeId k = tape.linear(h, wk, bk);
    ad::NodeId v = tape.linear(h, wv, bv);
    ad::NodeId att = tape.window_attention(q, k, v, n_windows, cfg.window, cfg.heads);
    x = tape.add(x, tape.linear(att, wo, bo));

    // pre-LN feed-forward block
    ad::NodeId h2 = tape.layer_norm(x, ln2_g, ln2_b);
    ad::NodeId f = tape.linear(tape.gelu(tape.linear(h2, ff1_w, ff1_b)), ff2_w, ff2_b);
    x = tape.add(x, f);
  }

  const ad::NodeId lnf_g = params[size_t(p++)];
  const ad::NodeId lnf_b = params[size_t(p++)];
  const ad::NodeId cls1_w = params[size_t(p++)];
  const ad::NodeId cls1_b = params[size_t(p++)];
  const ad::NodeId cls2_w = params[size_t(p++)];
  const ad::NodeId cls2_b = params[size_t(p++)];

  x = tape.layer_norm(x, lnf_g, lnf_b);
  ad::NodeId pooled = tape.group_mean_rows(x, cfg.window);
  ad::NodeId hidden = tape.gelu(tape.linear(pooled, cls1_w, cls1_b));
  ad::NodeId logits = tape.linear(hidden, cls2_w, cls2_b);
  return tape.softmax_rows(logits);
}

Engine::Forward Engine::forward(const Mat& packet_z, const std::vector<std::vector<int>>& windows,
                                const std::vector<int>* labels,
                                const std::vector<std::pair<int, int>>* smooth_pairs,
                                double smoothing_lambda, bool needs_grad) const {
  const auto& cfg = model_->config;
  Forward fwd;
  fwd.params = push_params(fwd.tape, needs_grad);
  ad::NodeId z = fwd.tape.leaf(packet_z);
  fwd.tokens = build_gnn_tokens(fwd.tape, fwd.params, z);

  std::vector<int> flat;
  flat.reserve(windows.size() * size_t(cfg.window));
  for (const auto& w : windows) {
    if (int(w.size()) != cfg.window)
      fail(Err::shape, "window length " + std::to_string(w.size()) + " != " +
                           std::to_string(cfg.window));
    flat.insert(flat.end(), w.begin(), w.end());
  }
  ad::NodeId rows = fwd.tape.gather_rows(fwd.tokens, flat);
  fwd.probs = build_temporal(fwd.tape, fwd.params, rows, int(windows.size()));

  if (labels) {
    ad::NodeId loss = fwd.tape.nll_mean(fwd.probs, *labels);
    if (smooth_pairs && !smooth_pairs->empty() && smoothing_lambda > 0) {
      std::vector<int> ia, ib;
      for (auto [a, b] : *smooth_pairs) {
        ia.push_back(a);
        ib.push_back(b);
      }
      ad::NodeId d = fwd.tape.sub(fwd.tape.gather_rows(fwd.probs, ia),
                                  fwd.tape.gather_rows(fwd.probs, ib));
      ad::NodeId sq = fwd.tape.sum_all(fwd.tape.mul(d, d));
      loss = fwd.tape.add(loss, fwd.tape.scale(sq, smoothing_lambda / double(ia.size())));
    }
    fwd.loss = loss;
  }
  return fwd;
}

Mat Engine::tokens_for(const Mat& packet_z) const {
  ad::Tape tape;
  auto params = push_params(tape, false);
  ad::NodeId z = tape.leaf(packet_z);
  ad::NodeId tokens = build_gnn_tokens(tape, params, z);
  return tape.val(tokens);
}

Mat Engine::probs_for(const Mat& tokens, const std::vector<std::vector<int>>& windows) const {
  const auto& cfg = model_->config;
  ad::Tape tape;
  auto params = push_params(tape, false);
  ad::NodeId tok = tape.leaf(tokens);
  std::vector<int> flat;
  flat.reserve(windows.size() * size_t(cfg.window));
  for (const auto& w : windows) {
    if (int(w.size()) != cfg.window) fail(Err::shape, "window length mismatch");
    flat.insert(flat.end(), w.begin(), w.end());
  }
  ad::NodeId rows = tape.gather_rows(tok, flat);
  ad::NodeId probs = build_temporal(tape, params, rows, int(windows.size()));
  return tape.val(probs);
}

Mat temporal_forward(const std::vector<Mat>& tokens, const ReasonModel& model) {
  const auto& cfg = model.config;
  if (int(tokens.size()) != cfg.window)
    fail(Err::shape, "temporal_forward expects exactly " + std::to_string(cfg.window) +
                         " tokens, got " + std::to_string(tokens.size()));
  const int token_dim = int(model.missions.size()) * cfg.feature_dim;
  Mat stacked(cfg.window, token_dim);
  for (int i = 0; i < cfg.window; ++i) {
    if (tokens[size_t(i)].cols() != token_dim || tokens[size_t(i)].rows() != 1)
      fail(Err::shape, "frame token has wrong shape");
    std::copy(tokens[size_t(i)].data(), tokens[size_t(i)].data() + size_t(token_dim),
              stacked.row(i));
  }
  // a single window over the stacked tokens
  std::vector<MissionContext> empty_ctx(model.missions.size());
  for (size_t i = 0; i < empty_ctx.size(); ++i) {
    empty_ctx[i].node_ids = {"s", "e"};
    empty_ctx[i].preds = {{}, {}};
    empty_ctx[i].embedding_node = 1;
    empty_ctx[i].concept_base = Mat(0, cfg.embed_dim);
  }
  Engine engine(&model, &empty_ctx);
  std::vector<std::vector<int>> windows(1);
  for (int i = 0; i < cfg.window; ++i) windows[0].push_back(i);
  return engine.probs_for(stacked, windows);
}

// ---------------------------------------------------------------------------
// training

std::vector<int> window_indices(int anchor, int window) {
  std::vector<int> out;
  out.reserve(size_t(window));
  for (int t = anchor - window + 1; t <= anchor; ++t) out.push_back(std::max(0, t));
  return out;
}

TrainResult train_reasoner(const ingest::LabeledSequence& train,
                           const std::vector<MissionContext>& contexts,
                           const contrastive::Heads& heads,
                           const embed::BaseEncoder& packet_encoder, const ReasonerConfig& rcfg,
                           const ReasonTrainConfig& tcfg,
                           const std::vector<std::string>& classes) {
  const int n = int(train.records.size());
  if (n < 1) fail(Err::config, "training sequence is empty");
  if (tcfg.steps < 1) fail(Err::config, "training needs steps >= 1");

  std::vector<std::string> missions;
  for (const auto& ctx : contexts) missions.push_back(ctx.graph.mission);

  TrainResult result;
  result.model = ReasonModel::init(rcfg, missions, classes, tcfg.seed);
  ReasonModel& model = result.model;

  // frozen inputs: precompute every packet's projected embedding once
  Mat packet_z(n, rcfg.embed_dim);
  std::vector<int> label_idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Mat z = packet_embedding(train.records[size_t(i)].payload, heads, packet_encoder, rcfg);
    std::copy(z.data(), z.data() + z.size(), packet_z.row(i));
    int ci = model.class_index(train.records[size_t(i)].label);
    if (ci < 0)
      fail(Err::config, "training label '" + train.records[size_t(i)].label +
                            "' missing from class set");
    label_idx[size_t(i)] = ci;
  }

  Engine engine(&model, &contexts);
  auto params = model.parameters();
  ad::Adam adam;
  adam.lr = tcfg.lr;
  adam.beta1 = tcfg.beta1;
  adam.beta2 = tcfg.beta2;
  adam.epsilon = tcfg.epsilon;
  adam.init(params);

  const int seg_len = std::max(1, std::min(tcfg.segment_len, n));
  const int n_seg = std::max(1, tcfg.batch / seg_len);
  Rng rng(mix_seed(tcfg.seed, "reason-train"));

  result.loss_curve.reserve(size_t(tcfg.steps));
  for (int step = 0; step < tcfg.steps; ++step) {
    // sample contiguous anchor segments; consecutive windows give the
    // smoothing term its ||y_t - y_{t-1}|| pairs
    std::vector<int> anchors;
    std::vector<std::pair<int, int>> pairs;
    for (int s = 0; s < n_seg; ++s) {
      int start = int(rng.uniform_int(uint64_t(std::max(1, n - seg_len + 1))));
      for (int k = 0; k < seg_len; ++k) {
        int anchor = std::min(n - 1, start + k);
        anchors.push_back(anchor);
        if (k > 0) pairs.emplace_back(int(anchors.size()) - 1, int(anchors.size()) - 2);
      }
    }

    // distinct token positions used this step
    std::set<int> needed_set;
    for (int a : anchors)
      for (int t : window_indices(a, rcfg.window)) needed_set.insert(t);
    std::vector<int> needed(needed_set.begin(), needed_set.end());
    std::map<int, int> local;
    for (size_t i = 0; i < needed.size(); ++i) local[needed[i]] = int(i);

    Mat z_local(int(needed.size()), rcfg.embed_dim);
    for (size_t i = 0; i < needed.size(); ++i)
      std::copy(packet_z.row(needed[i]), packet_z.row(needed[i]) + packet_z.cols(),
                z_local.row(int(i)));

    std::vector<std::vector<int>> windows;
    std::vector<int> labels;
    windows.reserve(anchors.size());
    for (int a : anchors) {
      std::vector<int> w;
      for (int t : window_indices(a, rcfg.window)) w.push_back(local.at(t));
      windows.push_back(std::move(w));
      labels.push_back(label_idx[size_t(a)]);
    }

    auto fwd = engine.forward(z_local, windows, &labels, &pairs, tcfg.smoothing_lambda, true);
    double loss = fwd.tape.val(fwd.loss).at(0, 0);
    if (!std::isfinite(loss)) {
      double pnorm = 0;
      for (Mat* p : params) pnorm += p->frob_norm();
      fail(Err::numeric, "non-finite reasoner loss at step " + std::to_string(step) +
                             " (total parameter norm " + std::to_string(pnorm) + ")");
    }
    fwd.tape.backward(fwd.loss);

    std::vector<const Mat*> grads;
    grads.reserve(params.size());
    std::vector<Mat> zero_grads;
    zero_grads.reserve(params.size());  // reserved up front so pointers stay valid
    for (size_t i = 0; i < params.size(); ++i) {
      const Mat& g = fwd.tape.grad(fwd.params[i]);
      if (g.empty()) {
        zero_grads.emplace_back(params[i]->rows(), params[i]->cols());
        grads.push_back(&zero_grads.back());
      } else {
        grads.push_back(&g);
      }
    }
    adam.step(params, grads);
    result.loss_curve.push_back(loss);
  }
  return result;
}

Mat infer_stream(const ingest::LabeledSequence& seq, const ReasonModel& model,
                 const std::vector<MissionContext>& contexts, const contrastive::Heads& heads,
                 const embed::BaseEncoder& packet_encoder) {
  const auto& cfg = model.config;
  const int n = int(seq.records.size());
  if (n == 0) return Mat(0, int(model.classes.size()));

  Engine engine(&model, &contexts);
  const int token_dim = int(model.missions.size()) * cfg.feature_dim;

  // tokens depend only on their own packet; compute in chunks
  Mat tokens(n, token_dim);
  constexpr int kTokenChunk = 512;
  for (int c0 = 0; c0 < n; c0 += kTokenChunk) {
    int c1 = std::min(n, c0 + kTokenChunk);
    Mat z(c1 - c0, cfg.embed_dim);
    for (int i = c0; i < c1; ++i) {
      Mat zi = packet_embedding(seq.records[size_t(i)].payload, heads, packet_encoder, cfg);
      std::copy(zi.data(), zi.data() + zi.size(), z.row(i - c0));
    }
    Mat tk = engine.tokens_for(z);
    for (int i = c0; i < c1; ++i)
      std::copy(tk.row(i - c0), tk.row(i - c0) + token_dim, tokens.row(i));
  }

  Mat probs(n, int(model.classes.size()));
  constexpr int kWindowChunk = 128;
  for (int c0 = 0; c0 < n; c0 += kWindowChunk) {
    int c1 = std::min(n, c0 + kWindowChunk);
    std::vector<std::vector<int>> windows;
    windows.reserve(size_t(c1 - c0));
    for (int t = c0; t < c1; ++t) windows.push_back(window_indices(t, cfg.window));
    Mat p = engine.probs_for(tokens, windows);
    for (int t = c0; t < c1; ++t)
      std::copy(p.row(t - c0), p.row(t - c0) + p.cols(), probs.row(t));
  }
  return probs;
}

// ---------------------------------------------------------------------------
// checkpointing

namespace {

nlohmann::ordered_json mat_to_json(const Mat& m) {
  auto rows = nlohmann::ordered_json::array();
  for (int r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const nlohmann::json& j) {
  int rows = int(j.size());
  if (rows == 0) return Mat(0, 0);
  int cols = int(j.at(0).size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = j.at(size_t(r));
    if (int(row.size()) != cols) fail(Err::shape, "ragged tensor in checkpoint");
    for (int c = 0; c < cols; ++c) m.at(r, c) = row.at(size_t(c)).get<double>();
  }
  return m;
}

}  // namespace

nlohmann::ordered_json model_to_json(const ReasonModel& model) {
  const auto& cfg = model.config;
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["config"] = {{"feature_dim", cfg.feature_dim},
                 {"gnn_layers", cfg.gnn_layers},
                 {"embed_dim", cfg.embed_dim},
                 {"d_model", cfg.d_model},
                 {"heads", cfg.heads},
                 {"head_dim", cfg.head_dim},
                 {"ffn_dim", cfg.ffn_dim},
                 {"depth", cfg.depth},
                 {"window", cfg.window},
                 {"cls_hidden", cfg.cls_hidden},
                 {"activation", to_string(cfg.activation)},
                 {"unit_embeddings", cfg.unit_embeddings}};
  j["missions"] = model.missions;
  j["classes"] = model.classes;
  auto tensors = nlohmann::ordered_json::object();
  for (const auto& [name, m] : model.named_parameters()) tensors[name] = mat_to_json(*m);
  j["tensors"] = std::move(tensors);
  return j;
}

ReasonModel model_from_json(const nlohmann::json& j) {
  int version = j.at("version").get<int>();
  if (version != 1)
    fail(Err::state, "unsupported model checkpoint version " + std::to_string(version));
  ReasonerConfig cfg;
  const auto& jc = j.at("config");
  cfg.feature_dim = jc.at("feature_dim").get<int>();
  cfg.gnn_layers = jc.at("gnn_layers").get<int>();
  cfg.embed_dim = jc.at("embed_dim").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.heads = jc.at("heads").get<int>();
  cfg.head_dim = jc.at("head_dim").get<int>();
  cfg.ffn_dim = jc.at("ffn_dim").get<int>();
  cfg.depth = jc.at("depth").get<int>();
  cfg.window = jc.at("window").get<int>();
  cfg.cls_hidden = jc.at("cls_hidden").get<int>();
  cfg.activation = activation_from_string(jc.at("activation").get<std::string>());
  cfg.unit_embeddings = jc.at("unit_embeddings").get<bool>();

  ReasonModel model = ReasonModel::init(cfg, j.at("missions").get<std::vector<std::string>>(),
                                        j.at("classes").get<std::vector<std::string>>(), 0);
  const auto& tensors = j.at("tensors");
  auto named = model.named_parameters();
  auto params = model.parameters();
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& name = named[i].first;
    if (!tensors.contains(name)) fail(Err::state, "checkpoint misses tensor '" + name + "'");
    Mat m = mat_from_json(tensors.at(name));
    if (!m.same_shape(*params[i]))
      fail(Err::shape, "checkpoint tensor '" + name + "' has wrong shape");
    *params[i] = std::move(m);
  }
  return model;
}

void save_model(const ReasonModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::io, "cannot write model checkpoint: " + path);
  out << model_to_json(model).dump(2) << "\n";
}

ReasonModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open model checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace packetclip::reason

#include "packetclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "packetclip/autodiff.hpp"
#include "packetclip/error.hpp"

namespace packetclip::eval {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail(Err::shape, "roc_auc: score/label count mismatch");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    fail(Err::metric, "roc_auc undefined: only one class present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over tie groups
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double mid = (double(i + 1) + double(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  double rank_sum_pos = 0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k] != 0) rank_sum_pos += rank[k];
  double u = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

double mean_auc(const std::map<std::string, double>& per_class) {
  if (per_class.empty()) fail(Err::metric, "mean_auc over empty class map");
  double s = 0;
  for (const auto& [_, v] : per_class) s += v;
  return s / double(per_class.size());
}

double top_k_accuracy(const std::vector<std::vector<std::string>>& rankings,
                      const std::vector<std::string>& truth, int k) {
  if (k < 1) fail(Err::config, "top_k_accuracy requires k >= 1");
  if (rankings.size() != truth.size()) fail(Err::shape, "ranking/truth count mismatch");
  if (rankings.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    for (size_t j = 0; j < r.size() && j < size_t(k); ++j) {
      if (r[j] == truth[i]) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(rankings.size());
}

MetricReport evaluate_probs(const Mat& probs, const std::vector<std::string>& classes,
                            const std::vector<std::string>& truth) {
  if (size_t(probs.rows()) != truth.size()) fail(Err::shape, "probs/truth count mismatch");
  if (probs.cols() != int(classes.size())) fail(Err::shape, "probs/classes width mismatch");

  MetricReport report;
  report.n_samples = truth.size();
  for (size_t c = 0; c < classes.size(); ++c) {
    std::vector<double> scores(truth.size());
    std::vector<int> labels(truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
      scores[i] = probs.at(int(i), int(c));
      labels[i] = truth[i] == classes[c] ? 1 : 0;
    }
    try {
      report.per_class_auc[classes[c]] = roc_auc(scores, labels);
    } catch (const Error& e) {
      if (e.code() != Err::metric) throw;
      report.excluded_classes.push_back(classes[c]);
    }
  }
  if (!report.per_class_auc.empty()) report.mauc = mean_auc(report.per_class_auc);
  return report;
}

// ---------------------------------------------------------------------------
// cost accounting

namespace {

long long linear_flops(long long rows, long long in, long long out) {
  return 2 * rows * in * out + rows * out;  // multiply-adds plus bias
}

long long layer_norm_flops(long long rows, long long d) { return 8 * rows * d; }

}  // namespace

long long count_params(const reason::ReasonModel& model) { return model.parameter_count(); }

long long attention_flops(int window, int d_model, int heads) {
  const long long a = window, d = d_model;
  (void)heads;  // d_k = d_model / heads cancels in the closed form
  long long qkv = 3 * 2 * a * d * d;
  long long scores = 2 * a * a * d;
  long long weighted = 2 * a * a * d;
  long long out = 2 * a * d * d;
  return qkv + scores + weighted + out;
}

long long count_flops(const reason::ReasonModel& model,
                      const std::vector<reason::MissionContext>& contexts) {
  const auto& cfg = model.config;
  const long long a = cfg.window;
  const long long d = cfg.d_model;
  const long long attn = (long long)(cfg.heads) * cfg.head_dim;
  const long long fd = cfg.feature_dim;
  const long long token_dim = (long long)(model.missions.size()) * fd;

  // per-packet marginal GNN work: one new token (concept adaptations are
  // static per graph and cached across the stream)
  long long gnn = 0;
  for (const auto& ctx : contexts) {
    long long nodes = (long long)(ctx.node_ids.size());
    long long edges = 0;
    for (const auto& p : ctx.preds) edges += (long long)(p.size());
    long long aggregated = 0;
    for (const auto& p : ctx.preds) aggregated += p.empty() ? 0 : 1;
    gnn += linear_flops(1, cfg.embed_dim, fd);  // sensor adapter
    long long per_layer = nodes * linear_flops(1, fd, fd)  // affine on every node
                          + edges * 3 * fd                 // product, activation, accumulate
                          + aggregated * fd;               // mean divide
    gnn += cfg.gnn_layers * per_layer;
  }

  long long temporal = linear_flops(a, token_dim, d) + a * d;  // input projection + positions
  for (int l = 0; l < cfg.depth; ++l) {
    temporal += layer_norm_flops(a, d);
    temporal += 3 * linear_flops(a, d, attn);            // q, k, v
    temporal += 2 * a * a * attn;                        // scores
    temporal += 4 * a * a * cfg.heads;                   // softmax
    temporal += 2 * a * a * attn;                        // prob-weighted values
    temporal += linear_flops(a, attn, d);                // output projection
    temporal += a * d;                                   // residual
    temporal += layer_norm_flops(a, d);
    temporal += linear_flops(a, d, cfg.ffn_dim);
    temporal += 10 * a * cfg.ffn_dim;                    // gelu
    temporal += linear_flops(a, cfg.ffn_dim, d);
    temporal += a * d;                                   // residual
  }
  temporal += layer_norm_flops(a, d);
  temporal += a * d;  // mean pooling

  long long classifier = linear_flops(1, d, cfg.cls_hidden) + 10 * cfg.cls_hidden +
                         linear_flops(1, cfg.cls_hidden, (long long)(model.classes.size())) +
                         4 * (long long)(model.classes.size());

  return gnn + temporal + classifier;
}

CostReport cost_report(const reason::ReasonModel& model,
                       const std::vector<reason::MissionContext>& contexts) {
  CostReport report;
  report.param_count = count_params(model);
  report.flops_per_forward = count_flops(model, contexts);

  for (const auto& [name, m] : model.named_parameters()) {
    std::string group = name.substr(0, name.find('.'));
    report.param_breakdown[group] += (long long)(m->size());
  }
  const auto& cfg = model.config;
  long long total = report.flops_per_forward;
  long long cls = linear_flops(1, cfg.d_model, cfg.cls_hidden) + 10 * cfg.cls_hidden +
                  linear_flops(1, cfg.cls_hidden, (long long)(model.classes.size())) +
                  4 * (long long)(model.classes.size());
  // gnn share = everything left after removing the transformer layers
  reason::ReasonModel shallow = model;
  shallow.config.depth = 0;
  long long no_temporal_layers = count_flops(shallow, contexts);
  report.flops_breakdown["classifier"] = cls;
  report.flops_breakdown["temporal"] = total - no_temporal_layers;
  report.flops_breakdown["gnn_and_projection"] = no_temporal_layers - cls;
  return report;
}

// ---------------------------------------------------------------------------
// logistic probe

ProbeResult logistic_probe(const Mat& train_x, const std::vector<std::string>& train_labels,
                           const Mat& test_x, const std::vector<std::string>& test_labels,
                           const std::vector<std::string>& classes, uint64_t seed, int epochs,
                           double lr) {
  (void)seed;  // zero init; the objective is convex
  const int n = train_x.rows();
  const int dim = train_x.cols();
  const int c = int(classes.size());
  if (int(train_labels.size()) != n) fail(Err::shape, "probe: train label count mismatch");

  std::map<std::string, int> class_idx;
  for (int i = 0; i < c; ++i) class_idx[classes[size_t(i)]] = i;
  std::vector<int> y(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto it = class_idx.find(train_labels[size_t(i)]);
    if (it == class_idx.end()) fail(Err::config, "probe: unknown label " + train_labels[size_t(i)]);
    y[size_t(i)] = it->second;
  }

  Mat w(c, dim), b(1, c);
  ad::Adam adam;
  adam.lr = lr;
  adam.beta1 = 0.9;
  adam.beta2 = 0.99;
  adam.epsilon = 1e-8;
  std::vector<Mat*> params = {&w, &b};
  adam.init(params);

  auto softmax_scores = [&](const Mat& x) {
    Mat logits = matmul_nt(x, w);
    for (int r = 0; r < logits.rows(); ++r) {
      double* row = logits.row(r);
      for (int j = 0; j < c; ++j) row[j] += b.at(0, j);
      double mx = *std::max_element(row, row + c);
      double z = 0;
      for (int j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (int j = 0; j < c; ++j) row[j] /= z;
    }
    return logits;
  };

  for (int e = 0; e < epochs; ++e) {
    Mat p = softmax_scores(train_x);
    for (int i = 0; i < n; ++i) p.at(i, y[size_t(i)]) -= 1.0;
    for (auto& v : p.values()) v /= double(n);
    Mat dw = matmul_tn(p, train_x);
    Mat db(1, c);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) db.at(0, j) += p.at(i, j);
    std::vector<const Mat*> grads = {&dw, &db};
    adam.step(params, grads);
  }

  Mat probs = softmax_scores(test_x);
  MetricReport mr = evaluate_probs(probs, classes, test_labels);
  ProbeResult out;
  out.per_class_auc = mr.per_class_auc;
  out.mauc = mr.mauc;
  return out;
}

// ---------------------------------------------------------------------------
// scarcity sweep

std::vector<SweepPoint> scarcity_sweep(const ingest::LabeledSequence& data,
                                       const std::vector<double>& fractions, uint64_t seed,
                                       const TrainEvalFn& run) {
  std::vector<SweepPoint> curve;
  for (double f : fractions) {
    SweepPoint point;
    point.fraction = f;
    try {
      auto split = ingest::split_dataset(data, f, seed);
      point.mauc = run(split, f);
    } catch (const std::exception& e) {
      point.failed = true;
      point.error = e.what();
    }
    curve.push_back(std::move(point));
  }
  return curve;
}

}  // namespace packetclip::eval

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "packetclip/ingest.hpp"
#include "packetclip/mat.hpp"
#include "packetclip/reason.hpp"

namespace packetclip::eval {

// Mann-Whitney formulation with midranks: probability that a random positive
// outranks a random negative, ties credited 0.5. Raises undefined-metric when
// only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted arithmetic mean.
double mean_auc(const std::map<std::string, double>& per_class);

// Fraction of samples whose true label appears within the first k entries.
double top_k_accuracy(const std::vector<std::vector<std::string>>& rankings,
                      const std::vector<std::string>& truth, int k);

struct MetricReport {
  std::map<std::string, double> per_class_auc;
  std::vector<std::string> excluded_classes;  // undefined one-vs-rest AUC
  double mauc = 0;
  std::map<int, double> top_k;  // k -> accuracy
  size_t n_samples = 0;
  std::string config_fingerprint;
};

// One-vs-rest AUC per class from softmax probabilities (rows of `probs`,
// column order = `classes`), plus their unweighted mean.
MetricReport evaluate_probs(const Mat& probs, const std::vector<std::string>& classes,
                            const std::vector<std::string>& truth);

struct CostReport {
  long long param_count = 0;
  long long flops_per_forward = 0;
  std::string convention = "1 multiply-add = 2 FLOPs";
  std::map<std::string, long long> param_breakdown;
  std::map<std::string, long long> flops_breakdown;
};

long long count_params(const reason::ReasonModel& model);

// FLOPs for scoring one packet at the model's window length, with per-token
// work (GNN per mission and static concept adaptation) amortized as in
// streaming inference.
long long count_flops(const reason::ReasonModel& model,
                      const std::vector<reason::MissionContext>& contexts);

// Closed-form attention FLOPs at d_k = d_model / heads.
long long attention_flops(int window, int d_model, int heads);

CostReport cost_report(const reason::ReasonModel& model,
                       const std::vector<reason::MissionContext>& contexts);

// ---------------------------------------------------------------------------
// baselines and sweeps

struct ProbeResult {
  std::map<std::string, double> per_class_auc;
  double mauc = 0;
};

// Multinomial logistic regression on fixed feature rows; the no-reasoning
// baseline the hierarchical model is compared against.
ProbeResult logistic_probe(const Mat& train_x, const std::vector<std::string>& train_labels,
                           const Mat& test_x, const std::vector<std::string>& test_labels,
                           const std::vector<std::string>& classes, uint64_t seed,
                           int epochs = 300, double lr = 0.05);

struct SweepPoint {
  double fraction = 0;
  double mauc = 0;
  bool failed = false;
  std::string error;
};

// Retrains via `run` per fraction on stratified subsets against the fixed
// temporal test split; failures are recorded per point, not propagated.
using TrainEvalFn = std::function<double(const ingest::SplitResult& split, double fraction)>;

std::vector<SweepPoint> scarcity_sweep(const ingest::LabeledSequence& data,
                                       const std::vector<double>& fractions, uint64_t seed,
                                       const TrainEvalFn& run);

}  // namespace packetclip::eval

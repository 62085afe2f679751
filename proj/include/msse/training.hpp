#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msse/model.hpp"

namespace msse::training {

// rows = truth, columns = prediction
using Confusion = std::vector<std::vector<long long>>;

struct Metrics {
    double uar;  // mean of per-class recalls, classes with no samples excluded
    double war;  // overall accuracy
};

// Exact rational evaluation with correct rounding, so balanced matrices give
// uar == war bitwise. An all-zero matrix is an empty-evaluation error.
Metrics uar_war(const Confusion& confusion);

enum class OptimizerKind { adam, sgd };
OptimizerKind optimizer_from_string(const std::string& name);
std::string optimizer_name(OptimizerKind k);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    int folds = 10;
    int pad_frames = 0;  // 0: pad to the longest utterance in the run

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg);

    // Consumes the accumulated gradients of every parameter. A non-finite
    // gradient aborts, naming the parameter.
    void step(const std::vector<std::pair<std::string, TensorPtr>>& params);

private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// -log probs[true_class], clamped at 1e-12.
TensorPtr cross_entropy(const TensorPtr& probs, int true_class);

// Per-class shuffled round-robin assignment: folds are disjoint, cover all
// indices, and per-class counts differ by at most one across folds.
std::vector<std::pair<std::vector<int>, std::vector<int>>> stratified_kfold(
    const std::vector<int>& labels, int k, std::uint64_t seed);

// Stratified single split; test_fraction of each class (rounded) goes to
// the second half.
std::pair<std::vector<int>, std::vector<int>> stratified_holdout(const std::vector<int>& labels,
                                                                 double test_fraction,
                                                                 std::uint64_t seed);

// One corpus worth of extracted features, aligned by index.
struct FeatureSet {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<TensorPtr> coeffs;  // each [T_i x n_mfcc]
    int n_classes = 0;

    std::size_t size() const { return ids.size(); }
};

// A model-ready sample: [n_mfcc x pad_frames x 1], zero padded or truncated.
struct Sample {
    std::string id;
    int label = -1;
    TensorPtr features;
};

TensorPtr prepare_features(const TensorPtr& coeffs, int pad_frames);

struct FoldReport {
    int fold = 0;
    Confusion confusion;
    double uar = 0.0;
    double war = 0.0;
    std::vector<double> loss_curve;

    nlohmann::json to_json() const;
};

struct EvalReport {
    Confusion confusion;  // summed over folds
    double uar = 0.0;
    double war = 0.0;
    std::vector<FoldReport> per_fold;

    nlohmann::json to_json() const;
};

// Minibatch gradient descent over the padded samples; returns the per-epoch
// mean loss curve and marks the model trained. Deterministic given rng.
std::vector<double> train_fold(model::Model& m, const std::vector<Sample>& train,
                               const TrainConfig& cfg, Rng& rng);

Confusion evaluate(model::Model& m, const std::vector<Sample>& eval_set);

// Hook for callers that persist per-fold artifacts (checkpoints).
using FoldCallback = std::function<void(int fold, model::Model& trained)>;

EvalReport run_cv(const FeatureSet& data, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const FoldCallback& on_fold = {});

// 80/20 stratified split; the trained model is handed back through out.
EvalReport run_holdout(const FeatureSet& data, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, model::Model* out = nullptr);

struct AblationRow {
    model::Variant variant;
    EvalReport report;
};

// One run_cv per wiring under identical seeds and folds.
std::vector<AblationRow> run_ablation_suite(const FeatureSet& data, model::ModelConfig base,
                                            const TrainConfig& tcfg);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct EmbeddingRecord {
    std::string utterance_id;
    int label = -1;
    std::vector<double> g_drf;
};

// Eval-mode fused embeddings for every utterance; refuses untrained models.
std::vector<EmbeddingRecord> export_embeddings(model::Model& m, const FeatureSet& data,
                                               int pad_frames = 0);

void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingRecord>& records);

}  // namespace msse::training

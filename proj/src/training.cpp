#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "msse/training.hpp"

namespace msse::training {

namespace {

// Enough digits to reproduce the double exactly when re-parsed.
std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int max_frames(const FeatureSet& data) {
    int t = 0;
    for (const auto& c : data.coeffs) t = std::max(t, c->shape[0]);
    return t;
}

std::vector<Sample> gather_samples(const FeatureSet& data, const std::vector<int>& idx, int pad) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (int i : idx) {
        out.push_back({data.ids[i], data.labels[i], prepare_features(data.coeffs[i], pad)});
    }
    return out;
}

void check_featureset(const FeatureSet& data, const model::ModelConfig& mcfg) {
    if (data.size() == 0) throw DataError("empty corpus");
    if (data.labels.size() != data.size() || data.coeffs.size() != data.size()) {
        throw DataError("feature set arrays are misaligned");
    }
    if (data.n_classes != mcfg.n_classes) {
        throw ConfigError("model config declares " + std::to_string(mcfg.n_classes) +
                          " classes but the corpus has " + std::to_string(data.n_classes));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] < 0 || data.labels[i] >= data.n_classes) {
            throw DataError("utterance '" + data.ids[i] + "' has out-of-range label " +
                            std::to_string(data.labels[i]));
        }
        if (data.coeffs[i]->ndim() != 2 || data.coeffs[i]->shape[1] != mcfg.n_mfcc) {
            throw DimensionError("utterance '" + data.ids[i] + "' features are " +
                                 shape_str(data.coeffs[i]->shape) + ", expected [T x " +
                                 std::to_string(mcfg.n_mfcc) + "]");
        }
    }
}

}  // namespace

TensorPtr cross_entropy(const TensorPtr& probs, int true_class) {
    return neg_log_prob(probs, true_class, 1e-12);
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> stratified_kfold(
    const std::vector<int>& labels, int k, std::uint64_t seed) {
    const int n = static_cast<int>(labels.size());
    if (k < 2) throw ConfigError("stratified_kfold needs k >= 2");
    if (k > n) {
        throw ConfigError("cannot make " + std::to_string(k) + " folds from " + std::to_string(n) +
                          " samples");
    }
    int n_classes = 0;
    for (int l : labels) {
        if (l < 0) throw DataError("negative class id in labels");
        n_classes = std::max(n_classes, l + 1);
    }
    std::vector<std::vector<int>> by_class(n_classes);
    for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

    Rng rng(seed);
    std::vector<std::vector<int>> fold_members(k);
    int assigned = 0;
    for (auto& members : by_class) {
        rng.shuffle(members);
        // rotate the starting fold so total fold sizes stay even
        const int start = assigned % k;
        for (std::size_t j = 0; j < members.size(); ++j) {
            fold_members[(start + static_cast<int>(j)) % k].push_back(members[j]);
        }
        assigned += static_cast<int>(members.size());
    }

    std::vector<std::pair<std::vector<int>, std::vector<int>>> folds(k);
    for (int f = 0; f < k; ++f) {
        std::sort(fold_members[f].begin(), fold_members[f].end());
        folds[f].second = fold_members[f];
        for (int g = 0; g < k; ++g) {
            if (g == f) continue;
            folds[f].first.insert(folds[f].first.end(), fold_members[g].begin(),
                                  fold_members[g].end());
        }
        std::sort(folds[f].first.begin(), folds[f].first.end());
    }
    return folds;
}

std::pair<std::vector<int>, std::vector<int>> stratified_holdout(const std::vector<int>& labels,
                                                                 double test_fraction,
                                                                 std::uint64_t seed) {
    if (test_fraction <= 0 || test_fraction >= 1) {
        throw ConfigError("holdout test fraction must lie in (0, 1)");
    }
    int n_classes = 0;
    for (int l : labels) {
        if (l < 0) throw DataError("negative class id in labels");
        n_classes = std::max(n_classes, l + 1);
    }
    std::vector<std::vector<int>> by_class(n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));

    Rng rng(seed);
    std::vector<int> train, test;
    for (auto& members : by_class) {
        rng.shuffle(members);
        const int n_test = static_cast<int>(std::lround(members.size() * test_fraction));
        for (std::size_t j = 0; j < members.size(); ++j) {
            (static_cast<int>(j) < n_test ? test : train).push_back(members[j]);
        }
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    if (train.empty() || test.empty()) {
        throw DataError("holdout split left one side empty; corpus too small");
    }
    return {train, test};
}

TensorPtr prepare_features(const TensorPtr& coeffs, int pad_frames) {
    if (coeffs->ndim() != 2) throw DimensionError("prepare_features expects [T x C]");
    if (pad_frames < 1) throw ConfigError("pad_frames must be positive");
    const int t_in = coeffs->shape[0];
    const int c = coeffs->shape[1];
    auto out = Tensor::create({c, pad_frames, 1});
    const int t_copy = std::min(t_in, pad_frames);
    for (int t = 0; t < t_copy; ++t) {
        for (int j = 0; j < c; ++j) {
            out->data[static_cast<std::size_t>(j) * pad_frames + t] = coeffs->data[t * c + j];
        }
    }
    return out;
}

std::vector<double> train_fold(model::Model& m, const std::vector<Sample>& train,
                               const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (train.empty()) throw DataError("train_fold called with no samples");
    auto params = m.named_params();
    Optimizer opt(cfg);
    const int n = static_cast<int>(train.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> curve;
    curve.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const int nb = std::min(cfg.batch_size, n - start);
            for (auto& [name, p] : params) p->zero_grad();
            for (int b = 0; b < nb; ++b) {
                const Sample& s = train[order[start + b]];
                auto out = m.forward(s.features, rng, true);
                auto loss = cross_entropy(out.probs, s.label);
                const double lv = loss->data[0];
                if (!std::isfinite(lv)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index) + ", utterance '" +
                                       s.id + "'");
                }
                backward(loss);
                epoch_loss += lv;
            }
            const double inv = 1.0 / nb;
            for (auto& [name, p] : params) {
                p->ensure_grad();
                for (auto& g : p->grad) g *= inv;
            }
            opt.step(params);
        }
        curve.push_back(epoch_loss / n);
    }
    m.trained = true;
    return curve;
}

Confusion evaluate(model::Model& m, const std::vector<Sample>& eval_set) {
    NoGradGuard guard;
    Rng rng(0);  // unused: eval mode has no stochastic path
    const int k = m.cfg.n_classes;
    Confusion confusion(k, std::vector<long long>(k, 0));
    for (const auto& s : eval_set) {
        if (s.label < 0 || s.label >= k) {
            throw DataError("utterance '" + s.id + "' has out-of-range label " +
                            std::to_string(s.label));
        }
        auto out = m.forward(s.features, rng, false);
        int pred = 0;
        for (int i = 1; i < k; ++i) {
            if (out.probs->data[i] > out.probs->data[pred]) pred = i;
        }
        ++confusion[s.label][pred];
    }
    return confusion;
}

nlohmann::json FoldReport::to_json() const {
    return nlohmann::json{{"fold", fold},
                          {"confusion", confusion},
                          {"uar", uar},
                          {"war", war},
                          {"loss_curve", loss_curve}};
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : per_fold) folds.push_back(f.to_json());
    return nlohmann::json{
        {"confusion", confusion}, {"uar", uar}, {"war", war}, {"per_fold", folds}};
}

namespace {

EvalReport run_splits(const FeatureSet& data, const model::ModelConfig& mcfg,
                      const TrainConfig& tcfg,
                      const std::vector<std::pair<std::vector<int>, std::vector<int>>>& splits,
                      const FoldCallback& on_fold, model::Model* last_model) {
    const int pad = tcfg.pad_frames > 0 ? tcfg.pad_frames : max_frames(data);
    EvalReport report;
    report.confusion.assign(mcfg.n_classes, std::vector<long long>(mcfg.n_classes, 0));
    for (std::size_t f = 0; f < splits.size(); ++f) {
        Rng rng(tcfg.seed + f);  // derived per-fold stream
        auto m = model::build_variant(mcfg, rng);
        auto train_samples = gather_samples(data, splits[f].first, pad);
        auto test_samples = gather_samples(data, splits[f].second, pad);

        FoldReport fr;
        fr.fold = static_cast<int>(f);
        fr.loss_curve = train_fold(m, train_samples, tcfg, rng);
        fr.confusion = evaluate(m, test_samples);
        const Metrics metrics = uar_war(fr.confusion);
        fr.uar = metrics.uar;
        fr.war = metrics.war;
        for (int i = 0; i < mcfg.n_classes; ++i) {
            for (int j = 0; j < mcfg.n_classes; ++j) {
                report.confusion[i][j] += fr.confusion[i][j];
            }
        }
        report.per_fold.push_back(std::move(fr));
        if (on_fold) on_fold(static_cast<int>(f), m);
        if (last_model) *last_model = m;
    }
    const Metrics aggregate = uar_war(report.confusion);
    report.uar = aggregate.uar;
    report.war = aggregate.war;
    return report;
}

}  // namespace

EvalReport run_cv(const FeatureSet& data, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  const FoldCallback& on_fold) {
    tcfg.validate();
    mcfg.validate();
    check_featureset(data, mcfg);
    auto splits = stratified_kfold(data.labels, tcfg.folds, tcfg.seed);
    return run_splits(data, mcfg, tcfg, splits, on_fold, nullptr);
}

EvalReport run_holdout(const FeatureSet& data, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, model::Model* out) {
    tcfg.validate();
    mcfg.validate();
    check_featureset(data, mcfg);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> splits = {
        stratified_holdout(data.labels, 0.2, tcfg.seed)};
    return run_splits(data, mcfg, tcfg, splits, {}, out);
}

std::vector<AblationRow> run_ablation_suite(const FeatureSet& data, model::ModelConfig base,
                                            const TrainConfig& tcfg) {
    std::vector<AblationRow> rows;
    for (model::Variant v : model::all_variants()) {
        model::ModelConfig cfg = base;
        cfg.variant = v;
        rows.push_back({v, run_cv(data, cfg, tcfg)});
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open ablation csv for writing: " + path);
    out << "variant,uar,war,fold\n";
    for (const auto& row : rows) {
        const std::string name = model::variant_short_name(row.variant);
        for (const auto& fr : row.report.per_fold) {
            out << name << ',' << fmt_double(fr.uar) << ',' << fmt_double(fr.war) << ','
                << fr.fold << '\n';
        }
        out << name << ',' << fmt_double(row.report.uar) << ',' << fmt_double(row.report.war)
            << ",all\n";
    }
    if (!out) throw IoError("short write while writing ablation csv: " + path);
}

std::vector<EmbeddingRecord> export_embeddings(model::Model& m, const FeatureSet& data,
                                               int pad_frames) {
    if (!m.trained) {
        throw DataError("model is untrained; train a checkpoint before exporting embeddings");
    }
    const int pad = pad_frames > 0 ? pad_frames : max_frames(data);
    NoGradGuard guard;
    Rng rng(0);
    std::vector<EmbeddingRecord> records;
    records.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto feats = prepare_features(data.coeffs[i], pad);
        auto out = m.forward(feats, rng, false);
        records.push_back({data.ids[i], data.labels[i], out.g_drf->data});
    }
    return records;
}

void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open embeddings csv for writing: " + path);
    for (const auto& r : records) {
        out << r.utterance_id << ',' << r.label;
        for (double v : r.g_drf) out << ',' << fmt_double(v);
        out << '\n';
    }
    if (!out) throw IoError("short write while writing embeddings csv: " + path);
}

}  // namespace msse::training

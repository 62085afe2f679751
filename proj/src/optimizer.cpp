#include <cmath>

#include "msse/training.hpp"

namespace msse::training {

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "sgd";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (learning_rate < 0) throw ConfigError("learning_rate must be non-negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (adam_epsilon <= 0) throw ConfigError("adam_epsilon must be positive");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (pad_frames < 0) throw ConfigError("pad_frames must be non-negative (0 = auto)");
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"batch_size", batch_size},
                          {"learning_rate", learning_rate},
                          {"optimizer", optimizer_name(optimizer)},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"adam_epsilon", adam_epsilon},
                          {"seed", seed},
                          {"folds", folds},
                          {"pad_frames", pad_frames}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "epochs") cfg.epochs = value.get<int>();
        else if (key == "batch_size") cfg.batch_size = value.get<int>();
        else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
        else if (key == "optimizer") cfg.optimizer = optimizer_from_string(value.get<std::string>());
        else if (key == "beta1") cfg.beta1 = value.get<double>();
        else if (key == "beta2") cfg.beta2 = value.get<double>();
        else if (key == "adam_epsilon") cfg.adam_epsilon = value.get<double>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "folds") cfg.folds = value.get<int>();
        else if (key == "pad_frames") cfg.pad_frames = value.get<int>();
        else throw ConfigError("unknown train config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

Optimizer::Optimizer(const TrainConfig& cfg)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_epsilon) {}

void Optimizer::step(const std::vector<std::pair<std::string, TensorPtr>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second->data.size(), 0.0);
            v_[i].assign(params[i].second->data.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw DimensionError("optimizer was initialized for a different parameter set");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params[i].first;
        Tensor& p = *params[i].second;
        p.ensure_grad();
        for (std::size_t e = 0; e < p.data.size(); ++e) {
            const double g = p.grad[e];
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + name + "'");
            }
            if (kind_ == OptimizerKind::sgd) {
                p.data[e] -= lr_ * g;
            } else {
                m_[i][e] = beta1_ * m_[i][e] + (1.0 - beta1_) * g;
                v_[i][e] = beta2_ * v_[i][e] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][e] / bc1;
                const double vhat = v_[i][e] / bc2;
                p.data[e] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }
}

}  // namespace msse::training

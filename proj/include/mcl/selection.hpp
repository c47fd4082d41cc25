#pragma once

// Choosing one ensemble member per sequence at inference time: by true
// prediction error (oracle), by reconstruction error of the observed
// prefix, or by a small batch-normalized MLP over the members' encoder
// features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/mcl_train.hpp"
#include "mcl/numerics.hpp"
#include "mcl/parallel.hpp"
#include "mcl/seq2seq.hpp"

namespace mcl {

enum class Strategy : std::uint8_t { oracle, reconstruction, classifier, average };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::oracle: return "oracle";
        case Strategy::reconstruction: return "recon";
        case Strategy::classifier: return "classifier";
        case Strategy::average: return "average";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view s) {
    for (auto k : {Strategy::oracle, Strategy::reconstruction, Strategy::classifier, Strategy::average})
        if (s == strategy_name(k)) return k;
    if (s == "reconstruction") return Strategy::reconstruction;
    throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

/// `index` is 0-based here; reports print index + 1.
struct SelectionResult {
    std::size_t index = 0;
    std::vector<double> scores;  // per member: MSE (lower wins) or probability (higher wins)
    Strategy strategy = Strategy::oracle;
    bool deployable = true;  // false for oracle: it looks at the future
};

namespace detail {

inline std::size_t argmin(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] < v[best]) best = k;
    return best;
}

inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

}  // namespace detail

/// Member with the lowest MSE over the predicted frames (needs the future).
template <typename T>
SelectionResult oracle_select(const Ensemble<T>& ens, const SequenceSample<T>& sample) {
    SelectionResult r;
    r.strategy = Strategy::oracle;
    r.deployable = false;
    const auto& spec = ens.spec();
    for (const auto& mem : ens.members) {
        ModelOutput<T> out;
        model_forward(mem.model, sample.frames, out);
        r.scores.push_back(static_cast<double>(prediction_sse(mem.model, sample.frames, out)) /
                           static_cast<double>(spec.horizon * spec.frame_dim));
    }
    r.index = detail::argmin(r.scores);
    return r;
}

/// Member that best reconstructs the observed prefix (L - n frames).
template <typename T>
SelectionResult reconstruction_select(const Ensemble<T>& ens, const Matrix<T>& prefix) {
    SelectionResult r;
    r.strategy = Strategy::reconstruction;
    const auto& spec = ens.spec();
    if (prefix.rows() != spec.input_length()) {
        throw std::invalid_argument("reconstruction_select: expected " + std::to_string(spec.input_length()) +
                                    " prefix frames, got " + std::to_string(prefix.rows()));
    }
    for (const auto& mem : ens.members) {
        ModelOutput<T> out;
        model_forward(mem.model, prefix, out);
        r.scores.push_back(static_cast<double>(reconstruction_sse(mem.model, prefix, out)) /
                           static_cast<double>(spec.input_length() * spec.frame_dim));
    }
    r.index = detail::argmin(r.scores);
    return r;
}

/// Concatenation over members of the encoder hidden state at the last input
/// frame: the top layer only, or every layer (bottom first) if `all_layers`.
template <typename T>
std::vector<double> classifier_features(const Ensemble<T>& ens, const Matrix<T>& prefix, bool all_layers = false) {
    std::vector<double> f;
    for (const auto& mem : ens.members) {
        const auto states = encode(mem.model, prefix);
        const std::size_t first = all_layers ? 0 : states.size() - 1;
        for (std::size_t l = first; l < states.size(); ++l)
            for (T v : states[l].h) f.push_back(static_cast<double>(v));
    }
    return f;
}

inline std::size_t feature_dim(const ModelConfig& cfg, std::size_t members, bool all_layers) {
    return members * cfg.hidden * (all_layers ? cfg.layers : 1);
}

// ---- MLP classifier ----

struct BatchNorm {
    std::vector<double> gamma, beta, running_mean, running_var;
    static constexpr double eps = 1e-5;
    static constexpr double decay = 0.9;

    explicit BatchNorm(std::size_t n = 0) : gamma(n, 1.0), beta(n, 0.0), running_mean(n, 0.0), running_var(n, 1.0) {}
    bool operator==(const BatchNorm&) const = default;
};

struct ClassifierConfig {
    std::size_t hidden1 = 256, hidden2 = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 60;
    std::size_t patience = 8;
    bool all_layers = false;
    std::uint64_t seed = 0;
};

/// fc(in -> h1) -> BN -> ReLU -> fc(h1 -> h2) -> BN -> ReLU -> fc(h2 -> M) -> softmax.
struct MlpClassifier {
    Matrix<double> w1, w2, w3;
    std::vector<double> b1, b2, b3;
    BatchNorm bn1, bn2;
    bool all_layers = false;

    static MlpClassifier random(std::size_t in, std::size_t h1, std::size_t h2, std::size_t out, Rng& rng) {
        if (in == 0 || h1 == 0 || h2 == 0 || out == 0) throw std::invalid_argument("classifier: zero layer width");
        auto glorot = [&](std::size_t r, std::size_t c) {
            return uniform_init<double>(rng, r, c, std::sqrt(6.0 / static_cast<double>(r + c)));
        };
        MlpClassifier m;
        m.w1 = glorot(h1, in);
        m.w2 = glorot(h2, h1);
        m.w3 = glorot(out, h2);
        m.b1.assign(h1, 0.0);
        m.b2.assign(h2, 0.0);
        m.b3.assign(out, 0.0);
        m.bn1 = BatchNorm(h1);
        m.bn2 = BatchNorm(h2);
        return m;
    }

    std::size_t input_dim() const { return w1.cols(); }
    std::size_t output_dim() const { return w3.rows(); }

    /// Trainable tensors in a fixed order (running statistics excluded).
    template <typename Self, typename F>
    static void for_each_param(Self& m, F&& f) {
        f(std::span(m.w1.values()));
        f(std::span(m.b1));
        f(std::span(m.bn1.gamma));
        f(std::span(m.bn1.beta));
        f(std::span(m.w2.values()));
        f(std::span(m.b2));
        f(std::span(m.bn2.gamma));
        f(std::span(m.bn2.beta));
        f(std::span(m.w3.values()));
        f(std::span(m.b3));
    }

    MlpClassifier zeros_like() const {
        MlpClassifier z = *this;
        for_each_param(z, [](auto s) { std::fill(s.begin(), s.end(), 0.0); });
        return z;
    }

    bool operator==(const MlpClassifier&) const = default;
};

namespace detail {

struct BnCache {
    Matrix<double> xhat;
    std::vector<double> inv_std;
};

// Batch normalization over the rows of x (rows = samples), in place.
inline void bn_forward(BatchNorm& bn, Matrix<double>& x, bool training, BnCache* cache) {
    const std::size_t N = x.rows(), F = x.cols();
    std::vector<double> mean(F, 0.0), var(F, 0.0);
    if (training) {
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < F; ++j) mean[j] += x(i, j);
        for (double& m : mean) m /= static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < F; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
        for (double& v : var) v /= static_cast<double>(N);
        for (std::size_t j = 0; j < F; ++j) {
            bn.running_mean[j] = BatchNorm::decay * bn.running_mean[j] + (1.0 - BatchNorm::decay) * mean[j];
            bn.running_var[j] = BatchNorm::decay * bn.running_var[j] + (1.0 - BatchNorm::decay) * var[j];
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    if (cache) {
        cache->xhat = Matrix<double>(N, F);
        cache->inv_std.resize(F);
    }
    for (std::size_t j = 0; j < F; ++j) {
        const double inv = 1.0 / std::sqrt(var[j] + BatchNorm::eps);
        if (cache) cache->inv_std[j] = inv;
        for (std::size_t i = 0; i < N; ++i) {
            const double xh = (x(i, j) - mean[j]) * inv;
            if (cache) cache->xhat(i, j) = xh;
            x(i, j) = bn.gamma[j] * xh + bn.beta[j];
        }
    }
}

// dy -> dx in place; accumulates dgamma, dbeta. Batch statistics path.
inline void bn_backward(const BatchNorm& bn, const BnCache& c, Matrix<double>& d, BatchNorm& g) {
    const std::size_t N = d.rows(), F = d.cols();
    const double n = static_cast<double>(N);
    for (std::size_t j = 0; j < F; ++j) {
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            g.gamma[j] += d(i, j) * c.xhat(i, j);
            g.beta[j] += d(i, j);
            const double dxh = d(i, j) * bn.gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * c.xhat(i, j);
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double dxh = d(i, j) * bn.gamma[j];
            d(i, j) = c.inv_std[j] / n * (n * dxh - sum_dxh - c.xhat(i, j) * sum_dxh_xh);
        }
    }
}

// y = x W^T + b over rows.
inline Matrix<double> dense(const Matrix<double>& x, const Matrix<double>& w, const std::vector<double>& b) {
    Matrix<double> y(x.rows(), w.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto yr = y.row(i);
        std::copy(b.begin(), b.end(), yr.begin());
        matvec_acc<double>(w, x.row(i), yr);
    }
    return y;
}

inline void dense_backward(const Matrix<double>& x, const Matrix<double>& w, const Matrix<double>& dy,
                           Matrix<double>& dw, std::vector<double>& db, Matrix<double>* dx) {
    if (dx) *dx = Matrix<double>(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        outer_acc<double>(dw, dy.row(i), x.row(i));
        for (std::size_t k = 0; k < db.size(); ++k) db[k] += dy(i, k);
        if (dx) matvec_t_acc<double>(w, dy.row(i), dx->row(i));
    }
}

inline void relu(Matrix<double>& x) {
    for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

inline void softmax_rows(Matrix<double>& z) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double& v : r) s += (v = std::exp(v - mx));
        for (double& v : r) v /= s;
    }
}

struct MlpCache {
    Matrix<double> x, a1, a2, probs;  // a1/a2: post-ReLU activations
    BnCache bn1, bn2;
};

}  // namespace detail

/// Pre-softmax scores for a batch (rows = samples). Training mode uses batch
/// statistics and updates the running estimates.
inline Matrix<double> classifier_logits(MlpClassifier& c, const Matrix<double>& x, bool training,
                                        detail::MlpCache* cache = nullptr) {
    if (x.cols() != c.input_dim()) {
        throw std::invalid_argument("classifier: feature length " + std::to_string(x.cols()) + " != expected " +
                                    std::to_string(c.input_dim()));
    }
    Matrix<double> h1 = detail::dense(x, c.w1, c.b1);
    detail::bn_forward(c.bn1, h1, training, cache ? &cache->bn1 : nullptr);
    detail::relu(h1);
    Matrix<double> h2 = detail::dense(h1, c.w2, c.b2);
    detail::bn_forward(c.bn2, h2, training, cache ? &cache->bn2 : nullptr);
    detail::relu(h2);
    Matrix<double> z = detail::dense(h2, c.w3, c.b3);
    if (cache) {
        cache->x = x;
        cache->a1 = std::move(h1);
        cache->a2 = std::move(h2);
    }
    return z;
}

/// Inference: class probabilities per row, running statistics only.
inline Matrix<double> classifier_probabilities(const MlpClassifier& c, const Matrix<double>& x) {
    auto& mut = const_cast<MlpClassifier&>(c);  // eval mode never writes
    Matrix<double> z = classifier_logits(mut, x, false);
    detail::softmax_rows(z);
    return z;
}

/// Mean cross-entropy over the batch; accumulates its gradient into `grads`.
/// Training-mode batch normalization.
inline double classifier_loss_and_gradients(MlpClassifier& c, const Matrix<double>& x,
                                            std::span<const std::size_t> labels, MlpClassifier& grads) {
    detail::MlpCache cache;
    Matrix<double> p = classifier_logits(c, x, true, &cache);
    detail::softmax_rows(p);
    const std::size_t N = x.rows();
    const double n = static_cast<double>(N);
    double loss = 0.0;
    Matrix<double> dz = p;
    for (std::size_t i = 0; i < N; ++i) {
        loss -= std::log(std::max(p(i, labels[i]), 1e-300));
        dz(i, labels[i]) -= 1.0;
    }
    for (double& v : dz.values()) v /= n;
    Matrix<double> d2, d1;
    detail::dense_backward(cache.a2, c.w3, dz, grads.w3, grads.b3, &d2);
    for (std::size_t k = 0; k < d2.size(); ++k)
        if (cache.a2.data()[k] <= 0.0) d2.data()[k] = 0.0;
    detail::bn_backward(c.bn2, cache.bn2, d2, grads.bn2);
    detail::dense_backward(cache.a1, c.w2, d2, grads.w2, grads.b2, &d1);
    for (std::size_t k = 0; k < d1.size(); ++k)
        if (cache.a1.data()[k] <= 0.0) d1.data()[k] = 0.0;
    detail::bn_backward(c.bn1, cache.bn1, d1, grads.bn1);
    detail::dense_backward(cache.x, c.w1, d1, grads.w1, grads.b1, nullptr);
    return loss / n;
}

struct ClassifierTrainLog {
    std::vector<double> train_loss, validation_accuracy;
    double best_validation_accuracy = 0.0;
    std::vector<std::string> warnings;
};

inline double classifier_accuracy(const MlpClassifier& c, const Matrix<double>& x, std::span<const std::size_t> labels) {
    if (x.rows() == 0) return 0.0;
    const auto p = classifier_probabilities(c, x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = p.row(i);
        if (static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(x.rows());
}

/// Minibatch SGD with momentum on cross-entropy, early stopping on
/// validation accuracy (best snapshot kept). Batches of a single sample are
/// skipped because batch statistics are undefined for them.
inline ClassifierTrainLog train_classifier_on_features(MlpClassifier& c, const Matrix<double>& x,
                                                       std::span<const std::size_t> y, const Matrix<double>& vx,
                                                       std::span<const std::size_t> vy, const ClassifierConfig& cfg) {
    if (x.rows() != y.size() || vx.rows() != vy.size()) throw std::invalid_argument("classifier: label count mismatch");
    if (x.rows() < 2) throw std::invalid_argument("classifier: need at least two training samples");
    if (cfg.batch_size < 2) throw std::invalid_argument("classifier: batch size must be >= 2");
    for (auto l : y)
        if (l >= c.output_dim()) throw std::invalid_argument("classifier: label out of range");
    ClassifierTrainLog log;
    if (std::all_of(y.begin(), y.end(), [&](std::size_t l) { return l == y[0]; })) {
        log.warnings.push_back("all training labels are member " + std::to_string(y[0] + 1) +
                               "; classifier is degenerate");
    }
    MlpClassifier velocity = c.zeros_like();
    MlpClassifier best = c;
    log.best_validation_accuracy = -1.0;
    std::size_t since_best = 0;
    Rng rng = Rng(cfg.seed).split(0xc1a55u);
    std::vector<std::size_t> order(x.rows());
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo + 1 < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            if (hi - lo < 2) break;
            Matrix<double> bx(hi - lo, x.cols());
            std::vector<std::size_t> by(hi - lo);
            for (std::size_t k = lo; k < hi; ++k) {
                std::copy(x.row(order[k]).begin(), x.row(order[k]).end(), bx.row(k - lo).begin());
                by[k - lo] = y[order[k]];
            }
            MlpClassifier g = c.zeros_like();
            total += classifier_loss_and_gradients(c, bx, by, g);
            ++batches;
            std::vector<std::span<double>> ps, gs, vs;
            MlpClassifier::for_each_param(c, [&](std::span<double> s) { ps.push_back(s); });
            MlpClassifier::for_each_param(g, [&](std::span<double> s) { gs.push_back(s); });
            MlpClassifier::for_each_param(velocity, [&](std::span<double> s) { vs.push_back(s); });
            for (std::size_t t = 0; t < ps.size(); ++t) {
                for (std::size_t k = 0; k < ps[t].size(); ++k) {
                    vs[t][k] = cfg.momentum * vs[t][k] + cfg.learning_rate * gs[t][k];
                    ps[t][k] -= vs[t][k];
                }
            }
        }
        log.train_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
        const double acc = vx.rows() ? classifier_accuracy(c, vx, vy) : classifier_accuracy(c, x, y);
        log.validation_accuracy.push_back(acc);
        if (acc > log.best_validation_accuracy) {
            log.best_validation_accuracy = acc;
            best = c;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    c = std::move(best);
    return log;
}

// ---- per-sample evaluation shared by every strategy ----

/// Everything inference needs about one (sample, member) pair.
template <typename T>
struct MemberEvaluation {
    double reconstruction_mse = 0.0;
    double prediction_mse = 0.0;
    double loss = 0.0;  // training objective (all L frames)
    Matrix<T> prediction;
    std::vector<double> feature;  // encoder h at the last input frame
};

template <typename T>
struct EvaluationTable {
    std::size_t samples = 0, members = 0;
    std::vector<MemberEvaluation<T>> cells;  // [sample * members + member]

    const MemberEvaluation<T>& at(std::size_t i, std::size_t m) const { return cells[i * members + m]; }
};

template <typename T>
EvaluationTable<T> evaluate_ensemble(const Ensemble<T>& ens, std::span<const SequenceSample<T>> samples,
                                     std::size_t threads = 1, bool all_layers = false) {
    ens.validate();
    EvaluationTable<T> table;
    table.samples = samples.size();
    table.members = ens.size();
    table.cells.resize(samples.size() * ens.size());
    const auto& spec = ens.spec();
    const double recon_n = static_cast<double>(spec.input_length() * spec.frame_dim);
    const double pred_n = static_cast<double>(spec.horizon * spec.frame_dim);
    parallel_for(table.cells.size(), threads, [&](std::size_t job) {
        const std::size_t i = job / ens.size(), m = job % ens.size();
        const auto& model = ens.members[m].model;
        ModelOutput<T> out;
        model_forward(model, samples[i].frames, out);
        auto& cell = table.cells[job];
        const double r = static_cast<double>(reconstruction_sse(model, samples[i].frames, out));
        const double p = static_cast<double>(prediction_sse(model, samples[i].frames, out));
        cell.reconstruction_mse = r / recon_n;
        cell.prediction_mse = p / pred_n;
        cell.loss = (r + p) / (recon_n + pred_n);
        cell.prediction = std::move(out.prediction);
        const std::size_t first = all_layers ? 0 : out.encoder_trace.steps.size() - 1;
        for (std::size_t l = first; l < out.encoder_trace.steps.size(); ++l)
            for (T v : out.encoder_trace.steps[l].back().h) cell.feature.push_back(static_cast<double>(v));
    });
    return table;
}

template <typename T>
Matrix<double> feature_matrix(const EvaluationTable<T>& table) {
    if (table.samples == 0) return Matrix<double>(0, 0);
    std::size_t dim = 0;
    for (std::size_t m = 0; m < table.members; ++m) dim += table.at(0, m).feature.size();
    Matrix<double> x(table.samples, dim);
    for (std::size_t i = 0; i < table.samples; ++i) {
        std::size_t off = 0;
        for (std::size_t m = 0; m < table.members; ++m) {
            const auto& f = table.at(i, m).feature;
            std::copy(f.begin(), f.end(), x.row(i).begin() + static_cast<std::ptrdiff_t>(off));
            off += f.size();
        }
    }
    return x;
}

/// Oracle labels: member with the lowest prediction MSE per sample.
template <typename T>
std::vector<std::size_t> oracle_labels(const EvaluationTable<T>& table) {
    std::vector<std::size_t> out(table.samples);
    for (std::size_t i = 0; i < table.samples; ++i) {
        std::size_t best = 0;
        for (std::size_t m = 1; m < table.members; ++m)
            if (table.at(i, m).prediction_mse < table.at(i, best).prediction_mse) best = m;
        out[i] = best;
    }
    return out;
}

/// Trains a classifier on a frozen ensemble; labels are oracle indices.
template <typename T>
ClassifierTrainLog train_classifier(const Ensemble<T>& ens, std::span<const SequenceSample<T>> train_set,
                                    std::span<const SequenceSample<T>> val_set, const ClassifierConfig& cfg,
                                    MlpClassifier& out, std::size_t threads = 1) {
    const auto tr = evaluate_ensemble(ens, train_set, threads, cfg.all_layers);
    const auto va = evaluate_ensemble(ens, val_set, threads, cfg.all_layers);
    const auto x = feature_matrix(tr), vx = feature_matrix(va);
    const auto y = oracle_labels(tr), vy = oracle_labels(va);
    Rng rng = Rng(cfg.seed).split(0x1417u);
    out = MlpClassifier::random(x.cols(), cfg.hidden1, cfg.hidden2, ens.size(), rng);
    out.all_layers = cfg.all_layers;
    return train_classifier_on_features(out, x, y, vx.rows() ? vx : Matrix<double>(0, x.cols()), vy, cfg);
}

/// Member with the highest classifier probability.
template <typename T>
SelectionResult classifier_select(const Ensemble<T>& ens, const MlpClassifier& c, const Matrix<T>& prefix) {
    const auto f = classifier_features(ens, prefix, c.all_layers);
    Matrix<double> x(1, f.size());
    std::copy(f.begin(), f.end(), x.row(0).begin());
    const auto p = classifier_probabilities(c, x);
    SelectionResult r;
    r.strategy = Strategy::classifier;
    r.scores.assign(p.row(0).begin(), p.row(0).end());
    r.index = detail::argmax(r.scores);
    return r;
}

/// Chosen member per sample for a selecting strategy, from a shared table.
template <typename T>
std::vector<std::size_t> choose(const EvaluationTable<T>& table, Strategy s, const MlpClassifier* classifier = nullptr) {
    std::vector<std::size_t> out(table.samples, 0);
    switch (s) {
        case Strategy::oracle: return oracle_labels(table);
        case Strategy::reconstruction:
            for (std::size_t i = 0; i < table.samples; ++i) {
                std::size_t best = 0;
                for (std::size_t m = 1; m < table.members; ++m)
                    if (table.at(i, m).reconstruction_mse < table.at(i, best).reconstruction_mse) best = m;
                out[i] = best;
            }
            return out;
        case Strategy::classifier: {
            if (!classifier) throw std::invalid_argument("classifier strategy needs a trained classifier");
            if (table.samples == 0) return out;
            const auto p = classifier_probabilities(*classifier, feature_matrix(table));
            for (std::size_t i = 0; i < table.samples; ++i) {
                const auto r = p.row(i);
                out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
            }
            return out;
        }
        case Strategy::average: throw std::invalid_argument("average is a blend, not a selection");
    }
    return out;
}

/// Member minimizing the full training objective per sample (the MCL assignment).
template <typename T>
std::vector<std::size_t> assignment_labels(const EvaluationTable<T>& table) {
    std::vector<std::size_t> out(table.samples);
    for (std::size_t i = 0; i < table.samples; ++i) {
        std::size_t best = 0;
        for (std::size_t m = 1; m < table.members; ++m)
            if (table.at(i, m).loss < table.at(i, best).loss) best = m;
        out[i] = best;
    }
    return out;
}

}  // namespace mcl

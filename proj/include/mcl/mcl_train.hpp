#pragma once

// Multiple choice learning for an ensemble of seq2seq models: every sample is
// charged only to the member with the lowest loss, and only that member
// receives its gradient. Training alternates between the assignment and an
// SGD-with-momentum update of each member (coordinate descent).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/numerics.hpp"
#include "mcl/parallel.hpp"
#include "mcl/seq2seq.hpp"

namespace mcl {

struct OptimizerConfig {
    double learning_rate = 2e-3;
    double momentum = 0.9;
    double clip_norm = 5.0;  // <= 0 disables clipping
    std::size_t batch_size = 32;
    // Idle members (no samples in a batch) keep their velocity untouched
    // instead of letting it decay.
    bool freeze_idle_velocity = false;
    // Gradients follow the squared error summed over every element of a
    // sample; false uses the per-element mean. Reported losses are means
    // either way.
    bool sum_squared_error = true;

    template <typename T>
    T gradient_scale(const SequenceSpec& spec) const {
        return sum_squared_error ? static_cast<T>(spec.length * spec.frame_dim) : T(1);
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
        if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    }
};

template <typename T>
struct EnsembleMember {
    Seq2SeqModel<T> model;
    Seq2SeqModel<T> velocity;

    explicit EnsembleMember(Seq2SeqModel<T> m) : model(std::move(m)), velocity(model.zeros_like()) {}
    EnsembleMember(Seq2SeqModel<T> m, Seq2SeqModel<T> v) : model(std::move(m)), velocity(std::move(v)) {}

    bool operator==(const EnsembleMember&) const = default;
};

template <typename T>
struct Ensemble {
    std::vector<EnsembleMember<T>> members;

    /// M members, each initialized from its own split of `rng`.
    static Ensemble random(const SequenceSpec& spec, const ModelConfig& cfg, std::size_t count, const Rng& rng,
                           double scale = 0.08, double forget_bias = 1.0) {
        if (count == 0) throw std::invalid_argument("ensemble needs at least one member");
        Ensemble e;
        for (std::size_t m = 0; m < count; ++m) {
            Rng member_rng = rng.split(m);
            e.members.emplace_back(Seq2SeqModel<T>::random(spec, cfg, member_rng, scale, forget_bias));
        }
        return e;
    }

    std::size_t size() const { return members.size(); }
    const SequenceSpec& spec() const { return members.front().model.spec; }
    const ModelConfig& config() const { return members.front().model.config; }

    void validate() const {
        if (members.empty()) throw std::invalid_argument("empty ensemble");
        for (const auto& m : members) {
            if (!(m.model.spec == spec()) || !(m.model.config == config())) {
                throw std::invalid_argument("ensemble members disagree on architecture");
            }
        }
    }

    bool operator==(const Ensemble&) const = default;
};

/// Binary p_im with exactly one 1 per row, stored as the winning index per row.
struct AssignmentMatrix {
    std::size_t models = 0;
    std::vector<std::size_t> winner;

    std::size_t rows() const { return winner.size(); }
    int operator()(std::size_t i, std::size_t m) const { return winner[i] == m ? 1 : 0; }

    std::vector<std::size_t> counts() const {
        std::vector<std::size_t> c(models, 0);
        for (std::size_t w : winner) ++c[w];
        return c;
    }
};

/// Row-wise argmin; ties go to the lowest model index.
template <typename T>
AssignmentMatrix assign(const Matrix<T>& losses) {
    AssignmentMatrix a;
    a.models = losses.cols();
    if (a.models == 0) throw std::invalid_argument("assign: no models");
    a.winner.resize(losses.rows());
    for (std::size_t i = 0; i < losses.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t m = 0; m < a.models; ++m) {
            const T v = losses(i, m);
            if (std::isnan(v)) {
                throw std::domain_error("assign: NaN loss for sample " + std::to_string(i) + ", model " +
                                        std::to_string(m));
            }
            if (v < losses(i, best)) best = m;
        }
        a.winner[i] = best;
    }
    return a;
}

template <typename T>
double global_l2_norm(const Seq2SeqModel<T>& grads) {
    double sq = 0.0;
    for (auto t : grads.tensors())
        for (T v : t) sq += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sq);
}

/// Classical momentum: v <- lambda v + eta g; theta <- theta - v, with g
/// first clipped to global L2 norm clip_norm. `grads` is clipped in place.
template <typename T>
void sgd_momentum_update(Seq2SeqModel<T>& params, Seq2SeqModel<T>& grads, Seq2SeqModel<T>& velocity,
                         const OptimizerConfig& opt) {
    auto p = params.tensors();
    auto g = grads.tensors();
    auto v = velocity.tensors();
    if (p.size() != g.size() || p.size() != v.size()) throw std::invalid_argument("sgd: tensor count mismatch");
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].size() != g[t].size() || p[t].size() != v[t].size()) {
            throw std::invalid_argument("sgd: shape mismatch in tensor " + std::to_string(t));
        }
    }
    if (opt.clip_norm > 0.0) {
        const double norm = global_l2_norm(grads);
        if (norm > opt.clip_norm) {
            const T scale = static_cast<T>(opt.clip_norm / norm);
            for (auto t : g)
                for (T& x : t) x *= scale;
        }
    }
    const T lambda = static_cast<T>(opt.momentum);
    const T eta = static_cast<T>(opt.learning_rate);
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t k = 0; k < p[t].size(); ++k) {
            v[t][k] = lambda * v[t][k] + eta * g[t][k];
            p[t][k] -= v[t][k];
        }
    }
}

/// Options shared by every training entry point.
struct TrainOptions {
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    std::size_t threads = 1;
    DropoutSpec dropout;  // `training` is set internally
    std::uint64_t seed = 0;
};

namespace detail {

inline Rng dropout_rng(std::uint64_t seed, std::uint64_t step, std::size_t sample, std::size_t member) {
    return Rng(seed).split(0xd40d0u).split(step).split(sample).split(member);
}

}  // namespace detail

/// Buffers reused across steps.
template <typename T>
struct StepWorkspace {
    std::vector<ModelOutput<T>> outputs;  // [sample * M + member]
    std::vector<Seq2SeqModel<T>> grads;   // per member
};

struct StepResult {
    double objective = 0.0;  // sum over the batch of the winning member's loss
    std::vector<std::size_t> counts;
    AssignmentMatrix assignment;
};

struct StepContext {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::size_t threads = 1;
    DropoutSpec dropout;
};

/// One coordinate-descent step on a batch: forward every member on every
/// sample, assign each sample to its best member, back-propagate each
/// member's assigned samples only (in batch order) and update every member.
template <typename T>
StepResult mcl_step(Ensemble<T>& ens, std::span<const SequenceSample<T>* const> batch, const OptimizerConfig& opt,
                    const StepContext& ctx, StepWorkspace<T>& ws) {
    if (batch.empty()) throw std::invalid_argument("mcl_step: empty batch");
    const std::size_t B = batch.size();
    const std::size_t M = ens.size();
    ws.outputs.resize(B * M);
    Matrix<T> losses(B, M);
    DropoutSpec dropout = ctx.dropout;
    dropout.training = true;
    parallel_for(B * M, ctx.threads, [&](std::size_t job) {
        const std::size_t i = job / M, m = job % M;
        Rng rng = detail::dropout_rng(ctx.seed, ctx.step, i, m);
        losses(i, m) = sequence_loss(ens.members[m].model, *batch[i], ws.outputs[job], ForwardOptions{dropout, &rng});
    });
    StepResult result;
    result.assignment = assign(losses);
    result.counts = result.assignment.counts();
    for (std::size_t i = 0; i < B; ++i) result.objective += static_cast<double>(losses(i, result.assignment.winner[i]));

    ws.grads.resize(M);
    parallel_for(M, ctx.threads, [&](std::size_t m) {
        auto& member = ens.members[m];
        auto& g = ws.grads[m];
        if (g.encoder.empty()) {
            g = member.model.zeros_like();
        } else {
            for (auto t : g.tensors()) std::fill(t.begin(), t.end(), T(0));
        }
        const T gs = opt.gradient_scale<T>(member.model.spec);
        for (std::size_t i = 0; i < B; ++i) {
            if (result.assignment.winner[i] == m) model_backward(member.model, *batch[i], ws.outputs[i * M + m], g, gs);
        }
        if (result.counts[m] == 0 && opt.freeze_idle_velocity) return;
        sgd_momentum_update(member.model, g, member.velocity, opt);
    });
    return result;
}

/// Plain (non-MCL) minibatch step of one member: every sample contributes.
/// `member_index` only selects the dropout stream.
template <typename T>
double plain_step(EnsembleMember<T>& member, std::span<const SequenceSample<T>* const> batch,
                  const OptimizerConfig& opt, const StepContext& ctx, std::size_t member_index,
                  StepWorkspace<T>& ws) {
    if (batch.empty()) throw std::invalid_argument("plain_step: empty batch");
    ws.outputs.resize(batch.size());
    std::vector<T> losses(batch.size());
    DropoutSpec dropout = ctx.dropout;
    dropout.training = true;
    parallel_for(batch.size(), ctx.threads, [&](std::size_t i) {
        Rng rng = detail::dropout_rng(ctx.seed, ctx.step, i, member_index);
        losses[i] = sequence_loss(member.model, *batch[i], ws.outputs[i], ForwardOptions{dropout, &rng});
    });
    ws.grads.resize(1);
    auto& g = ws.grads[0];
    if (g.encoder.empty()) {
        g = member.model.zeros_like();
    } else {
        for (auto t : g.tensors()) std::fill(t.begin(), t.end(), T(0));
    }
    double total = 0.0;
    const T gs = opt.gradient_scale<T>(member.model.spec);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        model_backward(member.model, *batch[i], ws.outputs[i], g, gs);
        total += static_cast<double>(losses[i]);
    }
    sgd_momentum_update(member.model, g, member.velocity, opt);
    return total;
}

/// Per-sample losses of every member in eval mode: rows = samples, cols = members.
template <typename T>
Matrix<T> ensemble_losses(const Ensemble<T>& ens, std::span<const SequenceSample<T>> samples, std::size_t threads) {
    const std::size_t M = ens.size();
    Matrix<T> losses(samples.size(), M);
    parallel_for(samples.size() * M, threads, [&](std::size_t job) {
        ModelOutput<T> out;
        losses(job / M, job % M) = sequence_loss(ens.members[job % M].model, samples[job / M], out);
    });
    return losses;
}

/// Mean over samples of the per-sample minimum member loss.
template <typename T>
double oracle_loss(const Ensemble<T>& ens, std::span<const SequenceSample<T>> samples, std::size_t threads) {
    if (samples.empty()) throw std::invalid_argument("oracle_loss: empty dataset");
    const auto losses = ensemble_losses(ens, samples, threads);
    double total = 0.0;
    for (std::size_t i = 0; i < losses.rows(); ++i) {
        T best = losses(i, 0);
        for (std::size_t m = 1; m < losses.cols(); ++m) best = std::min(best, losses(i, m));
        total += static_cast<double>(best);
    }
    return total / static_cast<double>(samples.size());
}

/// Random near-equal partition of [0, n) into `parts` disjoint index sets.
inline std::vector<std::vector<std::size_t>> random_partition(std::size_t n, std::size_t parts, Rng& rng) {
    if (parts == 0 || n < parts) {
        throw std::invalid_argument("random_partition: " + std::to_string(n) + " items cannot fill " +
                                    std::to_string(parts) + " non-empty subsets");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<std::vector<std::size_t>> out(parts);
    for (std::size_t p = 0; p < parts; ++p) {
        const std::size_t lo = p * n / parts, hi = (p + 1) * n / parts;
        out[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

/// Trains member m for exactly one epoch of plain MSE SGD on the m-th subset
/// of a random partition of the training set. Returns the partition.
template <typename T>
std::vector<std::vector<std::size_t>> diversity_pretrain(Ensemble<T>& ens, std::span<const SequenceSample<T>> train_set,
                                                         const OptimizerConfig& opt, const TrainOptions& options,
                                                         Rng& rng) {
    opt.validate();
    ens.validate();
    auto parts = random_partition(train_set.size(), ens.size(), rng);
    StepWorkspace<T> ws;
    std::vector<const SequenceSample<T>*> batch;
    for (std::size_t m = 0; m < ens.size(); ++m) {
        const auto& subset = parts[m];
        std::uint64_t step = 0;
        for (std::size_t lo = 0; lo < subset.size(); lo += opt.batch_size) {
            const std::size_t hi = std::min(subset.size(), lo + opt.batch_size);
            batch.clear();
            for (std::size_t k = lo; k < hi; ++k) batch.push_back(&train_set[subset[k]]);
            StepContext ctx{options.seed ^ 0x5eed0000u, step++, options.threads, options.dropout};
            plain_step(ens.members[m], std::span<const SequenceSample<T>* const>(batch), opt, ctx, m, ws);
        }
    }
    return parts;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;       // mean per-sample objective over the epoch
    double validation_loss = 0.0;  // mean per-sample oracle loss
    std::vector<std::size_t> counts;
    bool improved = false;

    std::string to_line() const {
        std::ostringstream os;
        os.precision(9);
        os << "epoch=" << epoch << " train_loss=" << train_loss << " val_oracle_loss=" << validation_loss
           << " counts=";
        for (std::size_t m = 0; m < counts.size(); ++m) os << (m ? "," : "") << counts[m];
        return os.str();
    }
};

struct TrainState {
    std::size_t epoch = 0;
    double best_validation = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::uint64_t steps = 0;

    bool operator==(const TrainState&) const = default;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    TrainState state;

    std::string to_lines() const {
        std::string out;
        for (const auto& e : epochs) out += e.to_line() + "\n";
        return out;
    }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

template <typename T, typename Step, typename Validate>
TrainLog run_epochs(Ensemble<T>& ens, std::span<const SequenceSample<T>> train_set, const OptimizerConfig& opt,
                    const TrainOptions& options, const TrainState* resume, const EpochCallback& on_epoch,
                    Step&& step, Validate&& validate) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    opt.validate();
    ens.validate();
    TrainLog log;
    if (resume) log.state = *resume;
    Ensemble<T> best = ens;
    StepWorkspace<T> ws;
    std::vector<std::size_t> order(train_set.size());
    std::vector<const SequenceSample<T>*> batch;
    const Rng shuffle_root = Rng(options.seed).split(0x5u);
    while (log.state.epoch < options.max_epochs) {
        const std::size_t epoch = ++log.state.epoch;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = shuffle_root.split(epoch);
        shuffle.shuffle(order);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.counts.assign(ens.size(), 0);
        double objective = 0.0;
        for (std::size_t lo = 0; lo < order.size(); lo += opt.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + opt.batch_size);
            batch.clear();
            for (std::size_t k = lo; k < hi; ++k) batch.push_back(&train_set[order[k]]);
            StepContext ctx{options.seed, log.state.steps++, options.threads, options.dropout};
            objective += step(std::span<const SequenceSample<T>* const>(batch), ctx, ws, rec.counts);
        }
        rec.train_loss = objective / static_cast<double>(train_set.size());
        rec.validation_loss = validate();
        if (rec.validation_loss < log.state.best_validation) {
            log.state.best_validation = rec.validation_loss;
            log.state.since_best = 0;
            rec.improved = true;
            best = ens;
        } else {
            ++log.state.since_best;
        }
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (log.state.since_best >= options.patience) break;
    }
    ens = std::move(best);
    return log;
}

}  // namespace detail

/// MCL training with early stopping on the validation oracle loss. After
/// `patience` consecutive epochs without improvement training stops (so
/// patience 0 runs exactly one epoch); the ensemble is left at the best
/// validation snapshot.
template <typename T>
TrainLog train(Ensemble<T>& ens, std::span<const SequenceSample<T>> train_set,
               std::span<const SequenceSample<T>> val_set, const OptimizerConfig& opt, const TrainOptions& options,
               const TrainState* resume = nullptr, const EpochCallback& on_epoch = {}) {
    if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
    return detail::run_epochs(
        ens, train_set, opt, options, resume, on_epoch,
        [&](std::span<const SequenceSample<T>* const> batch, const StepContext& ctx, StepWorkspace<T>& ws,
            std::vector<std::size_t>& counts) {
            const auto r = mcl_step(ens, batch, opt, ctx, ws);
            for (std::size_t m = 0; m < counts.size(); ++m) counts[m] += r.counts[m];
            return r.objective;
        },
        [&] { return oracle_loss(ens, val_set, options.threads); });
}

/// Ordinary single-model training (no assignment step) with the same
/// batching, shuffling and early-stopping rules as train().
template <typename T>
TrainLog train_single(EnsembleMember<T>& member, std::span<const SequenceSample<T>> train_set,
                      std::span<const SequenceSample<T>> val_set, const OptimizerConfig& opt,
                      const TrainOptions& options, const EpochCallback& on_epoch = {}) {
    if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
    Ensemble<T> holder;
    holder.members.push_back(std::move(member));
    auto& m = holder.members.front();
    auto log = detail::run_epochs(
        holder, train_set, opt, options, nullptr, on_epoch,
        [&](std::span<const SequenceSample<T>* const> batch, const StepContext& ctx, StepWorkspace<T>& ws,
            std::vector<std::size_t>& counts) {
            counts[0] += batch.size();
            return plain_step(m, batch, opt, ctx, 0, ws);
        },
        [&] {
            double total = 0.0;
            std::vector<T> losses(val_set.size());
            parallel_for(val_set.size(), options.threads, [&](std::size_t i) {
                ModelOutput<T> out;
                losses[i] = sequence_loss(m.model, val_set[i], out);
            });
            for (T l : losses) total += static_cast<double>(l);
            return total / static_cast<double>(val_set.size());
        });
    member = std::move(holder.members.front());
    return log;
}

}  // namespace mcl

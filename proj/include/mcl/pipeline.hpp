#pragma once

// End-to-end steps shared by the command-line tool and the experiment
// drivers: window a recording, train, fit the selector, evaluate.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/checkpoint.hpp"
#include "mcl/config.hpp"
#include "mcl/data.hpp"
#include "mcl/eval.hpp"
#include "mcl/mcl_train.hpp"
#include "mcl/selection.hpp"

namespace mcl {

template <typename T>
struct PreparedData {
    std::vector<SequenceSample<T>> train, validation, test;
    std::vector<std::string> warnings;
    std::uint32_t test_episode = 0, validation_episode = 0;
    double max_intensity = 1.0;
};

/// Fills dead channels, cuts windows and splits them by episode. Episode
/// ids left at 0 in the config resolve against the recording: the last
/// episode is the test set, the one before it validation.
template <typename T>
PreparedData<T> prepare_data(const RunConfig& cfg, const Recording& raw) {
    raw.validate();
    if (raw.height != cfg.generator.height || raw.width != cfg.generator.width) {
        throw std::invalid_argument("recording grid " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                                    " does not match config " + std::to_string(cfg.generator.height) + "x" +
                                    std::to_string(cfg.generator.width));
    }
    const std::set<std::uint32_t> ids(raw.episode.begin(), raw.episode.end());
    if (ids.size() < 3) throw std::invalid_argument("recording needs at least 3 episodes, has " + std::to_string(ids.size()));
    const std::uint32_t last = *ids.rbegin();
    const std::uint32_t before_last = *std::next(ids.rbegin());
    PreparedData<T> out;
    out.test_episode = cfg.test_episode ? cfg.test_episode : last;
    out.validation_episode =
        cfg.validation_episode ? cfg.validation_episode : (out.test_episode == last ? before_last : last);
    out.max_intensity = raw.meta.max_intensity;

    const Recording rec = fill_missing(raw);
    auto windows = sliding_windows(rec, cfg.window_length, cfg.stride);
    out.warnings = std::move(windows.warnings);
    auto split = split_by_episode(windows.samples, out.test_episode, out.validation_episode);
    auto convert = [](std::vector<SequenceSample<float>>& src, std::vector<SequenceSample<T>>& dst) {
        if constexpr (std::is_same_v<T, float>) {
            dst = std::move(src);
        } else {
            dst.reserve(src.size());
            for (const auto& s : src) dst.push_back(convert_sample<T>(s));
        }
    };
    convert(split.train, out.train);
    convert(split.validation, out.validation);
    convert(split.test, out.test);
    if (out.train.empty()) throw std::invalid_argument("no training windows (recording too short?)");
    if (out.validation.empty()) throw std::invalid_argument("no validation windows in episode " +
                                                            std::to_string(out.validation_episode));
    if (out.test.empty()) throw std::invalid_argument("no test windows in episode " + std::to_string(out.test_episode));
    return out;
}

enum class TrainMode { mcl, single, wide, independent };

struct TrainRequest {
    TrainMode mode = TrainMode::mcl;
    std::size_t wide_hidden = 0;  // hidden width of the wide baseline
    bool pretrain = true;
    std::size_t threads = 1;
    EpochCallback on_epoch;
};

struct TrainOutcome {
    TrainLog log;
    std::vector<std::size_t> pretrain_sizes;  // subset size per member, empty without pretraining
};

inline constexpr std::size_t kLogTailLines = 64;

inline std::string keep_tail(const std::string& text, std::size_t lines) {
    std::vector<std::size_t> starts{0};
    for (std::size_t k = 0; k + 1 < text.size(); ++k)
        if (text[k] == '\n') starts.push_back(k + 1);
    if (text.empty() || starts.size() <= lines) return text;
    return text.substr(starts[starts.size() - lines]);
}

/// Fresh training run. Single and wide baselines are one-member ensembles
/// trained without the pretraining step (the assignment is then trivial, so
/// the updates equal plain SGD). The independent baseline trains every
/// member on all windows on its own; its average is the plain ensemble.
template <typename T>
Checkpoint<T> train_fresh(const RunConfig& cfg, const PreparedData<T>& data, const TrainRequest& req,
                          TrainOutcome* outcome = nullptr) {
    cfg.validate();
    Checkpoint<T> ck;
    ck.config = cfg;
    switch (req.mode) {
        case TrainMode::mcl: ck.kind = "mcl"; break;
        case TrainMode::single:
            ck.kind = "single";
            ck.config.members = 1;
            break;
        case TrainMode::wide:
            if (req.wide_hidden == 0) throw std::invalid_argument("--wide needs a width >= 1");
            ck.kind = "wide";
            ck.config.members = 1;
            ck.config.hidden = req.wide_hidden;
            break;
        case TrainMode::independent: ck.kind = "independent"; break;
    }
    const bool pretrain = req.pretrain && req.mode == TrainMode::mcl;
    ck.config.pretrain = pretrain;
    const Rng root(cfg.seed);
    ck.ensemble = Ensemble<T>::random(ck.config.sequence_spec(), ck.config.model_config(), ck.config.members,
                                      root.split(1), cfg.init_scale, cfg.forget_bias);
    const auto options = ck.config.train_options(req.threads);
    const std::span<const SequenceSample<T>> train_set(data.train), val_set(data.validation);
    TrainOutcome local;
    TrainOutcome& out = outcome ? *outcome : local;
    if (pretrain) {
        Rng part_rng = root.split(2);
        for (const auto& p : diversity_pretrain(ck.ensemble, train_set, cfg.optimizer, options, part_rng))
            out.pretrain_sizes.push_back(p.size());
    }
    std::string lines;
    auto on_epoch = [&](const EpochRecord& r) {
        lines += r.to_line() + "\n";
        if (req.on_epoch) req.on_epoch(r);
    };
    if (req.mode == TrainMode::independent) {
        for (std::size_t m = 0; m < ck.ensemble.size(); ++m) {
            auto member_options = options;
            member_options.seed = cfg.seed + 0x9e3779b9ull * (m + 1);
            lines += "member=" + std::to_string(m + 1) + "\n";
            out.log = train_single(ck.ensemble.members[m], train_set, val_set, cfg.optimizer, member_options, on_epoch);
        }
    } else {
        out.log = train(ck.ensemble, train_set, val_set, cfg.optimizer, options, nullptr, on_epoch);
    }
    ck.state = out.log.state;
    ck.log_tail = keep_tail(lines, kLogTailLines);
    return ck;
}

/// Continues training from a checkpoint (epoch counter, early-stopping state
/// and velocities carry over). Any classifier is dropped since the members change.
template <typename T>
Checkpoint<T> train_resume(const Checkpoint<T>& from, const PreparedData<T>& data, std::size_t threads,
                           const EpochCallback& on_epoch = {}, TrainOutcome* outcome = nullptr) {
    if (from.kind == "independent") throw std::invalid_argument("independent ensembles cannot be resumed");
    Checkpoint<T> ck = from;
    ck.classifier.reset();
    const auto options = ck.config.train_options(threads);
    std::string lines = from.log_tail;
    auto cb = [&](const EpochRecord& r) {
        lines += r.to_line() + "\n";
        if (on_epoch) on_epoch(r);
    };
    TrainOutcome local;
    TrainOutcome& out = outcome ? *outcome : local;
    out.log = train(ck.ensemble, std::span<const SequenceSample<T>>(data.train),
                    std::span<const SequenceSample<T>>(data.validation), ck.config.optimizer, options, &from.state, cb);
    ck.state = out.log.state;
    ck.log_tail = keep_tail(lines, kLogTailLines);
    return ck;
}

template <typename T>
ClassifierTrainLog fit_classifier(Checkpoint<T>& ck, const PreparedData<T>& data, std::size_t threads) {
    ClassifierConfig cc = ck.config.classifier;
    cc.seed = ck.config.seed;
    MlpClassifier clf;
    auto log = train_classifier(ck.ensemble, std::span<const SequenceSample<T>>(data.train),
                                std::span<const SequenceSample<T>>(data.validation), cc, clf, threads);
    ck.classifier = std::move(clf);
    return log;
}

inline std::vector<Strategy> parse_strategies(const std::string& list) {
    std::vector<Strategy> out;
    for (const auto& w : kv::split(list, ',')) {
        const auto s = parse_strategy(kv::trim(w));
        if (std::find(out.begin(), out.end(), s) != out.end()) throw std::invalid_argument("duplicate strategy " + w);
        out.push_back(s);
    }
    if (out.empty()) throw std::invalid_argument("no strategies given");
    return out;
}

template <typename T>
EvalReport evaluate_checkpoint(const Checkpoint<T>& ck, std::span<const SequenceSample<T>> samples,
                               double max_intensity, const std::vector<Strategy>& strategies, std::size_t threads) {
    const bool wants_classifier = std::find(strategies.begin(), strategies.end(), Strategy::classifier) != strategies.end();
    if (wants_classifier && !ck.classifier) {
        throw std::invalid_argument("strategy 'classifier' needs a checkpoint with a trained classifier (run train-classifier)");
    }
    const bool all_layers = ck.classifier ? ck.classifier->all_layers : ck.config.classifier.all_layers;
    const auto table = evaluate_ensemble(ck.ensemble, samples, threads, all_layers);
    return build_report(table, samples, ck.ensemble.spec(), max_intensity, strategies,
                        ck.classifier ? &*ck.classifier : nullptr, ck.config.stride);
}

}  // namespace mcl

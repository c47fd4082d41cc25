#pragma once

// PSNR scoring, the average-ensemble baseline, model usage and transition
// statistics, and the on-disk report.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mcl/binary_io.hpp"
#include "mcl/selection.hpp"

namespace mcl {

inline double psnr_from_mse(double mse, double max_intensity) {
    if (!(max_intensity > 0.0)) throw std::invalid_argument("psnr: max intensity must be > 0");
    if (mse < 0.0 || std::isnan(mse)) throw std::invalid_argument("psnr: invalid MSE");
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_intensity * max_intensity / mse);
}

template <typename T>
double psnr(const Matrix<T>& pred, const Matrix<T>& truth, double max_intensity) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw std::invalid_argument("psnr: shape " + shape_str(pred.rows(), pred.cols()) + " vs " +
                                    shape_str(truth.rows(), truth.cols()));
    }
    if (pred.size() == 0) throw std::invalid_argument("psnr: empty frames");
    double sse = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double e = static_cast<double>(pred.data()[k]) - static_cast<double>(truth.data()[k]);
        sse += e * e;
    }
    return psnr_from_mse(sse / static_cast<double>(pred.size()), max_intensity);
}

/// Element-wise mean of the members' predictions.
template <typename T>
Matrix<T> average_prediction(std::span<const Matrix<T>* const> predictions) {
    if (predictions.empty()) throw std::invalid_argument("average: no predictions");
    Matrix<double> acc(predictions[0]->rows(), predictions[0]->cols());
    for (const auto* p : predictions) {
        if (p->rows() != acc.rows() || p->cols() != acc.cols()) throw std::invalid_argument("average: shape mismatch");
        for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += static_cast<double>(p->data()[k]);
    }
    Matrix<T> out(acc.rows(), acc.cols());
    const double n = static_cast<double>(predictions.size());
    for (std::size_t k = 0; k < acc.size(); ++k) out.data()[k] = static_cast<T>(acc.data()[k] / n);
    return out;
}

/// Average-ensemble forecast for one input prefix.
template <typename T>
Matrix<T> average_baseline(const Ensemble<T>& ens, const Matrix<T>& prefix) {
    std::vector<Matrix<T>> preds;
    for (const auto& m : ens.members) preds.push_back(predict_future(m.model, encode(m.model, prefix)));
    std::vector<const Matrix<T>*> ptrs;
    for (const auto& p : preds) ptrs.push_back(&p);
    return average_prediction<T>(ptrs);
}

/// PSNR at each future offset (index k = offset k + 1) and overall, pooling
/// squared errors over samples before converting to dB.
struct PsnrCurve {
    std::vector<double> by_horizon;
    double overall = 0.0;
};

template <typename T, typename PredictionOf>
PsnrCurve pooled_psnr(std::span<const SequenceSample<T>> samples, const SequenceSpec& spec, double max_intensity,
                      PredictionOf&& prediction_of) {
    if (samples.empty()) throw std::invalid_argument("psnr: empty test set");
    std::vector<double> sse(spec.horizon, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Matrix<T>& pred = prediction_of(i);
        for (std::size_t k = 0; k < spec.horizon; ++k) {
            const auto p = pred.row(k);
            const auto t = samples[i].frames.row(spec.input_length() + k);
            for (std::size_t d = 0; d < spec.frame_dim; ++d) {
                const double e = static_cast<double>(p[d]) - static_cast<double>(t[d]);
                sse[k] += e * e;
            }
        }
    }
    PsnrCurve c;
    const double per_offset = static_cast<double>(samples.size() * spec.frame_dim);
    double total = 0.0;
    for (double s : sse) {
        c.by_horizon.push_back(psnr_from_mse(s / per_offset, max_intensity));
        total += s;
    }
    c.overall = psnr_from_mse(total / (per_offset * static_cast<double>(spec.horizon)), max_intensity);
    return c;
}

/// PSNR curve when each sample is forecast by its chosen member.
template <typename T>
PsnrCurve psnr_vs_horizon(const EvaluationTable<T>& table, std::span<const std::size_t> chosen,
                          std::span<const SequenceSample<T>> samples, const SequenceSpec& spec, double max_intensity) {
    if (chosen.size() != samples.size() || table.samples != samples.size()) {
        throw std::invalid_argument("psnr_vs_horizon: selection count mismatch");
    }
    return pooled_psnr(samples, spec, max_intensity,
                       [&](std::size_t i) -> const Matrix<T>& { return table.at(i, chosen[i]).prediction; });
}

template <typename T>
PsnrCurve average_psnr_vs_horizon(const EvaluationTable<T>& table, std::span<const SequenceSample<T>> samples,
                                  const SequenceSpec& spec, double max_intensity) {
    Matrix<T> avg;
    return pooled_psnr(samples, spec, max_intensity, [&](std::size_t i) -> const Matrix<T>& {
        std::vector<const Matrix<T>*> ptrs;
        for (std::size_t m = 0; m < table.members; ++m) ptrs.push_back(&table.at(i, m).prediction);
        avg = average_prediction<T>(ptrs);
        return avg;
    });
}

struct Selection {
    Phase phase = Phase::baseline;
    std::size_t model = 0;  // 0-based
};

/// Empirical frequency of each member per phase; phases without any
/// selection are absent.
inline std::map<Phase, std::vector<double>> usage_distribution(std::span<const Selection> selections,
                                                               std::size_t members) {
    std::map<Phase, std::vector<double>> counts;
    for (const auto& s : selections) {
        if (s.model >= members) throw std::invalid_argument("usage: model index out of range");
        if (s.phase != Phase::baseline && s.phase != Phase::event) throw std::invalid_argument("usage: unknown phase");
        auto& c = counts[s.phase];
        c.resize(members, 0.0);
        c[s.model] += 1.0;
    }
    for (auto& [ph, c] : counts) {
        double n = 0.0;
        for (double v : c) n += v;
        for (double& v : c) v /= n;
    }
    return counts;
}

struct TransitionMatrix {
    Matrix<double> p;                  // p(next, prev)
    std::vector<std::uint8_t> observed;  // per prev column
    std::vector<std::size_t> column_pairs;
    std::size_t pairs = 0;
};

/// Window position plus its selected member, used to chain consecutive windows.
struct WindowSelection {
    std::uint32_t episode = 0;
    Phase phase = Phase::baseline;
    std::size_t start = 0;
    std::size_t model = 0;
};

/// Conditional probability of the next window's member given the previous
/// window's member, per phase. Consecutive windows are adjacent (start
/// differs by `stride`) inside the same episode and phase.
inline std::map<Phase, TransitionMatrix> transition_matrix(std::vector<WindowSelection> sel, std::size_t members,
                                                           std::size_t stride) {
    if (stride == 0) throw std::invalid_argument("transition_matrix: stride must be > 0");
    std::sort(sel.begin(), sel.end(), [](const auto& a, const auto& b) {
        return std::tie(a.episode, a.phase, a.start) < std::tie(b.episode, b.phase, b.start);
    });
    std::map<Phase, Matrix<double>> counts;
    for (const auto& s : sel) {
        if (s.model >= members) throw std::invalid_argument("transition_matrix: model index out of range");
        counts.try_emplace(s.phase, members, members);
    }
    for (std::size_t k = 1; k < sel.size(); ++k) {
        const auto& a = sel[k - 1];
        const auto& b = sel[k];
        if (a.episode == b.episode && a.phase == b.phase && b.start == a.start + stride) {
            counts.at(a.phase)(b.model, a.model) += 1.0;
        }
    }
    std::map<Phase, TransitionMatrix> out;
    for (auto& [ph, c] : counts) {
        TransitionMatrix t;
        t.p = Matrix<double>(members, members);
        t.observed.assign(members, 0);
        t.column_pairs.assign(members, 0);
        for (std::size_t prev = 0; prev < members; ++prev) {
            double n = 0.0;
            for (std::size_t next = 0; next < members; ++next) n += c(next, prev);
            t.pairs += static_cast<std::size_t>(n);
            t.column_pairs[prev] = static_cast<std::size_t>(n);
            if (n == 0.0) continue;
            t.observed[prev] = 1;
            for (std::size_t next = 0; next < members; ++next) t.p(next, prev) = c(next, prev) / n;
        }
        out.emplace(ph, std::move(t));
    }
    return out;
}

// ---- report ----

struct StrategyResult {
    std::string name;
    PsnrCurve curve;
};

struct MemberSpecialization {
    std::size_t assigned = 0;
    int majority_cluster = -1;
    double majority_fraction = 0.0;
};

struct EvalReport {
    std::size_t members = 0, horizon = 0, samples = 0;
    double max_intensity = 1.0;
    std::vector<StrategyResult> strategies;
    std::map<Phase, std::vector<double>> usage;
    std::map<Phase, TransitionMatrix> transitions;
    std::vector<MemberSpecialization> specialization;
    std::map<std::string, double> agreement_with_oracle;  // fraction of samples

    const StrategyResult* find(const std::string& name) const {
        for (const auto& s : strategies)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Scores the requested strategies on `samples` and gathers usage and
/// transition statistics of the per-window MCL assignment (member with the
/// lowest full-sequence loss).
template <typename T>
EvalReport build_report(const EvaluationTable<T>& table, std::span<const SequenceSample<T>> samples,
                        const SequenceSpec& spec, double max_intensity, const std::vector<Strategy>& strategies,
                        const MlpClassifier* classifier, std::size_t stride) {
    EvalReport r;
    r.members = table.members;
    r.horizon = spec.horizon;
    r.samples = samples.size();
    r.max_intensity = max_intensity;
    const auto oracle = choose(table, Strategy::oracle);
    for (Strategy s : strategies) {
        StrategyResult sr;
        sr.name = strategy_name(s);
        if (s == Strategy::average) {
            sr.curve = average_psnr_vs_horizon(table, samples, spec, max_intensity);
        } else {
            const auto chosen = choose(table, s, classifier);
            sr.curve = psnr_vs_horizon(table, std::span<const std::size_t>(chosen), samples, spec, max_intensity);
            std::size_t agree = 0;
            for (std::size_t i = 0; i < chosen.size(); ++i) agree += chosen[i] == oracle[i];
            r.agreement_with_oracle[sr.name] = static_cast<double>(agree) / static_cast<double>(chosen.size());
        }
        r.strategies.push_back(std::move(sr));
    }
    const auto assigned = assignment_labels(table);
    std::vector<Selection> sel;
    std::vector<WindowSelection> wsel;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        sel.push_back({samples[i].phase, assigned[i]});
        wsel.push_back({samples[i].episode, samples[i].phase, samples[i].start, assigned[i]});
    }
    r.usage = usage_distribution(sel, table.members);
    r.transitions = transition_matrix(std::move(wsel), table.members, stride);
    r.specialization.resize(table.members);
    std::vector<std::map<int, std::size_t>> votes(table.members);
    for (std::size_t i = 0; i < samples.size(); ++i) ++votes[assigned[i]][samples[i].cluster];
    for (std::size_t m = 0; m < table.members; ++m) {
        auto& s = r.specialization[m];
        for (const auto& [c, n] : votes[m]) {
            s.assigned += n;
            if (c >= 0 && static_cast<double>(n) > s.majority_fraction) {
                s.majority_fraction = static_cast<double>(n);
                s.majority_cluster = c;
            }
        }
        s.majority_fraction = s.assigned ? s.majority_fraction / static_cast<double>(s.assigned) : 0.0;
    }
    return r;
}

inline std::string phase_label(Phase p) { return p == Phase::baseline ? "baseline" : "event"; }

inline std::string psnr_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "strategy,horizon,psnr_db\n";
    for (const auto& s : r.strategies) {
        for (std::size_t k = 0; k < s.curve.by_horizon.size(); ++k)
            os << s.name << ',' << (k + 1) << ',' << format_number(s.curve.by_horizon[k]) << '\n';
        os << s.name << ",all," << format_number(s.curve.overall) << '\n';
    }
    return os.str();
}

inline std::string usage_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "phase,model,probability\n";
    for (const auto& [ph, dist] : r.usage)
        for (std::size_t m = 0; m < dist.size(); ++m)
            os << phase_label(ph) << ',' << (m + 1) << ',' << format_number(dist[m]) << '\n';
    return os.str();
}

/// Unobserved predecessor columns are written as "nan".
inline std::string transitions_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "phase,prev_model,next_model,probability\n";
    for (const auto& [ph, t] : r.transitions) {
        for (std::size_t prev = 0; prev < r.members; ++prev) {
            for (std::size_t next = 0; next < r.members; ++next) {
                os << phase_label(ph) << ',' << (prev + 1) << ',' << (next + 1) << ','
                   << (t.observed[prev] ? format_number(t.p(next, prev)) : std::string("nan")) << '\n';
            }
        }
    }
    return os.str();
}

inline std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os << "Evaluation report\n\n";
    os << "members: " << r.members << "\n";
    os << "test windows: " << r.samples << "\n";
    os << "prediction horizon: " << r.horizon << " frames\n";
    os << "max intensity: " << format_number(r.max_intensity) << "\n\n";
    os << "PSNR over all predicted frames (dB)\n";
    for (const auto& s : r.strategies) os << "  " << s.name << ": " << format_number(s.curve.overall) << "\n";
    os << "\nPSNR by prediction offset (dB)\n  offset";
    for (const auto& s : r.strategies) os << "  " << s.name;
    os << "\n";
    for (std::size_t k = 0; k < r.horizon; ++k) {
        os << "  " << (k + 1);
        for (const auto& s : r.strategies) os << "  " << format_number(s.curve.by_horizon[k]);
        os << "\n";
    }
    if (!r.agreement_with_oracle.empty()) {
        os << "\nAgreement with oracle choice\n";
        for (const auto& [name, a] : r.agreement_with_oracle) os << "  " << name << ": " << format_number(a) << "\n";
    }
    os << "\nModel usage by phase (member with the lowest sequence loss)\n";
    for (const auto& [ph, dist] : r.usage) {
        os << "  " << phase_label(ph) << ":";
        for (double p : dist) os << " " << format_number(p);
        os << "\n";
    }
    os << "\nTransition matrices (column = previous member, row = next member)\n";
    for (const auto& [ph, t] : r.transitions) {
        os << "  " << phase_label(ph) << " (" << t.pairs << " consecutive pairs)\n";
        for (std::size_t next = 0; next < r.members; ++next) {
            os << "   ";
            for (std::size_t prev = 0; prev < r.members; ++prev)
                os << " " << (t.observed[prev] ? format_number(t.p(next, prev)) : std::string("   -    "));
            os << "\n";
        }
        for (std::size_t prev = 0; prev < r.members; ++prev)
            if (!t.observed[prev]) os << "    member " << (prev + 1) << " never precedes a window\n";
    }
    os << "\nSpecialization (assigned windows, majority cluster, share)\n";
    for (std::size_t m = 0; m < r.specialization.size(); ++m) {
        const auto& s = r.specialization[m];
        os << "  member " << (m + 1) << ": " << s.assigned << ", ";
        if (s.majority_cluster >= 0) {
            os << s.majority_cluster << ", " << format_number(s.majority_fraction);
        } else {
            os << "-";
        }
        os << "\n";
    }
    return os.str();
}

inline void write_report(const std::string& dir, const EvalReport& r) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path d(dir);
    io::write_text((d / "report.txt").string(), report_text(r));
    io::write_text((d / "psnr.csv").string(), psnr_csv(r));
    io::write_text((d / "usage.csv").string(), usage_csv(r));
    io::write_text((d / "transitions.csv").string(), transitions_csv(r));
}

}  // namespace mcl

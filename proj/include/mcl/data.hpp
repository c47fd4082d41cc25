#pragma once

// Spatiotemporal recordings on an H x W channel grid: a synthetic generator
// of wave-like activity clusters, missing-channel filling, sliding windows,
// episode-disjoint splits, channel delay maps and the binary file format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/binary_io.hpp"
#include "mcl/keyvalue.hpp"
#include "mcl/numerics.hpp"
#include "mcl/seq2seq.hpp"

namespace mcl {

enum class PatternKind : std::uint8_t { plane_wave, spiral, local_burst, silence, refractory_decay };

inline const char* pattern_kind_name(PatternKind k) {
    switch (k) {
        case PatternKind::plane_wave: return "plane_wave";
        case PatternKind::spiral: return "spiral";
        case PatternKind::local_burst: return "local_burst";
        case PatternKind::silence: return "silence";
        case PatternKind::refractory_decay: return "refractory_decay";
    }
    return "?";
}

inline PatternKind parse_pattern_kind(std::string_view s) {
    for (auto k : {PatternKind::plane_wave, PatternKind::spiral, PatternKind::local_burst, PatternKind::silence,
                   PatternKind::refractory_decay}) {
        if (s == pattern_kind_name(k)) return k;
    }
    throw std::invalid_argument("unknown pattern kind '" + std::string(s) + "'");
}

/// One activity cluster. Coordinates are (x = column, y = row) in pixels.
/// Only the fields relevant to `kind` are used:
///   plane_wave        A sin(2pi/wavelength (d . r - speed t) + phi), d = direction
///   spiral            A sin(arms (theta - angular_velocity t) + pitch rho + phi) around center
///   local_burst       A exp(-rho^2 / 2 scale^2) sin(2pi frequency t + phi)
///   refractory_decay  A exp(-((t + offset) mod period) / decay) exp(-rho^2 / 2 scale^2)
///   silence           0
/// plus i.i.d. Gaussian noise of standard deviation `noise`. phi and offset
/// are redrawn for every bout.
struct PatternSpec {
    PatternKind kind = PatternKind::silence;
    double amplitude = 1.0;
    double direction_x = 1.0, direction_y = 0.0;
    double wavelength = 12.0;
    double speed = 1.0;
    double center_x = 5.5, center_y = 5.5;
    double angular_velocity = 0.2;
    double arms = 1.0;
    double pitch = 0.5;
    double scale = 2.0;
    double frequency = 0.1;
    double period = 20.0;
    double decay = 4.0;
    double noise = 0.0;
    double baseline_weight = 0.0;  // mixture weight during baseline segments
    double event_weight = 0.0;     // mixture weight during event segments

    void validate() const {
        auto need = [&](bool ok, const char* what) {
            if (!ok) throw std::invalid_argument(std::string(pattern_kind_name(kind)) + ": " + what);
        };
        need(noise >= 0.0 && std::isfinite(noise), "noise must be >= 0");
        need(baseline_weight >= 0.0 && event_weight >= 0.0, "weights must be >= 0");
        if (kind == PatternKind::silence) return;
        need(amplitude > 0.0 && std::isfinite(amplitude), "amplitude must be > 0");
        switch (kind) {
            case PatternKind::plane_wave:
                need(direction_x != 0.0 || direction_y != 0.0, "direction must be non-zero");
                need(wavelength > 0.0, "wavelength must be > 0");
                need(std::isfinite(speed), "speed must be finite");
                break;
            case PatternKind::spiral:
                need(arms >= 1.0 && arms == std::floor(arms), "arms must be a positive integer");
                need(std::isfinite(angular_velocity) && std::isfinite(pitch), "spiral parameters must be finite");
                break;
            case PatternKind::local_burst:
                need(scale > 0.0, "scale must be > 0");
                need(frequency >= 0.0 && frequency <= 0.5, "frequency must be in [0, 0.5] cycles/frame");
                break;
            case PatternKind::refractory_decay:
                need(scale > 0.0, "scale must be > 0");
                need(period >= 1.0, "period must be >= 1 frame");
                need(decay > 0.0, "decay must be > 0");
                break;
            default: break;
        }
    }

    std::string to_text() const {
        std::ostringstream os;
        os << pattern_kind_name(kind);
        for (const auto& [k, v] : fields()) os << ' ' << k << '=' << kv::format_double(*v);
        return os.str();
    }

    /// Parses "kind key=value ...".
    static PatternSpec from_text(std::string_view text) {
        const auto words = kv::split_words(text);
        if (words.empty()) throw std::invalid_argument("empty pattern spec");
        PatternSpec p;
        p.kind = parse_pattern_kind(words[0]);
        auto f = p.fields();
        for (std::size_t i = 1; i < words.size(); ++i) {
            const auto eq = words[i].find('=');
            if (eq == std::string::npos) throw std::invalid_argument("pattern field '" + words[i] + "' lacks '='");
            const std::string key = words[i].substr(0, eq);
            auto it = std::find_if(f.begin(), f.end(), [&](const auto& e) { return e.first == key; });
            if (it == f.end()) throw std::invalid_argument("unknown pattern field '" + key + "'");
            *it->second = kv::to_double(words[i].substr(eq + 1), key);
        }
        p.validate();
        return p;
    }

    bool operator==(const PatternSpec&) const = default;

private:
    std::vector<std::pair<std::string, double*>> fields() {
        return {{"amplitude", &amplitude},
                {"direction_x", &direction_x},
                {"direction_y", &direction_y},
                {"wavelength", &wavelength},
                {"speed", &speed},
                {"center_x", &center_x},
                {"center_y", &center_y},
                {"angular_velocity", &angular_velocity},
                {"arms", &arms},
                {"pitch", &pitch},
                {"scale", &scale},
                {"frequency", &frequency},
                {"period", &period},
                {"decay", &decay},
                {"noise", &noise},
                {"baseline_weight", &baseline_weight},
                {"event_weight", &event_weight}};
    }
    std::vector<std::pair<std::string, const double*>> fields() const {
        auto f = const_cast<PatternSpec*>(this)->fields();
        return {f.begin(), f.end()};
    }
};

/// Noise-free value of a pattern at local time t and pixel (x, y).
/// `phase` is the per-bout random phase in [0, 1).
inline double pattern_value(const PatternSpec& p, double t, double x, double y, double phase) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double dx = x - p.center_x, dy = y - p.center_y;
    switch (p.kind) {
        case PatternKind::plane_wave: {
            const double n = std::hypot(p.direction_x, p.direction_y);
            const double along = (p.direction_x * x + p.direction_y * y) / n;
            return p.amplitude * std::sin(two_pi / p.wavelength * (along - p.speed * t) + two_pi * phase);
        }
        case PatternKind::spiral: {
            const double theta = std::atan2(dy, dx);
            const double rho = std::hypot(dx, dy);
            return p.amplitude *
                   std::sin(p.arms * (theta - p.angular_velocity * t) + p.pitch * rho + two_pi * phase);
        }
        case PatternKind::local_burst: {
            const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * p.scale * p.scale));
            return p.amplitude * env * std::sin(two_pi * p.frequency * t + two_pi * phase);
        }
        case PatternKind::refractory_decay: {
            const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * p.scale * p.scale));
            const double since = std::fmod(t + phase * p.period, p.period);
            return p.amplitude * env * std::exp(-since / p.decay);
        }
        case PatternKind::silence: return 0.0;
    }
    return 0.0;
}

struct GeneratorConfig {
    std::size_t height = 12, width = 12;
    std::size_t episodes = 7;
    std::size_t baseline_frames = 400;  // per episode, before the event segment
    std::size_t event_frames = 400;
    std::size_t bout_min = 80, bout_max = 200;  // frames per single-cluster bout
    std::size_t bout_ramp = 24;                 // raised-cosine onset/offset frames, 0 = hard switch
    std::size_t dead_channels = 0;              // channels marked missing
    double sampling_rate = 277.78;
    std::uint64_t seed = 1;
    std::vector<PatternSpec> patterns;

    std::size_t frames() const { return episodes * (baseline_frames + event_frames); }

    void validate() const {
        if (height == 0 || width == 0) throw std::invalid_argument("grid must be at least 1x1");
        if (episodes == 0) throw std::invalid_argument("need at least one episode");
        if (baseline_frames + event_frames == 0) throw std::invalid_argument("episodes must have frames");
        if (bout_min == 0 || bout_max < bout_min) throw std::invalid_argument("need 1 <= bout_min <= bout_max");
        if (dead_channels >= height * width) throw std::invalid_argument("dead_channels leaves no valid channel");
        if (!(sampling_rate > 0.0)) throw std::invalid_argument("sampling rate must be > 0");
        if (patterns.empty()) throw std::invalid_argument("no patterns");
        double wb = 0.0, we = 0.0;
        for (const auto& p : patterns) {
            p.validate();
            wb += p.baseline_weight;
            we += p.event_weight;
        }
        if (baseline_frames > 0 && std::abs(wb - 1.0) > 1e-9) {
            throw std::invalid_argument("baseline weights sum to " + kv::format_double(wb) + ", expected 1");
        }
        if (event_frames > 0 && std::abs(we - 1.0) > 1e-9) {
            throw std::invalid_argument("event weights sum to " + kv::format_double(we) + ", expected 1");
        }
    }
};

struct RecordingMeta {
    double sampling_rate = 277.78;
    double max_intensity = 1.0;  // >= every |frame value|
    double raw_peak = 0.0;       // normalization divisor applied by the generator (0 if none)
    std::vector<std::string> patterns;  // generator pattern specs; cluster c is patterns[c]
    std::uint64_t seed = 0;

    bool operator==(const RecordingMeta&) const = default;
};

/// T frames of an H x W grid, stored as a T x (H*W) row-major matrix.
struct Recording {
    std::size_t height = 0, width = 0;
    Matrix<float> frames;
    std::vector<std::uint8_t> valid;  // H*W, 1 = channel present
    std::vector<std::uint32_t> episode;
    std::vector<Phase> phase;
    std::vector<std::int32_t> cluster;  // per frame, -1 if unknown
    RecordingMeta meta;

    std::size_t length() const { return frames.rows(); }
    std::size_t channels() const { return height * width; }

    std::size_t episode_count() const {
        std::set<std::uint32_t> ids(episode.begin(), episode.end());
        return ids.size();
    }

    void validate() const {
        const std::size_t T = frames.rows();
        if (frames.cols() != height * width) throw std::invalid_argument("recording: frame width != H*W");
        if (valid.size() != height * width) throw std::invalid_argument("recording: mask size != H*W");
        if (episode.size() != T || phase.size() != T || cluster.size() != T) {
            throw std::invalid_argument("recording: per-frame labels do not cover every frame");
        }
    }

    bool operator==(const Recording&) const = default;
};

namespace detail {

inline std::size_t pick_cluster(const std::vector<PatternSpec>& ps, Phase phase, double u) {
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t c = 0; c < ps.size(); ++c) {
        const double w = phase == Phase::baseline ? ps[c].baseline_weight : ps[c].event_weight;
        if (w <= 0.0) continue;
        acc += w;
        last = c;
        if (u < acc) return c;
    }
    return last;
}

// Gain of frame k of a len-frame bout: rises over the first `ramp` frames
// and falls over the last `ramp`, 1 in between.
inline double bout_envelope(std::size_t k, std::size_t len, std::size_t ramp) {
    const std::size_t edge = std::min(k, len - 1 - k);
    if (edge >= ramp) return 1.0;
    return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge + 1) / static_cast<double>(ramp + 1));
}

}  // namespace detail

/// Concatenated episodes, each a baseline segment followed by an event
/// segment. Segments are made of bouts; every bout draws one cluster from
/// the phase's mixture weights. Values are scaled into [-1, 1].
inline Recording generate_synthetic(const GeneratorConfig& cfg) {
    cfg.validate();
    const std::size_t HW = cfg.height * cfg.width, T = cfg.frames();
    Recording rec;
    rec.height = cfg.height;
    rec.width = cfg.width;
    rec.frames = Matrix<float>(T, HW);
    rec.valid.assign(HW, 1);
    rec.episode.resize(T);
    rec.phase.resize(T);
    rec.cluster.resize(T);
    const Rng root(cfg.seed);

    {
        Rng dead = root.split(0xdeadu);
        std::vector<std::size_t> idx(HW);
        for (std::size_t k = 0; k < HW; ++k) idx[k] = k;
        dead.shuffle(idx);
        for (std::size_t k = 0; k < cfg.dead_channels; ++k) rec.valid[idx[k]] = 0;
    }

    std::vector<double> raw(T * HW, 0.0);
    std::size_t t0 = 0;
    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
        for (Phase ph : {Phase::baseline, Phase::event}) {
            const std::size_t seg = ph == Phase::baseline ? cfg.baseline_frames : cfg.event_frames;
            Rng seg_rng = root.split(ep + 1).split(static_cast<std::uint64_t>(ph));
            std::size_t done = 0;
            while (done < seg) {
                const std::size_t len = std::min(
                    seg - done, cfg.bout_min + static_cast<std::size_t>(seg_rng.below(cfg.bout_max - cfg.bout_min + 1)));
                const std::size_t c = detail::pick_cluster(cfg.patterns, ph, seg_rng.uniform());
                const PatternSpec& p = cfg.patterns[c];
                const double phase = seg_rng.uniform();
                Rng noise = seg_rng.split(done);
                for (std::size_t k = 0; k < len; ++k) {
                    const double env = detail::bout_envelope(k, len, cfg.bout_ramp);
                    const std::size_t t = t0 + done + k;
                    rec.episode[t] = static_cast<std::uint32_t>(ep + 1);
                    rec.phase[t] = ph;
                    rec.cluster[t] = static_cast<std::int32_t>(c);
                    for (std::size_t y = 0; y < cfg.height; ++y) {
                        for (std::size_t x = 0; x < cfg.width; ++x) {
                            double v = pattern_value(p, static_cast<double>(k), static_cast<double>(x),
                                                     static_cast<double>(y), phase) *
                                       env;
                            if (p.noise > 0.0) v += p.noise * noise.normal();
                            const std::size_t ch = y * cfg.width + x;
                            raw[t * HW + ch] = rec.valid[ch] ? v : 0.0;
                        }
                    }
                }
                done += len;
            }
            t0 += seg;
        }
    }

    double peak = 0.0;
    for (double v : raw) peak = std::max(peak, std::abs(v));
    const double div = peak > 0.0 ? peak : 1.0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        rec.frames.data()[k] = std::clamp(static_cast<float>(raw[k] / div), -1.0f, 1.0f);
    }
    rec.meta.sampling_rate = cfg.sampling_rate;
    rec.meta.max_intensity = 1.0;
    rec.meta.raw_peak = peak;
    rec.meta.seed = cfg.seed;
    for (const auto& p : cfg.patterns) rec.meta.patterns.push_back(p.to_text());
    return rec;
}

struct FillOptions {
    double tolerance = 1e-6;  // relative to the largest valid |value| (at least 1)
    std::size_t max_sweeps = 100000;
};

/// Replaces every missing channel by the harmonic interpolant of the valid
/// ones on the 4-neighbour grid graph (each missing value = mean of its
/// grid neighbours), solved per frame by Gauss-Seidel. Valid channels are
/// not touched; an already-harmonic fill is returned unchanged.
inline Recording fill_missing(const Recording& rec, const std::vector<std::uint8_t>& valid) {
    rec.validate();
    const std::size_t H = rec.height, W = rec.width, HW = H * W;
    if (valid.size() != HW) throw std::invalid_argument("fill_missing: mask size " + std::to_string(valid.size()) +
                                                        " != " + std::to_string(HW));
    std::vector<std::size_t> holes;
    for (std::size_t ch = 0; ch < HW; ++ch)
        if (!valid[ch]) holes.push_back(ch);
    if (holes.empty()) return rec;
    if (holes.size() == HW) throw std::invalid_argument("fill_missing: every channel is missing");

    std::vector<std::vector<std::size_t>> nbrs(HW);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            auto& n = nbrs[y * W + x];
            if (y > 0) n.push_back((y - 1) * W + x);
            if (x > 0) n.push_back(y * W + x - 1);
            if (x + 1 < W) n.push_back(y * W + x + 1);
            if (y + 1 < H) n.push_back((y + 1) * W + x);
        }
    }
    const FillOptions opt;
    Recording out = rec;
    std::vector<double> v(HW);
    for (std::size_t t = 0; t < rec.length(); ++t) {
        auto row = out.frames.row(t);
        double mean = 0.0, peak = 1.0;
        std::size_t count = 0;
        for (std::size_t ch = 0; ch < HW; ++ch) {
            v[ch] = row[ch];
            if (valid[ch]) {
                mean += row[ch];
                peak = std::max(peak, std::abs(static_cast<double>(row[ch])));
                ++count;
            }
        }
        mean /= static_cast<double>(count);
        const double tol = opt.tolerance * peak;
        auto neighbour_mean = [&](std::size_t ch) {
            double s = 0.0;
            for (std::size_t n : nbrs[ch]) s += v[n];
            return s / static_cast<double>(nbrs[ch].size());
        };
        double residual = 0.0;
        for (std::size_t ch : holes) residual = std::max(residual, std::abs(v[ch] - neighbour_mean(ch)));
        if (residual <= tol) continue;
        for (std::size_t ch : holes) v[ch] = mean;
        for (std::size_t sweep = 0;; ++sweep) {
            if (sweep == opt.max_sweeps) throw std::runtime_error("fill_missing: no convergence");
            double change = 0.0;
            for (std::size_t ch : holes) {
                const double nv = neighbour_mean(ch);
                change = std::max(change, std::abs(nv - v[ch]));
                v[ch] = nv;
            }
            if (change <= tol * 1e-3) break;
        }
        for (std::size_t ch : holes) row[ch] = static_cast<float>(v[ch]);
    }
    return out;
}

inline Recording fill_missing(const Recording& rec) { return fill_missing(rec, rec.valid); }

struct WindowSet {
    std::vector<SequenceSample<float>> samples;
    std::vector<std::string> warnings;
};

/// Every window of `length` frames at the given stride inside each
/// contiguous (episode, phase) segment; windows never cross segments.
/// A window's cluster is the most common frame cluster in it.
inline WindowSet sliding_windows(const Recording& rec, std::size_t length, std::size_t stride = 1) {
    rec.validate();
    if (length == 0 || stride == 0) throw std::invalid_argument("sliding_windows: length and stride must be > 0");
    if (length > rec.length()) {
        throw std::invalid_argument("sliding_windows: window length " + std::to_string(length) +
                                    " exceeds recording length " + std::to_string(rec.length()));
    }
    WindowSet out;
    std::size_t seg_start = 0;
    const std::size_t T = rec.length(), HW = rec.channels();
    while (seg_start < T) {
        std::size_t seg_end = seg_start + 1;
        while (seg_end < T && rec.episode[seg_end] == rec.episode[seg_start] &&
               rec.phase[seg_end] == rec.phase[seg_start])
            ++seg_end;
        if (seg_end - seg_start < length) {
            out.warnings.push_back("episode " + std::to_string(rec.episode[seg_start]) + " " +
                                   phase_name(rec.phase[seg_start]) + " segment has " +
                                   std::to_string(seg_end - seg_start) + " frames < window length " +
                                   std::to_string(length) + "; no windows");
        }
        for (std::size_t s = seg_start; s + length <= seg_end; s += stride) {
            SequenceSample<float> w;
            w.frames = Matrix<float>(length, HW);
            std::copy(rec.frames.row(s).data(), rec.frames.row(s).data() + length * HW, w.frames.data());
            w.episode = rec.episode[s];
            w.phase = rec.phase[s];
            w.start = s;
            std::map<std::int32_t, std::size_t> votes;
            for (std::size_t t = s; t < s + length; ++t) ++votes[rec.cluster[t]];
            std::size_t best = 0;
            for (const auto& [c, n] : votes) {
                if (n > best) {
                    best = n;
                    w.cluster = c;
                }
            }
            out.samples.push_back(std::move(w));
        }
        seg_start = seg_end;
    }
    return out;
}

struct DatasetSplit {
    std::vector<SequenceSample<float>> train, validation, test;
    std::vector<std::uint32_t> train_episodes;
    std::uint32_t validation_episode = 0, test_episode = 0;
};

/// Test gets every window of `test_episode` (its baseline and event
/// segments), validation likewise for `val_episode`, train the rest.
inline DatasetSplit split_by_episode(const std::vector<SequenceSample<float>>& windows, std::uint32_t test_episode,
                                     std::uint32_t val_episode) {
    if (test_episode == val_episode) throw std::invalid_argument("split: test and validation episode must differ");
    std::set<std::uint32_t> ids;
    for (const auto& w : windows) ids.insert(w.episode);
    for (std::uint32_t e : {test_episode, val_episode}) {
        if (!ids.count(e)) throw std::invalid_argument("split: unknown episode id " + std::to_string(e));
    }
    DatasetSplit s;
    s.test_episode = test_episode;
    s.validation_episode = val_episode;
    for (const auto& w : windows) {
        if (w.episode == test_episode) {
            s.test.push_back(w);
        } else if (w.episode == val_episode) {
            s.validation.push_back(w);
        } else {
            s.train.push_back(w);
        }
    }
    for (std::uint32_t e : ids)
        if (e != test_episode && e != val_episode) s.train_episodes.push_back(e);
    return s;
}

struct DelayMap {
    std::size_t height = 0, width = 0;
    std::vector<int> delay;               // frames, per channel
    std::vector<std::uint8_t> degenerate;  // zero variance or missing channel
};

/// Per-channel lag (in frames) maximizing the normalized cross-correlation
/// between channel(t) and reference(t - lag), lag in [-max_lag, max_lag].
/// The reference is the per-frame mean of the valid channels. Ties prefer
/// the smaller |lag|, then the negative one.
inline DelayMap delay_map(const Matrix<float>& frames, std::size_t height, std::size_t width,
                          const std::vector<std::uint8_t>& valid, std::size_t max_lag) {
    const std::size_t T = frames.rows(), HW = height * width;
    if (frames.cols() != HW || valid.size() != HW) throw std::invalid_argument("delay_map: shape mismatch");
    if (T <= 2 * max_lag) {
        throw std::invalid_argument("delay_map: need more than 2*max_lag = " + std::to_string(2 * max_lag) +
                                    " frames, got " + std::to_string(T));
    }
    std::vector<double> ref(T, 0.0);
    std::size_t n_valid = 0;
    for (std::size_t ch = 0; ch < HW; ++ch) {
        if (!valid[ch]) continue;
        ++n_valid;
        for (std::size_t t = 0; t < T; ++t) ref[t] += frames(t, ch);
    }
    if (n_valid == 0) throw std::invalid_argument("delay_map: no valid channel");
    for (double& r : ref) r /= static_cast<double>(n_valid);

    DelayMap out{height, width, std::vector<int>(HW, 0), std::vector<std::uint8_t>(HW, 0)};
    const long L = static_cast<long>(max_lag), TT = static_cast<long>(T);
    std::vector<long> lags{0};
    for (long k = 1; k <= L; ++k) {
        lags.push_back(-k);
        lags.push_back(k);
    }
    for (std::size_t ch = 0; ch < HW; ++ch) {
        if (!valid[ch]) {
            out.degenerate[ch] = 1;
            continue;
        }
        double best = -2.0;
        bool any = false;
        for (long lag : lags) {
            const long lo = std::max(0L, lag), hi = std::min(TT, TT + lag);
            const double n = static_cast<double>(hi - lo);
            double mx = 0.0, my = 0.0;
            for (long t = lo; t < hi; ++t) {
                mx += frames(static_cast<std::size_t>(t), ch);
                my += ref[static_cast<std::size_t>(t - lag)];
            }
            mx /= n;
            my /= n;
            double sxy = 0.0, sxx = 0.0, syy = 0.0;
            for (long t = lo; t < hi; ++t) {
                const double a = frames(static_cast<std::size_t>(t), ch) - mx;
                const double b = ref[static_cast<std::size_t>(t - lag)] - my;
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
            if (sxx <= 1e-24 || syy <= 1e-24) continue;
            const double r = sxy / std::sqrt(sxx * syy);
            if (r > best + 1e-12) {
                best = r;
                out.delay[ch] = static_cast<int>(lag);
                any = true;
            }
        }
        if (!any) {
            out.delay[ch] = 0;
            out.degenerate[ch] = 1;
        }
    }
    return out;
}

// ---- file format ----

inline constexpr char kRecordingMagic[8] = {'M', 'C', 'L', 'S', 'E', 'Q', '0', '1'};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> encode_recording(const Recording& rec) {
    rec.validate();
    io::Writer w;
    w.bytes(std::string_view(kRecordingMagic, 8));
    w.u32(static_cast<std::uint32_t>(rec.length()));
    w.u32(static_cast<std::uint32_t>(rec.height));
    w.u32(static_cast<std::uint32_t>(rec.width));
    w.u32(static_cast<std::uint32_t>(rec.episode_count()));
    for (auto b : rec.valid) w.u8(b ? 1 : 0);
    for (std::size_t t = 0; t < rec.length(); ++t) {
        w.u32(rec.episode[t]);
        w.u8(static_cast<std::uint8_t>(rec.phase[t]));
    }
    for (float v : rec.frames.values()) w.f32(v);
    return std::move(w.data());
}

inline std::string encode_recording_meta(const Recording& rec) {
    std::ostringstream os;
    os << "sampling_rate = " << kv::format_double(rec.meta.sampling_rate) << "\n";
    os << "max_intensity = " << kv::format_double(rec.meta.max_intensity) << "\n";
    os << "raw_peak = " << kv::format_double(rec.meta.raw_peak) << "\n";
    os << "seed = " << rec.meta.seed << "\n";
    for (const auto& p : rec.meta.patterns) os << "pattern = " << p << "\n";
    // cluster labels as runs start:length:cluster
    os << "cluster_runs =";
    for (std::size_t t = 0; t < rec.length();) {
        std::size_t e = t + 1;
        while (e < rec.length() && rec.cluster[e] == rec.cluster[t]) ++e;
        os << ' ' << t << ':' << (e - t) << ':' << rec.cluster[t];
        t = e;
    }
    os << "\n";
    return os.str();
}

inline Recording decode_recording(const std::vector<std::uint8_t>& bytes, const std::string& origin = "recording") {
    io::Reader r(bytes.data(), bytes.size(), origin);
    if (r.bytes(8) != std::string_view(kRecordingMagic, 8)) throw FormatError(origin + ": bad magic");
    const std::uint32_t T = r.u32(), H = r.u32(), W = r.u32(), episodes = r.u32();
    if (H == 0 || W == 0) throw FormatError(origin + ": empty grid");
    const std::uint64_t need =
        std::uint64_t{H} * W + std::uint64_t{T} * 5 + std::uint64_t{T} * H * W * 4;
    if (r.remaining() < need) {
        throw io::TruncatedError(origin + ": truncated (" + std::to_string(r.remaining()) + " payload bytes, expected " +
                                 std::to_string(need) + ")");
    }
    if (r.remaining() > need) throw FormatError(origin + ": trailing bytes after frames");
    Recording rec;
    rec.height = H;
    rec.width = W;
    rec.valid.resize(std::size_t{H} * W);
    for (auto& b : rec.valid) {
        b = r.u8();
        if (b > 1) throw FormatError(origin + ": mask byte must be 0 or 1");
    }
    rec.episode.resize(T);
    rec.phase.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        rec.episode[t] = r.u32();
        const std::uint8_t ph = r.u8();
        if (ph > 1) throw FormatError(origin + ": frame " + std::to_string(t) + " has unknown phase " + std::to_string(ph));
        rec.phase[t] = static_cast<Phase>(ph);
    }
    rec.frames = Matrix<float>(T, std::size_t{H} * W);
    for (float& v : rec.frames.values()) v = r.f32();
    rec.cluster.assign(T, -1);
    if (rec.episode_count() != episodes) {
        throw FormatError(origin + ": header declares " + std::to_string(episodes) + " episodes, labels contain " +
                          std::to_string(rec.episode_count()));
    }
    double peak = 0.0;
    for (float v : rec.frames.values()) peak = std::max(peak, std::abs(static_cast<double>(v)));
    rec.meta.max_intensity = peak > 0.0 ? peak : 1.0;
    return rec;
}

inline void apply_recording_meta(Recording& rec, std::string_view text, const std::string& origin) {
    for (const auto& e : kv::parse(text, origin)) {
        if (e.key == "sampling_rate") {
            rec.meta.sampling_rate = kv::to_double(e.value, e.key);
        } else if (e.key == "max_intensity") {
            rec.meta.max_intensity = kv::to_double(e.value, e.key);
        } else if (e.key == "raw_peak") {
            rec.meta.raw_peak = kv::to_double(e.value, e.key);
        } else if (e.key == "seed") {
            rec.meta.seed = kv::to_u64(e.value, e.key);
        } else if (e.key == "pattern") {
            rec.meta.patterns.push_back(e.value);
        } else if (e.key == "cluster_runs") {
            for (const auto& run : kv::split_words(e.value)) {
                const auto parts = kv::split(run, ':');
                if (parts.size() != 3) throw FormatError(origin + ": bad cluster run '" + run + "'");
                const auto start = kv::to_u64(parts[0], "cluster run start");
                const auto len = kv::to_u64(parts[1], "cluster run length");
                const long c = std::stol(parts[2]);
                if (start + len > rec.length()) throw FormatError(origin + ": cluster run beyond recording end");
                std::fill_n(rec.cluster.begin() + static_cast<std::ptrdiff_t>(start), len,
                            static_cast<std::int32_t>(c));
            }
        } else {
            throw FormatError(origin + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
        }
    }
    if (!(rec.meta.sampling_rate > 0.0)) throw FormatError(origin + ": sampling_rate must be > 0");
    double peak = 0.0;
    for (float v : rec.frames.values()) peak = std::max(peak, std::abs(static_cast<double>(v)));
    if (!(rec.meta.max_intensity > 0.0) || rec.meta.max_intensity < peak) {
        throw FormatError(origin + ": max_intensity " + kv::format_double(rec.meta.max_intensity) +
                          " is below the largest |value| " + kv::format_double(peak));
    }
}

inline std::string meta_path(const std::string& path) { return path + ".meta"; }

/// Writes the binary recording and its key=value sidecar (path + ".meta").
inline void save_recording(const std::string& path, const Recording& rec) {
    io::write_file(path, encode_recording(rec));
    io::write_text(meta_path(path), encode_recording_meta(rec));
}

/// Reads a recording; the sidecar is optional (max_intensity then defaults
/// to the largest |value|).
inline Recording load_recording(const std::string& path) {
    Recording rec = decode_recording(io::read_file(path), path);
    const std::string mp = meta_path(path);
    if (std::filesystem::exists(mp)) {
        const auto bytes = io::read_file(mp);
        apply_recording_meta(rec, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), mp);
    }
    return rec;
}

}  // namespace mcl

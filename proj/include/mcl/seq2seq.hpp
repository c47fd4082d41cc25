#pragma once

// Encoder / decoder / predictor composite. The encoder consumes the observed
// prefix; its final per-layer states seed an unconditioned decoder that
// reconstructs the prefix (in reverse order by default) and an unconditioned
// predictor that emits the future frames in time order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/lstm.hpp"
#include "mcl/numerics.hpp"

namespace mcl {

struct SequenceSpec {
    std::size_t length = 20;   // total window length L
    std::size_t horizon = 10;  // predicted frames n
    std::size_t frame_dim = 0;

    std::size_t input_length() const { return length - horizon; }

    void validate() const {
        if (horizon == 0 || horizon >= length) {
            throw std::invalid_argument("SequenceSpec: need 0 < horizon < length (got horizon " +
                                        std::to_string(horizon) + ", length " + std::to_string(length) + ")");
        }
        if (frame_dim == 0) throw std::invalid_argument("SequenceSpec: frame_dim must be positive");
    }

    bool operator==(const SequenceSpec&) const = default;
};

struct ModelConfig {
    std::size_t hidden = 64;
    std::size_t layers = 2;
    bool peepholes = true;
    bool reverse_reconstruction = true;

    bool operator==(const ModelConfig&) const = default;
};

enum class Phase : std::uint8_t { baseline = 0, event = 1 };

inline const char* phase_name(Phase p) { return p == Phase::baseline ? "baseline" : "event"; }

/// One window of L consecutive frames (rows), flattened to frame_dim columns.
template <typename T>
struct SequenceSample {
    Matrix<T> frames;
    std::uint32_t episode = 0;
    Phase phase = Phase::baseline;
    std::size_t start = 0;  // first frame index in the source recording
    int cluster = -1;       // generator cluster when known and unique

    std::span<const T> frame(std::size_t t) const { return frames.row(t); }
};

template <typename T>
Matrix<T> prefix_frames(const SequenceSample<T>& s, const SequenceSpec& spec) {
    Matrix<T> out(spec.input_length(), s.frames.cols());
    std::copy(s.frames.data(), s.frames.data() + out.size(), out.data());
    return out;
}

template <typename Dst, typename Src>
SequenceSample<Dst> convert_sample(const SequenceSample<Src>& s) {
    SequenceSample<Dst> out{Matrix<Dst>(s.frames.rows(), s.frames.cols()), s.episode, s.phase, s.start, s.cluster};
    for (std::size_t k = 0; k < s.frames.size(); ++k) out.frames.data()[k] = static_cast<Dst>(s.frames.data()[k]);
    return out;
}

template <typename T>
struct Seq2SeqModel {
    SequenceSpec spec;
    ModelConfig config;
    std::vector<LstmLayerParams<T>> encoder, decoder, predictor;
    Matrix<T> recon_proj;  // frame_dim x hidden
    Vector<T> recon_bias;
    Matrix<T> pred_proj;
    Vector<T> pred_bias;

    static Seq2SeqModel zeros(const SequenceSpec& spec, const ModelConfig& cfg) {
        spec.validate();
        if (cfg.layers == 0 || cfg.hidden == 0) throw std::invalid_argument("ModelConfig: empty network");
        Seq2SeqModel m;
        m.spec = spec;
        m.config = cfg;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::size_t in = l == 0 ? spec.frame_dim : cfg.hidden;
            // Decoder and predictor are unconditioned: their first layer has no input.
            const std::size_t in_uncond = l == 0 ? 0 : cfg.hidden;
            m.encoder.emplace_back(in, cfg.hidden, cfg.peepholes);
            m.decoder.emplace_back(in_uncond, cfg.hidden, cfg.peepholes);
            m.predictor.emplace_back(in_uncond, cfg.hidden, cfg.peepholes);
        }
        m.recon_proj = Matrix<T>(spec.frame_dim, cfg.hidden);
        m.recon_bias = Vector<T>(spec.frame_dim, T(0));
        m.pred_proj = Matrix<T>(spec.frame_dim, cfg.hidden);
        m.pred_bias = Vector<T>(spec.frame_dim, T(0));
        return m;
    }

    static Seq2SeqModel random(const SequenceSpec& spec, const ModelConfig& cfg, Rng& rng, double scale = 0.08,
                               double forget_bias = 1.0) {
        Seq2SeqModel m = zeros(spec, cfg);
        auto init_stack = [&](std::vector<LstmLayerParams<T>>& stack) {
            for (auto& layer : stack) {
                layer = LstmLayerParams<T>::random(layer.input_dim, layer.hidden_dim, rng, cfg.peepholes, scale,
                                                   forget_bias);
            }
        };
        init_stack(m.encoder);
        init_stack(m.decoder);
        init_stack(m.predictor);
        for (T& v : m.recon_proj.values()) v = static_cast<T>(rng.uniform(-scale, scale));
        for (T& v : m.pred_proj.values()) v = static_cast<T>(rng.uniform(-scale, scale));
        return m;
    }

    /// Same architecture, every parameter zero.
    Seq2SeqModel zeros_like() const { return zeros(spec, config); }

    template <typename Self, typename F>
    static void for_each_tensor(Self& m, F&& f) {
        auto stack = [&](const char* name, auto& layers) {
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const std::string prefix = std::string(name) + "." + std::to_string(l) + ".";
                LstmLayerParams<T>::for_each_tensor(layers[l], [&](const char* t, auto span) {
                    f((prefix + t).c_str(), span);
                });
            }
        };
        stack("encoder", m.encoder);
        stack("decoder", m.decoder);
        stack("predictor", m.predictor);
        f("recon_proj", m.recon_proj.values());
        f("recon_bias", std::span(m.recon_bias));
        f("pred_proj", m.pred_proj.values());
        f("pred_bias", std::span(m.pred_bias));
    }

    std::vector<std::span<T>> tensors() {
        std::vector<std::span<T>> out;
        for_each_tensor(*this, [&](const char*, std::span<T> s) { out.push_back(s); });
        return out;
    }
    std::vector<std::span<const T>> tensors() const {
        std::vector<std::span<const T>> out;
        for_each_tensor(*this, [&](const char*, std::span<const T> s) { out.push_back(s); });
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto s : tensors()) n += s.size();
        return n;
    }

    bool operator==(const Seq2SeqModel&) const = default;
};

template <typename T>
struct StackMaskSet {
    StackMasks<T> encoder, decoder, predictor;
};

/// Forward results plus everything model_backward needs.
template <typename T>
struct ModelOutput {
    Matrix<T> reconstruction;  // decoder emission order, L - n rows
    Matrix<T> prediction;      // time order, n rows
    StackTrace<T> encoder_trace, decoder_trace, predictor_trace;
    StackMaskSet<T> masks;
    const void* model_tag = nullptr;  // identity of the model that produced this output
};

/// Row of the input prefix that decoder step k reconstructs.
inline std::size_t reconstruction_target_row(const ModelConfig& cfg, const SequenceSpec& spec, std::size_t k) {
    return cfg.reverse_reconstruction ? spec.input_length() - 1 - k : k;
}

struct ForwardOptions {
    DropoutSpec dropout;
    Rng* rng = nullptr;  // mask source, required when dropout is active
};

namespace detail {

template <typename T>
void check_frames(const Seq2SeqModel<T>& m, const Matrix<T>& frames, std::size_t rows, const char* what) {
    if (frames.rows() != rows || frames.cols() != m.spec.frame_dim) {
        throw std::invalid_argument(std::string(what) + ": expected " + shape_str(rows, m.spec.frame_dim) +
                                    " frames, got " + shape_str(frames.rows(), frames.cols()));
    }
}

template <typename T>
void check_states(const Seq2SeqModel<T>& m, const std::vector<LstmState<T>>& states) {
    if (states.size() != m.config.layers) throw std::invalid_argument("seq2seq: encoder state count mismatch");
    for (const auto& s : states) {
        if (s.h.size() != m.config.hidden || s.c.size() != m.config.hidden) {
            throw std::invalid_argument("seq2seq: encoder state width mismatch");
        }
    }
}

template <typename T>
void project(const Matrix<T>& w, const Vector<T>& b, const StackTrace<T>& trace, Matrix<T>& out) {
    const std::size_t steps = trace.length();
    out = Matrix<T>(steps, w.rows());
    for (std::size_t t = 0; t < steps; ++t) {
        auto row = out.row(t);
        std::copy(b.begin(), b.end(), row.begin());
        matvec_acc(w, std::span<const T>(trace.top_h(t)), row);
    }
}

}  // namespace detail

template <typename T>
std::vector<LstmState<T>> encode(const Seq2SeqModel<T>& m, const Matrix<T>& input_frames, StackTrace<T>* trace = nullptr,
                                 const StackMasks<T>& masks = {}) {
    detail::check_frames(m, input_frames, m.spec.input_length(), "encode");
    StackTrace<T> local;
    StackTrace<T>& tr = trace ? *trace : local;
    stack_forward(m.encoder, masks, input_frames, nullptr, tr);
    return tr.final_states();
}

template <typename T>
Matrix<T> decode_reconstruct(const Seq2SeqModel<T>& m, const std::vector<LstmState<T>>& states,
                             StackTrace<T>* trace = nullptr, const StackMasks<T>& masks = {}) {
    detail::check_states(m, states);
    StackTrace<T> local;
    StackTrace<T>& tr = trace ? *trace : local;
    stack_forward(m.decoder, masks, Matrix<T>(m.spec.input_length(), 0), &states, tr);
    Matrix<T> out;
    detail::project(m.recon_proj, m.recon_bias, tr, out);
    return out;
}

template <typename T>
Matrix<T> predict_future(const Seq2SeqModel<T>& m, const std::vector<LstmState<T>>& states,
                         StackTrace<T>* trace = nullptr, const StackMasks<T>& masks = {}) {
    detail::check_states(m, states);
    StackTrace<T> local;
    StackTrace<T>& tr = trace ? *trace : local;
    stack_forward(m.predictor, masks, Matrix<T>(m.spec.horizon, 0), &states, tr);
    Matrix<T> out;
    detail::project(m.pred_proj, m.pred_bias, tr, out);
    return out;
}

/// Full forward pass on the prefix of `frames` (only the first L - n rows are read).
template <typename T>
void model_forward(const Seq2SeqModel<T>& m, const Matrix<T>& frames, ModelOutput<T>& out,
                   const ForwardOptions& opt = {}) {
    if (frames.rows() < m.spec.input_length() || frames.cols() != m.spec.frame_dim) {
        throw std::invalid_argument("model_forward: expected at least " +
                                    shape_str(m.spec.input_length(), m.spec.frame_dim) + " frames, got " +
                                    shape_str(frames.rows(), frames.cols()));
    }
    out.masks = {};
    if (opt.dropout.active()) {
        if (!opt.rng) throw std::invalid_argument("model_forward: dropout needs an rng");
        out.masks.encoder = draw_masks(opt.dropout, m.encoder, *opt.rng);
        out.masks.decoder = draw_masks(opt.dropout, m.decoder, *opt.rng);
        out.masks.predictor = draw_masks(opt.dropout, m.predictor, *opt.rng);
    }
    Matrix<T> prefix = frames.rows() == m.spec.input_length() ? frames : Matrix<T>();
    if (frames.rows() != m.spec.input_length()) {
        prefix = Matrix<T>(m.spec.input_length(), m.spec.frame_dim);
        std::copy(frames.data(), frames.data() + prefix.size(), prefix.data());
    }
    stack_forward(m.encoder, out.masks.encoder, prefix, nullptr, out.encoder_trace);
    const auto states = out.encoder_trace.final_states();
    stack_forward(m.decoder, out.masks.decoder, Matrix<T>(m.spec.input_length(), 0), &states, out.decoder_trace);
    stack_forward(m.predictor, out.masks.predictor, Matrix<T>(m.spec.horizon, 0), &states, out.predictor_trace);
    detail::project(m.recon_proj, m.recon_bias, out.decoder_trace, out.reconstruction);
    detail::project(m.pred_proj, m.pred_bias, out.predictor_trace, out.prediction);
    out.model_tag = &m;
}

/// Sum of squared reconstruction errors against the (possibly reversed) prefix.
template <typename T>
T reconstruction_sse(const Seq2SeqModel<T>& m, const Matrix<T>& frames, const ModelOutput<T>& out) {
    T sse = T(0);
    for (std::size_t k = 0; k < m.spec.input_length(); ++k) {
        const auto target = frames.row(reconstruction_target_row(m.config, m.spec, k));
        const auto rec = out.reconstruction.row(k);
        for (std::size_t d = 0; d < target.size(); ++d) {
            const T e = rec[d] - target[d];
            sse += e * e;
        }
    }
    return sse;
}

template <typename T>
T prediction_sse(const Seq2SeqModel<T>& m, const Matrix<T>& frames, const ModelOutput<T>& out) {
    T sse = T(0);
    for (std::size_t k = 0; k < m.spec.horizon; ++k) {
        const auto target = frames.row(m.spec.input_length() + k);
        const auto pred = out.prediction.row(k);
        for (std::size_t d = 0; d < target.size(); ++d) {
            const T e = pred[d] - target[d];
            sse += e * e;
        }
    }
    return sse;
}

/// Mean squared error over all L frames (reconstruction and prediction
/// weighted equally), normalized by L * frame_dim.
template <typename T>
T sequence_loss(const Seq2SeqModel<T>& m, const SequenceSample<T>& sample, ModelOutput<T>& out,
                const ForwardOptions& opt = {}) {
    detail::check_frames(m, sample.frames, m.spec.length, "sequence_loss");
    model_forward(m, sample.frames, out, opt);
    const T total = reconstruction_sse(m, sample.frames, out) + prediction_sse(m, sample.frames, out);
    return total / static_cast<T>(m.spec.length * m.spec.frame_dim);
}

template <typename T>
std::pair<T, ModelOutput<T>> sequence_loss(const Seq2SeqModel<T>& m, const SequenceSample<T>& sample) {
    ModelOutput<T> out;
    const T loss = sequence_loss(m, sample, out);
    return {loss, std::move(out)};
}

/// Relative weights of the two loss branches (both 1 for the training loss).
struct BranchWeights {
    double reconstruction = 1.0;
    double prediction = 1.0;
};

/// Accumulates scale * d(sequence_loss)/d(params) into `grads`, which must
/// have the architecture of `m` (see Seq2SeqModel::zeros_like).
template <typename T>
void model_backward(const Seq2SeqModel<T>& m, const SequenceSample<T>& sample, const ModelOutput<T>& out,
                    Seq2SeqModel<T>& grads, T scale = T(1), BranchWeights branches = {}) {
    detail::check_frames(m, sample.frames, m.spec.length, "model_backward");
    if (out.model_tag != &m || out.reconstruction.rows() != m.spec.input_length() ||
        out.prediction.rows() != m.spec.horizon || out.encoder_trace.length() != m.spec.input_length()) {
        throw std::invalid_argument("model_backward: output was not produced by this model");
    }
    const std::size_t D = m.spec.frame_dim;
    const std::size_t H = m.config.hidden;
    const T norm = T(2) * scale / static_cast<T>(m.spec.length * D);
    const T w_rec = norm * static_cast<T>(branches.reconstruction);
    const T w_pred = norm * static_cast<T>(branches.prediction);

    // Output layers: dL/dy = 2 (y - x) / (L D).
    auto head_backward = [&](const Matrix<T>& outputs, auto target_row, T weight, const Matrix<T>& proj,
                             const StackTrace<T>& trace, Matrix<T>& proj_grad, Vector<T>& bias_grad) {
        Matrix<T> d_top(outputs.rows(), H);
        Vector<T> dy(D);
        for (std::size_t k = 0; k < outputs.rows(); ++k) {
            const auto target = sample.frames.row(target_row(k));
            const auto y = outputs.row(k);
            for (std::size_t d = 0; d < D; ++d) dy[d] = weight * (y[d] - target[d]);
            for (std::size_t d = 0; d < D; ++d) bias_grad[d] += dy[d];
            outer_acc(proj_grad, std::span<const T>(dy), std::span<const T>(trace.top_h(k)));
            matvec_t_acc(proj, std::span<const T>(dy), d_top.row(k));
        }
        return d_top;
    };

    const Matrix<T> d_dec_top = head_backward(
        out.reconstruction, [&](std::size_t k) { return reconstruction_target_row(m.config, m.spec, k); }, w_rec,
        m.recon_proj, out.decoder_trace, grads.recon_proj, grads.recon_bias);
    const Matrix<T> d_pred_top = head_backward(
        out.prediction, [&](std::size_t k) { return m.spec.input_length() + k; }, w_pred, m.pred_proj,
        out.predictor_trace, grads.pred_proj, grads.pred_bias);

    std::vector<LstmState<T>> d_dec_init, d_pred_init;
    stack_backward(m.decoder, out.masks.decoder, out.decoder_trace, d_dec_top, nullptr, grads.decoder, nullptr,
                   &d_dec_init);
    stack_backward(m.predictor, out.masks.predictor, out.predictor_trace, d_pred_top, nullptr, grads.predictor,
                   nullptr, &d_pred_init);

    // Encoder final states feed both branches.
    std::vector<LstmState<T>> d_enc_final(m.config.layers, LstmState<T>(H));
    for (std::size_t l = 0; l < m.config.layers; ++l) {
        for (std::size_t k = 0; k < H; ++k) {
            d_enc_final[l].h[k] = d_dec_init[l].h[k] + d_pred_init[l].h[k];
            d_enc_final[l].c[k] = d_dec_init[l].c[k] + d_pred_init[l].c[k];
        }
    }
    const Matrix<T> no_top(m.spec.input_length(), H);
    stack_backward(m.encoder, out.masks.encoder, out.encoder_trace, no_top, &d_enc_final, grads.encoder, nullptr,
                   nullptr);
}

/// Returns fresh gradients of sequence_loss for one sample.
template <typename T>
Seq2SeqModel<T> model_gradients(const Seq2SeqModel<T>& m, const SequenceSample<T>& sample,
                                BranchWeights branches = {}) {
    ModelOutput<T> out;
    sequence_loss(m, sample, out);
    Seq2SeqModel<T> grads = m.zeros_like();
    model_backward(m, sample, out, grads, T(1), branches);
    return grads;
}

template <typename Dst, typename Src>
Seq2SeqModel<Dst> convert_model(const Seq2SeqModel<Src>& m) {
    Seq2SeqModel<Dst> out = Seq2SeqModel<Dst>::zeros(m.spec, m.config);
    auto dst = out.tensors();
    auto src = m.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t) {
        for (std::size_t k = 0; k < dst[t].size(); ++k) dst[t][k] = static_cast<Dst>(src[t][k]);
    }
    return out;
}

}  // namespace mcl

#pragma once

// Peephole LSTM cell and stacked sequence processing with exact BPTT.
//
//   i_t = sigmoid(W_xi x_t + W_hi h_{t-1} + w_ci * c_{t-1} + b_i)
//   f_t = sigmoid(W_xf x_t + W_hf h_{t-1} + w_cf * c_{t-1} + b_f)
//   g_t = tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//   c_t = f_t * c_{t-1} + i_t * g_t
//   o_t = sigmoid(W_xo x_t + W_ho h_{t-1} + w_co * c_t + b_o)
//   h_t = o_t * tanh(c_t)
//
// Peepholes act elementwise, so they are stored as vectors. The output gate
// peeks at the new cell state c_t.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mcl/numerics.hpp"

namespace mcl {

template <typename T>
struct LstmLayerParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    bool peepholes = true;

    Matrix<T> w_xi, w_xf, w_xc, w_xo;
    Matrix<T> w_hi, w_hf, w_hc, w_ho;
    Vector<T> w_ci, w_cf, w_co;
    Vector<T> b_i, b_f, b_c, b_o;

    LstmLayerParams() = default;

    /// Zero-initialized layer.
    LstmLayerParams(std::size_t in, std::size_t hidden, bool use_peepholes = true)
        : input_dim(in),
          hidden_dim(hidden),
          peepholes(use_peepholes),
          w_xi(hidden, in), w_xf(hidden, in), w_xc(hidden, in), w_xo(hidden, in),
          w_hi(hidden, hidden), w_hf(hidden, hidden), w_hc(hidden, hidden), w_ho(hidden, hidden),
          w_ci(hidden), w_cf(hidden), w_co(hidden),
          b_i(hidden), b_f(hidden), b_c(hidden), b_o(hidden) {}

    /// Uniform init in [-scale, scale]; forget_bias is then added to b_f.
    static LstmLayerParams random(std::size_t in, std::size_t hidden, Rng& rng, bool use_peepholes = true,
                                  double scale = 0.08, double forget_bias = 1.0) {
        LstmLayerParams p(in, hidden, use_peepholes);
        for_each_tensor(p, [&](const char*, std::span<T> t) {
            for (T& v : t) v = static_cast<T>(rng.uniform(-scale, scale));
        });
        if (!use_peepholes) {
            std::fill(p.w_ci.begin(), p.w_ci.end(), T(0));
            std::fill(p.w_cf.begin(), p.w_cf.end(), T(0));
            std::fill(p.w_co.begin(), p.w_co.end(), T(0));
        }
        for (T& b : p.b_f) b += static_cast<T>(forget_bias);
        return p;
    }

    /// Visits every tensor in a fixed order as (name, span).
    template <typename Self, typename F>
    static void for_each_tensor(Self& p, F&& f) {
        f("w_xi", p.w_xi.values());
        f("w_xf", p.w_xf.values());
        f("w_xc", p.w_xc.values());
        f("w_xo", p.w_xo.values());
        f("w_hi", p.w_hi.values());
        f("w_hf", p.w_hf.values());
        f("w_hc", p.w_hc.values());
        f("w_ho", p.w_ho.values());
        f("w_ci", std::span(p.w_ci));
        f("w_cf", std::span(p.w_cf));
        f("w_co", std::span(p.w_co));
        f("b_i", std::span(p.b_i));
        f("b_f", std::span(p.b_f));
        f("b_c", std::span(p.b_c));
        f("b_o", std::span(p.b_o));
    }

    bool operator==(const LstmLayerParams&) const = default;
};

template <typename T>
struct LstmState {
    Vector<T> h;
    Vector<T> c;

    LstmState() = default;
    explicit LstmState(std::size_t hidden) : h(hidden, T(0)), c(hidden, T(0)) {}
    LstmState(Vector<T> h_, Vector<T> c_) : h(std::move(h_)), c(std::move(c_)) {}

    bool operator==(const LstmState&) const = default;
};

template <typename T>
struct StepCache {
    Vector<T> x, h_prev, c_prev;
    Vector<T> i, f, o, g;  // g = tanh candidate
    Vector<T> c, h;
    Vector<T> tanh_c;
};

struct DropoutSpec {
    double rate = 0.0;
    bool training = false;

    bool active() const { return training && rate > 0.0; }
};

/// Inverted-dropout masks for the connections between stacked layers.
/// masks[l] scales the input of layer l + 1 and is reused at every time step.
template <typename T>
struct StackMasks {
    std::vector<Vector<T>> masks;

    bool empty() const { return masks.empty(); }
};

template <typename T>
StackMasks<T> draw_masks(const DropoutSpec& spec, const std::vector<LstmLayerParams<T>>& layers, Rng& rng) {
    StackMasks<T> out;
    if (!spec.active() || layers.size() < 2) return out;
    if (spec.rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - spec.rate));
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        Vector<T> m(layers[l].hidden_dim);
        for (T& v : m) v = rng.uniform() < spec.rate ? T(0) : keep_scale;
        out.masks.push_back(std::move(m));
    }
    return out;
}

namespace detail {

template <typename T>
void check_cell_shapes(const LstmLayerParams<T>& p, std::size_t x, std::size_t h, std::size_t c) {
    if (x != p.input_dim || h != p.hidden_dim || c != p.hidden_dim) {
        throw std::invalid_argument("lstm cell: shape mismatch (input " + std::to_string(x) + "/" +
                                    std::to_string(p.input_dim) + ", hidden " + std::to_string(h) + "/" +
                                    std::to_string(p.hidden_dim) + ")");
    }
}

}  // namespace detail

/// Forward step writing all intermediates into `cache` (buffers are reused).
template <typename T>
void cell_forward(const LstmLayerParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                  std::span<const T> c_prev, StepCache<T>& cache) {
    detail::check_cell_shapes(p, x.size(), h_prev.size(), c_prev.size());
    const std::size_t H = p.hidden_dim;
    cache.x.assign(x.begin(), x.end());
    cache.h_prev.assign(h_prev.begin(), h_prev.end());
    cache.c_prev.assign(c_prev.begin(), c_prev.end());

    cache.i.assign(p.b_i.begin(), p.b_i.end());
    cache.f.assign(p.b_f.begin(), p.b_f.end());
    cache.g.assign(p.b_c.begin(), p.b_c.end());
    cache.o.assign(p.b_o.begin(), p.b_o.end());
    matvec_acc(p.w_xi, x, std::span(cache.i));
    matvec_acc(p.w_xf, x, std::span(cache.f));
    matvec_acc(p.w_xc, x, std::span(cache.g));
    matvec_acc(p.w_xo, x, std::span(cache.o));
    matvec_acc(p.w_hi, h_prev, std::span(cache.i));
    matvec_acc(p.w_hf, h_prev, std::span(cache.f));
    matvec_acc(p.w_hc, h_prev, std::span(cache.g));
    matvec_acc(p.w_ho, h_prev, std::span(cache.o));

    cache.c.resize(H);
    cache.h.resize(H);
    cache.tanh_c.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        T ai = cache.i[k];
        T af = cache.f[k];
        if (p.peepholes) {
            ai += p.w_ci[k] * c_prev[k];
            af += p.w_cf[k] * c_prev[k];
        }
        const T i = sigmoid(ai);
        const T f = sigmoid(af);
        const T g = std::tanh(cache.g[k]);
        const T c = f * c_prev[k] + i * g;
        T ao = cache.o[k];
        if (p.peepholes) ao += p.w_co[k] * c;
        const T o = sigmoid(ao);
        const T tc = std::tanh(c);
        cache.i[k] = i;
        cache.f[k] = f;
        cache.g[k] = g;
        cache.o[k] = o;
        cache.c[k] = c;
        cache.tanh_c[k] = tc;
        cache.h[k] = o * tc;
    }
}

template <typename T>
std::pair<LstmState<T>, StepCache<T>> cell_forward(const LstmLayerParams<T>& p, const LstmState<T>& state,
                                                   std::span<const T> x) {
    StepCache<T> cache;
    cell_forward(p, x, std::span<const T>(state.h), std::span<const T>(state.c), cache);
    LstmState<T> next(cache.h, cache.c);
    return {std::move(next), std::move(cache)};
}

/// Scratch space for cell_backward; reused across steps.
template <typename T>
struct CellBackwardScratch {
    Vector<T> da_i, da_f, da_g, da_o;
};

/// Backward step. `dh`, `dc` are the loss gradients w.r.t. h_t and c_t
/// arriving from later steps and layers above. Parameter gradients are
/// accumulated into `grads`; dx, dh_prev and dc_prev are overwritten.
template <typename T>
void cell_backward(const LstmLayerParams<T>& p, const StepCache<T>& cache, std::span<const T> dh,
                   std::span<const T> dc, LstmLayerParams<T>& grads, std::span<T> dx, std::span<T> dh_prev,
                   std::span<T> dc_prev, CellBackwardScratch<T>& s) {
    const std::size_t H = p.hidden_dim;
    if (dh.size() != H || dc.size() != H || dh_prev.size() != H || dc_prev.size() != H ||
        dx.size() != p.input_dim || cache.h.size() != H) {
        throw std::invalid_argument("lstm cell_backward: shape mismatch");
    }
    s.da_i.resize(H);
    s.da_f.resize(H);
    s.da_g.resize(H);
    s.da_o.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        const T o = cache.o[k], i = cache.i[k], f = cache.f[k], g = cache.g[k], tc = cache.tanh_c[k];
        const T da_o = dh[k] * tc * o * (T(1) - o);
        T dct = dc[k] + dh[k] * o * (T(1) - tc * tc);
        if (p.peepholes) dct += da_o * p.w_co[k];
        const T da_f = dct * cache.c_prev[k] * f * (T(1) - f);
        const T da_i = dct * g * i * (T(1) - i);
        const T da_g = dct * i * (T(1) - g * g);
        T dcp = dct * f;
        if (p.peepholes) {
            dcp += da_i * p.w_ci[k] + da_f * p.w_cf[k];
            grads.w_ci[k] += da_i * cache.c_prev[k];
            grads.w_cf[k] += da_f * cache.c_prev[k];
            grads.w_co[k] += da_o * cache.c[k];
        }
        dc_prev[k] = dcp;
        s.da_i[k] = da_i;
        s.da_f[k] = da_f;
        s.da_g[k] = da_g;
        s.da_o[k] = da_o;
        grads.b_i[k] += da_i;
        grads.b_f[k] += da_f;
        grads.b_c[k] += da_g;
        grads.b_o[k] += da_o;
    }
    const std::span<const T> ai(s.da_i), af(s.da_f), ag(s.da_g), ao(s.da_o);
    const std::span<const T> x(cache.x), hp(cache.h_prev);
    outer_acc(grads.w_xi, ai, x);
    outer_acc(grads.w_xf, af, x);
    outer_acc(grads.w_xc, ag, x);
    outer_acc(grads.w_xo, ao, x);
    outer_acc(grads.w_hi, ai, hp);
    outer_acc(grads.w_hf, af, hp);
    outer_acc(grads.w_hc, ag, hp);
    outer_acc(grads.w_ho, ao, hp);

    std::fill(dx.begin(), dx.end(), T(0));
    matvec_t_acc(p.w_xi, ai, dx);
    matvec_t_acc(p.w_xf, af, dx);
    matvec_t_acc(p.w_xc, ag, dx);
    matvec_t_acc(p.w_xo, ao, dx);
    std::fill(dh_prev.begin(), dh_prev.end(), T(0));
    matvec_t_acc(p.w_hi, ai, dh_prev);
    matvec_t_acc(p.w_hf, af, dh_prev);
    matvec_t_acc(p.w_hc, ag, dh_prev);
    matvec_t_acc(p.w_ho, ao, dh_prev);
}

template <typename T>
struct CellGradients {
    LstmLayerParams<T> params;
    Vector<T> dx;
    LstmState<T> dstate_prev;
};

template <typename T>
CellGradients<T> cell_backward(const LstmLayerParams<T>& p, const StepCache<T>& cache, std::span<const T> dh,
                               std::span<const T> dc) {
    CellGradients<T> out{LstmLayerParams<T>(p.input_dim, p.hidden_dim, p.peepholes), Vector<T>(p.input_dim),
                         LstmState<T>(p.hidden_dim)};
    CellBackwardScratch<T> scratch;
    cell_backward(p, cache, dh, dc, out.params, std::span(out.dx), std::span(out.dstate_prev.h),
                  std::span(out.dstate_prev.c), scratch);
    return out;
}

/// Per-layer, per-step caches of one stacked forward pass.
template <typename T>
struct StackTrace {
    std::vector<std::vector<StepCache<T>>> steps;  // [layer][t]

    std::size_t length() const { return steps.empty() ? 0 : steps.front().size(); }
    const Vector<T>& top_h(std::size_t t) const { return steps.back()[t].h; }

    std::vector<LstmState<T>> final_states() const {
        std::vector<LstmState<T>> out;
        for (const auto& layer : steps) out.emplace_back(layer.back().h, layer.back().c);
        return out;
    }
};

namespace detail {

template <typename T>
void check_stack(const std::vector<LstmLayerParams<T>>& layers, std::size_t input_dim) {
    if (layers.empty()) throw std::invalid_argument("lstm stack: no layers");
    if (layers[0].input_dim != input_dim) {
        throw std::invalid_argument("lstm stack: input dim " + std::to_string(input_dim) + " != layer 0 input " +
                                    std::to_string(layers[0].input_dim));
    }
    for (std::size_t l = 1; l < layers.size(); ++l) {
        if (layers[l].input_dim != layers[l - 1].hidden_dim) {
            throw std::invalid_argument("lstm stack: layer " + std::to_string(l) + " input " +
                                        std::to_string(layers[l].input_dim) + " != layer " + std::to_string(l - 1) +
                                        " hidden " + std::to_string(layers[l - 1].hidden_dim));
        }
    }
}

}  // namespace detail

/// Runs the stack over `inputs` (one row per step; zero columns for an
/// unconditioned stack). `initial` may be null for zero initial states.
template <typename T>
void stack_forward(const std::vector<LstmLayerParams<T>>& layers, const std::type_identity_t<StackMasks<T>>& masks,
                   const Matrix<T>& inputs, const std::type_identity_t<std::vector<LstmState<T>>>* initial,
                   StackTrace<T>& trace) {
    detail::check_stack(layers, inputs.cols());
    if (initial && initial->size() != layers.size()) {
        throw std::invalid_argument("lstm stack: initial state count mismatch");
    }
    if (!masks.empty() && masks.masks.size() + 1 != layers.size()) {
        throw std::invalid_argument("lstm stack: dropout mask count mismatch");
    }
    const std::size_t steps = inputs.rows();
    if (steps == 0) throw std::invalid_argument("lstm stack: empty sequence");
    trace.steps.resize(layers.size());
    Vector<T> masked;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& p = layers[l];
        auto& caches = trace.steps[l];
        caches.resize(steps);
        const Vector<T> zeros(p.hidden_dim, T(0));
        for (std::size_t t = 0; t < steps; ++t) {
            std::span<const T> x;
            if (l == 0) {
                x = inputs.row(t);
            } else if (masks.empty()) {
                x = trace.steps[l - 1][t].h;
            } else {
                masked = hadamard(std::span<const T>(trace.steps[l - 1][t].h), std::span<const T>(masks.masks[l - 1]));
                x = masked;
            }
            std::span<const T> h0, c0;
            if (t > 0) {
                h0 = caches[t - 1].h;
                c0 = caches[t - 1].c;
            } else if (initial) {
                h0 = (*initial)[l].h;
                c0 = (*initial)[l].c;
            } else {
                h0 = zeros;
                c0 = zeros;
            }
            cell_forward(p, x, h0, c0, caches[t]);
        }
    }
}

template <typename T>
StackTrace<T> stack_forward(const std::vector<LstmLayerParams<T>>& layers,
                            const std::type_identity_t<StackMasks<T>>& masks, const Matrix<T>& inputs,
                            const std::type_identity_t<std::vector<LstmState<T>>>* initial = nullptr) {
    StackTrace<T> trace;
    stack_forward(layers, masks, inputs, initial, trace);
    return trace;
}

/// BPTT through a stack. `d_top_h` holds dLoss/dh of the top layer per step
/// (rows = steps). `d_final` (optional) holds gradients w.r.t. each layer's
/// final (h, c). Parameter gradients accumulate into `grads`; input gradients
/// and initial-state gradients are written when requested.
template <typename T>
void stack_backward(const std::vector<LstmLayerParams<T>>& layers, const std::type_identity_t<StackMasks<T>>& masks,
                    const StackTrace<T>& trace, const Matrix<T>& d_top_h,
                    const std::type_identity_t<std::vector<LstmState<T>>>* d_final,
                    std::vector<LstmLayerParams<T>>& grads, std::type_identity_t<Matrix<T>>* d_inputs,
                    std::type_identity_t<std::vector<LstmState<T>>>* d_initial) {
    const std::size_t steps = trace.length();
    const std::size_t L = layers.size();
    if (grads.size() != L || trace.steps.size() != L || d_top_h.rows() != steps ||
        d_top_h.cols() != layers.back().hidden_dim) {
        throw std::invalid_argument("lstm stack_backward: shape mismatch");
    }
    CellBackwardScratch<T> scratch;
    // External dh for the current layer, per step.
    Matrix<T> d_ext = d_top_h;
    Matrix<T> d_below;
    if (d_initial) d_initial->assign(L, LstmState<T>());
    for (std::size_t li = L; li-- > 0;) {
        const auto& p = layers[li];
        const std::size_t H = p.hidden_dim;
        d_below = Matrix<T>(steps, p.input_dim);
        Vector<T> dh_next(H, T(0)), dc_next(H, T(0));
        if (d_final && !d_final->empty()) {
            dh_next = (*d_final)[li].h;
            dc_next = (*d_final)[li].c;
        }
        Vector<T> dh(H), dh_prev(H), dc_prev(H);
        for (std::size_t t = steps; t-- > 0;) {
            const auto ext = d_ext.row(t);
            for (std::size_t k = 0; k < H; ++k) dh[k] = ext[k] + dh_next[k];
            cell_backward(p, trace.steps[li][t], std::span<const T>(dh), std::span<const T>(dc_next), grads[li],
                          d_below.row(t), std::span(dh_prev), std::span(dc_prev), scratch);
            dh_next.swap(dh_prev);
            dc_next.swap(dc_prev);
        }
        if (d_initial) (*d_initial)[li] = LstmState<T>(dh_next, dc_next);
        if (li > 0) {
            if (!masks.empty()) {
                const auto& m = masks.masks[li - 1];
                for (std::size_t t = 0; t < steps; ++t) {
                    auto row = d_below.row(t);
                    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= m[k];
                }
            }
            d_ext = std::move(d_below);
        }
    }
    if (d_inputs) *d_inputs = std::move(d_below);
}

}  // namespace mcl

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mcl/seq2seq.hpp"

using namespace mcl;

namespace {

SequenceSample<double> random_sample(Rng& rng, const SequenceSpec& spec, double scale = 1.0) {
    SequenceSample<double> s;
    s.frames = uniform_init<double>(rng, spec.length, spec.frame_dim, scale);
    return s;
}

SequenceSample<double> constant_sample(const SequenceSpec& spec, double v) {
    SequenceSample<double> s;
    s.frames = Matrix<double>(spec.length, spec.frame_dim, v);
    return s;
}

struct ScalarCell {
    double wx = 0, wh = 0;  // shared across gates for the trace
};

// Scalar reference of the cell for a 1-unit layer whose gates all share the
// same input and recurrent weight and have zero bias/peepholes.
double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void scalar_step(double wx, double wh, double x, double& h, double& c) {
    const double a = wx * x + wh * h;
    const double i = sig(a), f = sig(a), g = std::tanh(a);
    c = f * c + i * g;
    const double o = sig(a);
    h = o * std::tanh(c);
}

LstmLayerParams<double> shared_gate_layer(std::size_t in, double wx, double wh) {
    LstmLayerParams<double> p(in, 1, false);
    if (in > 0) p.w_xi(0, 0) = p.w_xf(0, 0) = p.w_xc(0, 0) = p.w_xo(0, 0) = wx;
    p.w_hi(0, 0) = p.w_hf(0, 0) = p.w_hc(0, 0) = p.w_ho(0, 0) = wh;
    return p;
}

}  // namespace

TEST(SequenceSpec, RejectsInvalidHorizon) {
    EXPECT_THROW((SequenceSpec{10, 0, 4}.validate()), std::invalid_argument);
    EXPECT_THROW((SequenceSpec{10, 10, 4}.validate()), std::invalid_argument);
    EXPECT_NO_THROW((SequenceSpec{20, 10, 4}.validate()));
}

TEST(Encode, ZeroModelGivesZeroStates) {
    const SequenceSpec spec{8, 3, 5};
    const auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{4, 2});
    Rng rng(1);
    const auto s = random_sample(rng, spec);
    for (const auto& st : encode(m, prefix_frames(s, spec))) {
        for (double v : st.h) EXPECT_EQ(v, 0.0);
        for (double v : st.c) EXPECT_EQ(v, 0.0);
    }
}

TEST(Encode, IsAPureFunction) {
    const SequenceSpec spec{8, 3, 5};
    Rng rng(2);
    const auto m = Seq2SeqModel<float>::random(spec, ModelConfig{6, 2}, rng);
    const Matrix<float> in = uniform_init<float>(rng, 5, 5, 1.0);
    EXPECT_EQ(encode(m, in), encode(m, in));
}

TEST(Encode, ShapeMismatchThrows) {
    const SequenceSpec spec{8, 3, 5};
    const auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{4, 1});
    EXPECT_THROW(encode(m, Matrix<double>(4, 5)), std::invalid_argument);
    EXPECT_THROW(encode(m, Matrix<double>(5, 4)), std::invalid_argument);
}

TEST(Encode, SingleUnitMatchesScalarTrace) {
    const SequenceSpec spec{5, 2, 1};
    ModelConfig cfg{1, 1, false, true};
    auto m = Seq2SeqModel<double>::zeros(spec, cfg);
    m.encoder[0] = shared_gate_layer(1, 0.7, -0.4);
    const auto in = Matrix<double>::from_rows({{0.5}, {-1.0}, {0.25}});
    double h = 0, c = 0;
    for (double x : {0.5, -1.0, 0.25}) scalar_step(0.7, -0.4, x, h, c);
    const auto states = encode(m, in);
    EXPECT_NEAR(states[0].h[0], h, 1e-15);
    EXPECT_NEAR(states[0].c[0], c, 1e-15);
}

TEST(Decode, ZeroModelEmitsProjectionBias) {
    const SequenceSpec spec{9, 4, 3};
    auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{4, 2});
    m.recon_bias = {0.1, -0.2, 0.3};
    m.pred_bias = {1.0, 2.0, 3.0};
    const auto states = encode(m, Matrix<double>(5, 3, 0.5));
    const auto rec = decode_reconstruct(m, states);
    const auto pred = predict_future(m, states);
    ASSERT_EQ(rec.rows(), 5u);
    ASSERT_EQ(pred.rows(), 4u);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(rec(t, d), m.recon_bias[d]);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(pred(t, d), m.pred_bias[d]);
}

TEST(Decode, OutputLengthsFollowSpec) {
    Rng rng(3);
    for (std::size_t L : {4u, 7u, 12u}) {
        for (std::size_t n = 1; n < L; n += 2) {
            const SequenceSpec spec{L, n, 2};
            const auto m = Seq2SeqModel<float>::random(spec, ModelConfig{3, 2}, rng);
            const auto st = encode(m, Matrix<float>(L - n, 2, 0.1f));
            EXPECT_EQ(decode_reconstruct(m, st).rows(), L - n);
            EXPECT_EQ(predict_future(m, st).rows(), n);
        }
    }
}

TEST(Decode, SingleUnitBranchesMatchScalarTrace) {
    const SequenceSpec spec{5, 2, 1};
    ModelConfig cfg{1, 1, false, true};
    auto m = Seq2SeqModel<double>::zeros(spec, cfg);
    m.encoder[0] = shared_gate_layer(1, 0.9, 0.3);
    m.decoder[0] = shared_gate_layer(0, 0.0, 0.8);
    m.predictor[0] = shared_gate_layer(0, 0.0, -0.6);
    m.recon_proj(0, 0) = 2.0;
    m.recon_bias[0] = 0.1;
    m.pred_proj(0, 0) = -1.5;
    m.pred_bias[0] = 0.2;
    const auto in = Matrix<double>::from_rows({{1.0}, {-0.5}, {0.3}});
    double h = 0, c = 0;
    for (double x : {1.0, -0.5, 0.3}) scalar_step(0.9, 0.3, x, h, c);
    const auto states = encode(m, in);

    double hd = h, cd = c;
    const auto rec = decode_reconstruct(m, states);
    for (std::size_t k = 0; k < 3; ++k) {
        scalar_step(0.0, 0.8, 0.0, hd, cd);
        EXPECT_NEAR(rec(k, 0), 2.0 * hd + 0.1, 1e-15);
    }
    double hp = h, cp = c;
    const auto pred = predict_future(m, states);
    for (std::size_t k = 0; k < 2; ++k) {
        scalar_step(0.0, -0.6, 0.0, hp, cp);
        EXPECT_NEAR(pred(k, 0), -1.5 * hp + 0.2, 1e-15);
    }
}

TEST(SequenceLoss, ZeroForExactOutput) {
    const SequenceSpec spec{6, 2, 3};
    auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{2, 1});
    m.recon_bias = {0.5, 0.5, 0.5};
    m.pred_bias = {0.5, 0.5, 0.5};
    EXPECT_EQ(sequence_loss(m, constant_sample(spec, 0.5)).first, 0.0);
    const auto z = Seq2SeqModel<double>::zeros(spec, ModelConfig{2, 1});
    EXPECT_EQ(sequence_loss(z, constant_sample(spec, 0.0)).first, 0.0);
}

TEST(SequenceLoss, ConstantBiasAgainstConstantSample) {
    const SequenceSpec spec{6, 2, 3};
    auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{2, 1});
    m.recon_bias.assign(3, 0.25);
    m.pred_bias.assign(3, 0.25);
    EXPECT_NEAR(sequence_loss(m, constant_sample(spec, -0.5)).first, 0.5625, 1e-15);  // (-0.5 - 0.25)^2
}

TEST(SequenceLoss, ReconstructionTargetsAreReversed) {
    const SequenceSpec spec{5, 2, 1};
    auto m = Seq2SeqModel<double>::zeros(spec, ModelConfig{1, 1});
    // Only the reconstruction branch errs; sample prefix is 1, 2, 3.
    SequenceSample<double> s;
    s.frames = Matrix<double>::from_rows({{1}, {2}, {3}, {0}, {0}});
    ModelOutput<double> out;
    model_forward(m, s.frames, out);
    out.reconstruction = Matrix<double>::from_rows({{3}, {2}, {1}});
    EXPECT_EQ(reconstruction_sse(m, s.frames, out), 0.0);
    m.config.reverse_reconstruction = false;
    EXPECT_EQ(reconstruction_sse(m, s.frames, out), 8.0);
}

TEST(SequenceLoss, NonNegative) {
    Rng rng(4);
    const SequenceSpec spec{6, 3, 4};
    for (int k = 0; k < 10; ++k) {
        const auto m = Seq2SeqModel<double>::random(spec, ModelConfig{3, 2}, rng, 0.5);
        EXPECT_GT(sequence_loss(m, random_sample(rng, spec)).first, 0.0);
    }
}

TEST(ModelBackward, PerfectOutputGivesZeroGradients) {
    const SequenceSpec spec{6, 2, 3};
    Rng rng(5);
    auto m = Seq2SeqModel<double>::random(spec, ModelConfig{3, 2}, rng);
    // Zero the projections so outputs equal the bias, then make the bias the target.
    m.recon_proj.fill(0.0);
    m.pred_proj.fill(0.0);
    m.recon_bias.assign(3, 0.3);
    m.pred_bias.assign(3, 0.3);
    const auto g = model_gradients(m, constant_sample(spec, 0.3));
    for (auto t : g.tensors())
        for (double v : t) EXPECT_EQ(v, 0.0);
}

TEST(ModelBackward, FullModelMatchesFiniteDifferences) {
    const SequenceSpec spec{8, 3, 4};
    Rng rng(6);
    auto m = Seq2SeqModel<double>::random(spec, ModelConfig{6, 2}, rng, 0.3);
    const auto sample = random_sample(rng, spec, 0.8);
    const auto g = model_gradients(m, sample);
    std::vector<std::string> names;
    Seq2SeqModel<double>::for_each_tensor(m, [&](const char* n, auto) { names.emplace_back(n); });
    const auto worst = gradcheck::check_gradients(names, m.tensors(), std::as_const(g).tensors(),
                                                [&] { return sequence_loss(m, sample).first; });
    EXPECT_LT(worst.rel_error, 1e-5) << worst.tensor << "[" << worst.index << "] " << worst.analytic << " vs "
                                     << worst.numeric;
}

TEST(ModelBackward, EncoderGradientIsSumOfBranchContributions) {
    const SequenceSpec spec{8, 3, 4};
    Rng rng(7);
    const auto m = Seq2SeqModel<double>::random(spec, ModelConfig{5, 2}, rng, 0.3);
    const auto sample = random_sample(rng, spec);
    const auto both = model_gradients(m, sample);
    const auto rec_only = model_gradients(m, sample, BranchWeights{1.0, 0.0});
    const auto pred_only = model_gradients(m, sample, BranchWeights{0.0, 1.0});
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
        const auto a = std::as_const(both.encoder[l]).w_xi.values();
        const auto r = std::as_const(rec_only.encoder[l]).w_xi.values();
        const auto p = std::as_const(pred_only.encoder[l]).w_xi.values();
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], r[k] + p[k], 1e-14);
    }
    // Branch-local parameters receive gradient only from their own branch.
    for (double v : rec_only.pred_proj.values()) EXPECT_EQ(v, 0.0);
    for (double v : pred_only.recon_proj.values()) EXPECT_EQ(v, 0.0);
}

TEST(ModelBackward, StaleOutputIsRejected) {
    const SequenceSpec spec{6, 2, 3};
    Rng rng(8);
    const auto m1 = Seq2SeqModel<double>::random(spec, ModelConfig{3, 1}, rng);
    const auto m2 = Seq2SeqModel<double>::random(spec, ModelConfig{3, 1}, rng);
    const auto sample = random_sample(rng, spec);
    auto [loss, out] = sequence_loss(m1, sample);
    auto grads = m2.zeros_like();
    EXPECT_THROW(model_backward(m2, sample, out, grads), std::invalid_argument);
}

TEST(Seq2SeqInvariants, BranchesFactorize) {
    const SequenceSpec spec{8, 3, 4};
    Rng rng(9);
    auto m = Seq2SeqModel<float>::random(spec, ModelConfig{5, 2}, rng);
    const auto in = uniform_init<float>(rng, 5, 4, 1.0);
    const auto states = encode(m, in);
    const auto rec = decode_reconstruct(m, states);
    const auto pred = predict_future(m, states);
    auto mutated = m;
    for (auto& layer : mutated.predictor) layer.w_hi.fill(0.7f);
    mutated.pred_bias.assign(4, 3.0f);
    EXPECT_EQ(decode_reconstruct(mutated, states), rec);
    auto mutated2 = m;
    for (auto& layer : mutated2.decoder) layer.b_o.assign(5, -2.0f);
    EXPECT_EQ(predict_future(mutated2, states), pred);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mcl/mcl_train.hpp"

using namespace mcl;

namespace {

const SequenceSpec kSpec{6, 2, 4};

// Two families of smooth sequences so that members have something to split.
template <typename T>
std::vector<SequenceSample<T>> toy_samples(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SequenceSample<T>> out;
    for (std::size_t i = 0; i < n; ++i) {
        SequenceSample<T> s;
        s.frames = Matrix<T>(kSpec.length, kSpec.frame_dim);
        const double phase = rng.uniform(0.0, 6.28);
        const double freq = (i % 2 == 0) ? 0.4 : 1.3;
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        for (std::size_t t = 0; t < kSpec.length; ++t)
            for (std::size_t d = 0; d < kSpec.frame_dim; ++d)
                s.frames(t, d) = static_cast<T>(0.8 * sign * std::sin(freq * double(t) + 0.7 * double(d) + phase));
        s.cluster = static_cast<int>(i % 2);
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
std::vector<const SequenceSample<T>*> pointers(const std::vector<SequenceSample<T>>& v) {
    std::vector<const SequenceSample<T>*> p;
    for (const auto& s : v) p.push_back(&s);
    return p;
}

template <typename T>
Seq2SeqModel<T> filled_like(const Seq2SeqModel<T>& m, T value) {
    auto g = m.zeros_like();
    for (auto t : g.tensors()) std::fill(t.begin(), t.end(), value);
    return g;
}

}  // namespace

TEST(Assign, PicksRowMinimum) {
    const auto a = assign(Matrix<double>::from_rows({{3, 1, 2}}));
    EXPECT_EQ(a.winner[0], 1u);
    EXPECT_EQ(a(0, 0), 0);
    EXPECT_EQ(a(0, 1), 1);
    EXPECT_EQ(a(0, 2), 0);
}

TEST(Assign, TiesGoToLowestIndex) {
    EXPECT_EQ(assign(Matrix<double>::from_rows({{2, 2, 5}})).winner[0], 0u);
    EXPECT_EQ(assign(Matrix<double>::from_rows({{4, 1, 1}})).winner[0], 1u);
}

TEST(Assign, RowsAreIndependent) {
    const auto a = assign(Matrix<double>::from_rows({{3, 1, 2}, {0, 5, 5}, {9, 9, 8}}));
    EXPECT_EQ(a.winner, (std::vector<std::size_t>{1, 0, 2}));
    const auto b = assign(Matrix<double>::from_rows({{9, 9, 8}, {3, 1, 2}}));
    EXPECT_EQ(b.winner, (std::vector<std::size_t>{2, 1}));
    EXPECT_EQ(a.counts(), (std::vector<std::size_t>{1, 1, 1}));
}

TEST(Assign, NanNamesSampleAndModel) {
    auto m = Matrix<double>::from_rows({{1, 2}, {3, std::numeric_limits<double>::quiet_NaN()}});
    try {
        assign(m);
        FAIL() << "expected throw";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("model 1"), std::string::npos);
    }
}

class SgdTest : public ::testing::Test {
protected:
    Rng rng{11};
    Seq2SeqModel<double> theta = Seq2SeqModel<double>::random(kSpec, ModelConfig{3, 1}, rng);
};

TEST_F(SgdTest, ZeroGradientZeroVelocityIsNoOp) {
    auto before = theta;
    auto g = theta.zeros_like();
    auto v = theta.zeros_like();
    sgd_momentum_update(theta, g, v, OptimizerConfig{});
    EXPECT_EQ(theta, before);
}

TEST_F(SgdTest, ZeroMomentumIsPlainSgd) {
    auto before = theta;
    auto g = filled_like(theta, 1e-3);
    auto v = theta.zeros_like();
    OptimizerConfig opt;
    opt.momentum = 0.0;
    opt.learning_rate = 0.1;
    sgd_momentum_update(theta, g, v, opt);
    auto p0 = before.tensors();
    auto p1 = theta.tensors();
    for (std::size_t t = 0; t < p0.size(); ++t)
        for (std::size_t k = 0; k < p0[t].size(); ++k) EXPECT_DOUBLE_EQ(p1[t][k], p0[t][k] - 0.1 * 1e-3);
}

TEST_F(SgdTest, ConstantGradientSecondStepIsScaledByOnePlusMomentum) {
    OptimizerConfig opt;
    opt.learning_rate = 0.5;
    opt.momentum = 0.9;
    auto v = theta.zeros_like();
    const auto t0 = theta;
    auto g = filled_like(theta, 1e-4);
    sgd_momentum_update(theta, g, v, opt);
    const auto t1 = theta;
    g = filled_like(theta, 1e-4);
    sgd_momentum_update(theta, g, v, opt);
    const auto a = t0.tensors();
    const auto b = t1.tensors();
    const auto c = theta.tensors();
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t k = 0; k < a[t].size(); ++k) {
            EXPECT_NEAR(b[t][k] - a[t][k], -0.5e-4, 1e-15);
            EXPECT_NEAR(c[t][k] - b[t][k], -1.9 * 0.5e-4, 1e-15);
        }
    }
}

TEST_F(SgdTest, ClipsToGlobalNorm) {
    auto g = filled_like(theta, 1.0);
    auto v = theta.zeros_like();
    OptimizerConfig opt;
    opt.clip_norm = 5.0;
    sgd_momentum_update(theta, g, v, opt);
    EXPECT_NEAR(global_l2_norm(g), 5.0, 1e-12);
    auto small = filled_like(theta, 1e-6);
    const auto copy = small;
    sgd_momentum_update(theta, small, v, opt);
    EXPECT_EQ(small, copy);
}

TEST_F(SgdTest, ShapeMismatchThrows) {
    auto g = Seq2SeqModel<double>::zeros(kSpec, ModelConfig{4, 1});
    auto v = theta.zeros_like();
    EXPECT_THROW(sgd_momentum_update(theta, g, v, OptimizerConfig{}), std::invalid_argument);
}

TEST(McLStep, OnlyWinnersAreUpdatedOnFreshEnsemble) {
    auto data = toy_samples<double>(4, 3);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 3, Rng(5));
    // Make member 2 hopeless so it never wins.
    for (auto t : ens.members[2].model.tensors()) std::fill(t.begin(), t.end(), 0.0);
    ens.members[2].model.recon_bias.assign(kSpec.frame_dim, 50.0);
    ens.members[2].model.pred_bias.assign(kSpec.frame_dim, 50.0);
    const auto before = ens;
    auto ptrs = pointers(data);
    StepWorkspace<double> ws;
    const auto r = mcl_step(ens, std::span<const SequenceSample<double>* const>(ptrs), OptimizerConfig{},
                            StepContext{}, ws);
    EXPECT_EQ(r.counts[2], 0u);
    EXPECT_EQ(ens.members[2], before.members[2]);
    for (std::size_t m = 0; m < 2; ++m) {
        if (r.counts[m] > 0) {
            EXPECT_NE(ens.members[m].model, before.members[m].model);
        } else {
            EXPECT_EQ(ens.members[m].model, before.members[m].model);
        }
    }
}

TEST(McLStep, GradientOfWinnerIgnoresOtherSamples) {
    auto data = toy_samples<double>(3, 9);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 2, Rng(8));
    OptimizerConfig opt;
    opt.momentum = 0.0;
    auto ptrs = pointers(data);
    StepWorkspace<double> ws;
    auto trained = ens;
    const auto r = mcl_step(trained, std::span<const SequenceSample<double>* const>(ptrs), opt, StepContext{}, ws);
    for (std::size_t m = 0; m < 2; ++m) {
        auto expected = ens.members[m];
        auto g = expected.model.zeros_like();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (r.assignment.winner[i] != m) continue;
            ModelOutput<double> out;
            sequence_loss(expected.model, data[i], out);
            model_backward(expected.model, data[i], out, g, opt.gradient_scale<double>(kSpec));
        }
        sgd_momentum_update(expected.model, g, expected.velocity, opt);
        EXPECT_EQ(trained.members[m], expected) << "member " << m;
    }
}

TEST(McLStep, ObjectiveIsSumOfMinimumLosses) {
    auto data = toy_samples<double>(5, 4);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 3, Rng(2));
    const auto losses = ensemble_losses(ens, std::span<const SequenceSample<double>>(data), 1);
    double expected = 0.0;
    for (std::size_t i = 0; i < losses.rows(); ++i) {
        double best = losses(i, 0);
        for (std::size_t m = 1; m < 3; ++m) best = std::min(best, losses(i, m));
        expected += best;
    }
    auto ptrs = pointers(data);
    StepWorkspace<double> ws;
    const auto r = mcl_step(ens, std::span<const SequenceSample<double>* const>(ptrs), OptimizerConfig{},
                            StepContext{}, ws);
    EXPECT_DOUBLE_EQ(r.objective, expected);
}

TEST(McLStep, FullBatchDescentWithoutMomentum) {
    auto data = toy_samples<double>(32, 21);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{4, 2}, 3, Rng(3));
    OptimizerConfig opt;
    opt.momentum = 0.0;
    opt.learning_rate = 1e-4;
    auto ptrs = pointers(data);
    StepWorkspace<double> ws;
    std::vector<double> objective;
    for (std::uint64_t s = 0; s < 11; ++s) {
        objective.push_back(
            mcl_step(ens, std::span<const SequenceSample<double>* const>(ptrs), opt, StepContext{0, s, 1, {}}, ws)
                .objective);
    }
    for (std::size_t s = 1; s < objective.size(); ++s) EXPECT_LT(objective[s], objective[s - 1]) << "step " << s;
}

TEST(McLStep, ThreadCountDoesNotChangeResult) {
    auto data = toy_samples<float>(7, 5);
    auto a = Ensemble<float>::random(kSpec, ModelConfig{4, 2}, 3, Rng(6));
    auto b = a;
    auto ptrs = pointers(data);
    StepWorkspace<float> wa, wb;
    DropoutSpec drop{0.3, true};
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto ra =
            mcl_step(a, std::span<const SequenceSample<float>* const>(ptrs), OptimizerConfig{}, {9, s, 1, drop}, wa);
        const auto rb =
            mcl_step(b, std::span<const SequenceSample<float>* const>(ptrs), OptimizerConfig{}, {9, s, 4, drop}, wb);
        EXPECT_EQ(ra.objective, rb.objective);
    }
    EXPECT_EQ(a, b);
}

TEST(McLStep, FrozenIdleVelocityIsKept) {
    auto data = toy_samples<double>(2, 3);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 2, Rng(5));
    for (auto t : ens.members[1].model.tensors()) std::fill(t.begin(), t.end(), 0.0);
    ens.members[1].model.recon_bias.assign(kSpec.frame_dim, 50.0);
    ens.members[1].velocity = filled_like(ens.members[1].model, 1e-3);
    auto frozen = ens;
    auto ptrs = pointers(data);
    StepWorkspace<double> ws;
    OptimizerConfig opt;
    mcl_step(ens, std::span<const SequenceSample<double>* const>(ptrs), opt, StepContext{}, ws);
    EXPECT_DOUBLE_EQ(ens.members[1].velocity.recon_bias[0], 0.9e-3);
    EXPECT_DOUBLE_EQ(ens.members[1].model.recon_bias[0], 50.0 - 0.9e-3);
    opt.freeze_idle_velocity = true;
    mcl_step(frozen, std::span<const SequenceSample<double>* const>(ptrs), opt, StepContext{}, ws);
    EXPECT_EQ(frozen.members[1].velocity.recon_bias[0], 1e-3);
    EXPECT_EQ(frozen.members[1].model.recon_bias[0], 50.0);
}

TEST(Partition, DisjointCoveringAndBalanced) {
    Rng rng(4);
    const auto parts = random_partition(10, 3, rng);
    std::set<std::size_t> seen;
    for (const auto& p : parts) {
        EXPECT_GE(p.size(), 3u);
        EXPECT_LE(p.size(), 4u);
        for (auto i : p) EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_THROW(random_partition(2, 3, rng), std::invalid_argument);
}

TEST(DiversityPretrain, EachMemberSeesOnlyItsSubset) {
    auto data = toy_samples<double>(9, 1);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 3, Rng(7));
    const auto initial = ens;
    OptimizerConfig opt;
    opt.batch_size = 2;
    Rng rng(12);
    const auto parts = diversity_pretrain(ens, std::span<const SequenceSample<double>>(data), opt, {}, rng);
    ASSERT_EQ(parts.size(), 3u);
    for (std::size_t m = 0; m < 3; ++m) {
        EXPECT_EQ(parts[m].size(), 3u);
        auto member = initial.members[m];
        StepWorkspace<double> ws;
        std::vector<const SequenceSample<double>*> batch;
        std::uint64_t step = 0;
        for (std::size_t lo = 0; lo < parts[m].size(); lo += 2) {
            batch.clear();
            for (std::size_t k = lo; k < std::min(parts[m].size(), lo + 2); ++k) batch.push_back(&data[parts[m][k]]);
            plain_step(member, std::span<const SequenceSample<double>* const>(batch), opt,
                       StepContext{0x5eed0000u, step++, 1, {}}, m, ws);
        }
        EXPECT_EQ(ens.members[m], member);
    }
}

TEST(DiversityPretrain, TooFewSamplesThrows) {
    auto data = toy_samples<double>(2, 1);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 3, Rng(7));
    Rng rng(1);
    EXPECT_THROW(diversity_pretrain(ens, std::span<const SequenceSample<double>>(data), {}, {}, rng),
                 std::invalid_argument);
}

TEST(Train, PatienceZeroRunsExactlyOneEpoch) {
    auto data = toy_samples<double>(8, 2);
    auto val = toy_samples<double>(4, 3);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 2, Rng(1));
    TrainOptions options;
    options.patience = 0;
    options.max_epochs = 10;
    const auto log = train(ens, std::span<const SequenceSample<double>>(data),
                           std::span<const SequenceSample<double>>(val), OptimizerConfig{}, options);
    EXPECT_EQ(log.epochs.size(), 1u);
}

TEST(Train, KeepsBestValidationSnapshot) {
    auto data = toy_samples<double>(16, 2);
    auto val = toy_samples<double>(6, 3);
    auto ens = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 2, Rng(1));
    OptimizerConfig opt;
    opt.learning_rate = 0.3;  // large enough to oscillate
    opt.batch_size = 4;
    TrainOptions options;
    options.patience = 2;
    options.max_epochs = 12;
    const auto log = train(ens, std::span<const SequenceSample<double>>(data),
                           std::span<const SequenceSample<double>>(val), opt, options);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : log.epochs) best = std::min(best, e.validation_loss);
    EXPECT_EQ(oracle_loss(ens, std::span<const SequenceSample<double>>(val), 1), best);
    EXPECT_EQ(log.state.best_validation, best);
    EXPECT_TRUE(log.epochs.size() == options.max_epochs || log.state.since_best == options.patience);
}

TEST(Train, SingleMemberMatchesPlainTrainingBitExactly) {
    auto data = toy_samples<float>(20, 2);
    auto val = toy_samples<float>(5, 3);
    auto ens = Ensemble<float>::random(kSpec, ModelConfig{4, 2}, 1, Rng(1));
    auto single = ens.members.front();
    OptimizerConfig opt;
    opt.batch_size = 6;
    TrainOptions options;
    options.max_epochs = 3;
    options.patience = 5;
    options.seed = 77;
    options.dropout = DropoutSpec{0.2, true};
    const auto a = train(ens, std::span<const SequenceSample<float>>(data), std::span<const SequenceSample<float>>(val),
                         opt, options);
    const auto b = train_single(single, std::span<const SequenceSample<float>>(data),
                                std::span<const SequenceSample<float>>(val), opt, options);
    EXPECT_EQ(ens.members.front(), single);
    EXPECT_EQ(a.to_lines(), b.to_lines());
}

TEST(Train, ResumeContinuesFromState) {
    auto data = toy_samples<double>(8, 2);
    auto val = toy_samples<double>(4, 3);
    auto full = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 2, Rng(1));
    auto part = full;
    TrainOptions options;
    options.max_epochs = 4;
    options.patience = 100;
    OptimizerConfig opt;
    opt.learning_rate = 1e-3;  // small enough that every epoch improves
    const auto whole = train(full, std::span<const SequenceSample<double>>(data),
                             std::span<const SequenceSample<double>>(val), opt, options);
    ASSERT_EQ(whole.epochs.size(), 4u);
    ASSERT_TRUE(std::all_of(whole.epochs.begin(), whole.epochs.end(), [](const auto& e) { return e.improved; }));
    options.max_epochs = 2;
    const auto first = train(part, std::span<const SequenceSample<double>>(data),
                             std::span<const SequenceSample<double>>(val), opt, options);
    options.max_epochs = 4;
    const auto second = train(part, std::span<const SequenceSample<double>>(data),
                              std::span<const SequenceSample<double>>(val), opt, options, &first.state);
    EXPECT_EQ(part, full);
    EXPECT_EQ(first.to_lines() + second.to_lines(), whole.to_lines());
}

TEST(Train, LogLineFormat) {
    EpochRecord r;
    r.epoch = 3;
    r.train_loss = 0.5;
    r.validation_loss = 0.25;
    r.counts = {4, 0, 7};
    EXPECT_EQ(r.to_line(), "epoch=3 train_loss=0.5 val_oracle_loss=0.25 counts=4,0,7");
}

TEST(PlainStep, SummedErrorIsMeanErrorWithScaledRate) {
    auto data = toy_samples<double>(4, 21);
    auto ptrs = pointers(data);
    const auto batch = std::span<const SequenceSample<double>* const>(ptrs);
    const auto start = Ensemble<double>::random(kSpec, ModelConfig{3, 1}, 1, Rng(4)).members[0];
    OptimizerConfig sum;
    sum.momentum = 0.0;
    sum.clip_norm = 0.0;
    sum.learning_rate = 1e-4;
    OptimizerConfig mean = sum;
    mean.sum_squared_error = false;
    mean.learning_rate = 1e-4 * double(kSpec.length * kSpec.frame_dim);
    EXPECT_EQ(sum.gradient_scale<double>(kSpec), 24.0);
    EXPECT_EQ(mean.gradient_scale<double>(kSpec), 1.0);
    auto a = start, b = start;
    StepWorkspace<double> ws;
    plain_step(a, batch, sum, StepContext{}, 0, ws);
    plain_step(b, batch, mean, StepContext{}, 0, ws);
    auto ta = a.model.tensors();
    auto tb = b.model.tensors();
    auto t0 = start.model.tensors();
    double moved = 0.0;
    for (std::size_t t = 0; t < ta.size(); ++t) {
        for (std::size_t k = 0; k < ta[t].size(); ++k) {
            EXPECT_NEAR(ta[t][k], tb[t][k], 1e-12);
            moved = std::max(moved, std::abs(ta[t][k] - t0[t][k]));
        }
    }
    EXPECT_GT(moved, 1e-6);
}

#include <gtest/gtest.h>

#include "mcl/config.hpp"

using namespace mcl;

TEST(RunConfig, DefaultsAreValidAndDescribeFourClusters) {
    const RunConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.generator.patterns.size(), 4u);
    EXPECT_EQ(c.members, 4u);
    EXPECT_EQ(c.hidden, 64u);
    EXPECT_EQ(c.resolved_test_episode(), c.generator.episodes);
    EXPECT_EQ(c.resolved_validation_episode(), c.generator.episodes - 1);
    EXPECT_EQ(c.sequence_spec().frame_dim, 144u);
    EXPECT_EQ(c.sequence_spec().input_length(), 10u);
}

TEST(RunConfig, TextRoundTripIsExact) {
    RunConfig c;
    c.hidden = 17;
    c.optimizer.learning_rate = 0.1 + 0.2;
    c.pretrain = false;
    c.precision = "double";
    c.generator.patterns.pop_back();
    c.generator.patterns[0].baseline_weight = 0.5;
    c.generator.patterns[0].event_weight = 0.5;
    c.generator.patterns[1].noise = 1.0 / 3.0;
    c.classifier.all_layers = true;
    const auto text = c.to_text();
    const auto back = RunConfig::parse(text);
    EXPECT_EQ(back.to_text(), text);
    EXPECT_EQ(back.optimizer.learning_rate, c.optimizer.learning_rate);
    EXPECT_EQ(back.generator.patterns, c.generator.patterns);
    EXPECT_FALSE(back.pretrain);
    EXPECT_TRUE(back.classifier.all_layers);
}

TEST(RunConfig, PartialFileKeepsDefaults) {
    const auto c = RunConfig::parse("# small run\nhidden = 8\nmembers=2\n");
    EXPECT_EQ(c.hidden, 8u);
    EXPECT_EQ(c.members, 2u);
    EXPECT_EQ(c.layers, 2u);
    EXPECT_EQ(c.generator.patterns.size(), 4u);
}

TEST(RunConfig, PatternLinesReplaceDefaults) {
    const auto c = RunConfig::parse(
        "pattern = plane_wave speed=0.5 baseline_weight=1 event_weight=0.5\n"
        "pattern = spiral event_weight=0.5\n");
    ASSERT_EQ(c.generator.patterns.size(), 2u);
    EXPECT_EQ(c.generator.patterns[0].kind, PatternKind::plane_wave);
    EXPECT_EQ(c.generator.patterns[1].kind, PatternKind::spiral);
}

TEST(RunConfig, RejectsBadInput) {
    EXPECT_THROW(RunConfig::parse("hiden = 3\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("hidden = -3\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("hidden = 0\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("horizon = 20\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("precision = half\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("pretrain = maybe\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("episodes = 2\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("dropout = 1\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("pattern = nonsense\n"), ConfigError);
    try {
        RunConfig::parse("members = 2\nbogus = 1\n", "run.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
    }
}

TEST(RunConfig, TrainOptionsCarryRunSettings) {
    RunConfig c;
    c.max_epochs = 9;
    c.patience = 2;
    c.seed = 77;
    c.dropout = 0.25;
    const auto o = c.train_options(3);
    EXPECT_EQ(o.max_epochs, 9u);
    EXPECT_EQ(o.patience, 2u);
    EXPECT_EQ(o.seed, 77u);
    EXPECT_EQ(o.threads, 3u);
    EXPECT_TRUE(o.dropout.active());
}

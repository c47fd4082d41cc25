#include <gtest/gtest.h>

#include <filesystem>

#include "mcl/checkpoint.hpp"

using namespace mcl;

namespace {

template <typename T>
Checkpoint<T> sample_checkpoint(bool with_classifier) {
    Checkpoint<T> ck;
    ck.config.members = 3;
    ck.config.hidden = 5;
    ck.kind = "mcl";
    const SequenceSpec spec{6, 2, 4};
    ck.ensemble = Ensemble<T>::random(spec, ModelConfig{5, 2}, 3, Rng(11));
    Rng rng(12);
    for (auto& m : ck.ensemble.members)
        for (auto s : m.velocity.tensors())
            for (T& v : s) v = static_cast<T>(rng.normal());
    if (with_classifier) {
        auto clf = MlpClassifier::random(7, 6, 5, 3, rng);
        clf.bn1.running_mean[2] = 0.125;
        clf.bn2.running_var[1] = 3.5;
        ck.classifier = clf;
    }
    ck.state = TrainState{4, 0.0123, 1, 999};
    ck.log_tail = "epoch=4 train_loss=1\n";
    return ck;
}

template <typename T>
void expect_same(const Checkpoint<T>& a, const Checkpoint<T>& b) {
    EXPECT_EQ(a.config.to_text(), b.config.to_text());
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_TRUE(a.ensemble.members == b.ensemble.members);
    EXPECT_EQ(a.classifier, b.classifier);
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.log_tail, b.log_tail);
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactFloat) {
    const auto ck = sample_checkpoint<float>(true);
    const auto back = decode_checkpoint<float>(encode_checkpoint(ck));
    expect_same(ck, back);
    Rng rng(2);
    const auto prefix = uniform_init<float>(rng, 4, 4, 1.0);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto& a = ck.ensemble.members[m].model;
        const auto& b = back.ensemble.members[m].model;
        ModelOutput<float> oa, ob;
        model_forward(a, prefix, oa);
        model_forward(b, prefix, ob);
        EXPECT_EQ(oa.prediction, ob.prediction);
        EXPECT_EQ(oa.reconstruction, ob.reconstruction);
    }
}

TEST(Checkpoint, RoundTripIsBitExactDoubleThroughFile) {
    const auto ck = sample_checkpoint<double>(false);
    const auto path = (std::filesystem::temp_directory_path() / "mcl_ckpt_test.bin").string();
    save_checkpoint(path, ck);
    const auto back = load_checkpoint<double>(path);
    expect_same(ck, back);
    EXPECT_FALSE(back.classifier.has_value());
    EXPECT_EQ(inspect_checkpoint(io::read_file(path)).scalar_size, 8u);
    std::filesystem::remove(path);
}

TEST(Checkpoint, WrongScalarTypeIsRejected) {
    const auto bytes = encode_checkpoint(sample_checkpoint<float>(false));
    EXPECT_THROW(decode_checkpoint<double>(bytes), PayloadError);
}

TEST(Checkpoint, CorruptedByteFailsChecksum) {
    auto bytes = encode_checkpoint(sample_checkpoint<float>(true));
    for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 5}) {
        auto bad = bytes;
        bad[pos] ^= 0x10;
        EXPECT_THROW(decode_checkpoint<float>(bad), ChecksumError) << pos;
    }
    auto bad = bytes;
    bad.back() ^= 1;
    EXPECT_THROW(decode_checkpoint<float>(bad), ChecksumError);
}

TEST(Checkpoint, DistinctErrorsForMagicVersionTruncation) {
    const auto bytes = encode_checkpoint(sample_checkpoint<float>(false));
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint<float>(magic), MagicError);
    EXPECT_THROW(decode_checkpoint<float>({}), MagicError);

    auto version = bytes;
    version[8] = 2;
    try {
        decode_checkpoint<float>(version);
        FAIL();
    } catch (const VersionError& e) {
        EXPECT_NE(std::string(e.what()).find("expected 1, found 2"), std::string::npos) << e.what();
    }

    for (std::size_t keep : {std::size_t{10}, std::size_t{19}, std::size_t{40}, bytes.size() - 1}) {
        const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
        EXPECT_THROW(decode_checkpoint<float>(cut), TruncatedFileError) << keep;
    }
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(decode_checkpoint<float>(longer), PayloadError);
}

TEST(Checkpoint, MissingFileIsAnError) {
    EXPECT_THROW(load_checkpoint<float>("/nonexistent/dir/ck.bin"), std::runtime_error);
}

#include <gtest/gtest.h>

#include <filesystem>

#include "mvpt/checkpoint.hpp"
#include "mvpt/swin.hpp"

using namespace mvpt;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny() {
    BackboneConfig c;
    c.image_height = c.image_width = 16;
    c.embed_dim = 8;
    return c;
}

LoadError::Kind kind_of(const std::string& bytes) {
    try {
        decode_checkpoint<float>(bytes);
    } catch (const LoadError& e) {
        return e.kind;
    }
    ADD_FAILURE() << "decode succeeded";
    return LoadError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExactWithMask) {
    const auto st = init_backbone<float>(tiny(), 1);
    const auto mask = build_freeze_mask(st, Phase::pretrain);
    const auto ck = decode_checkpoint<float>(encode_checkpoint(st, &mask));
    EXPECT_EQ(ck.mask, mask);
    for (const auto& [n, t] : st) EXPECT_EQ(ck.state.at(n).vec(), t.vec()) << n;
    EXPECT_EQ(state_hash(ck.state), state_hash(st));
}

TEST(Checkpoint, DoublePayloadLoadsAsFloat) {
    const auto st = init_backbone<double>(tiny(), 2);
    const auto ck = decode_checkpoint<float>(encode_checkpoint(st));
    EXPECT_EQ(ck.state.at("backbone.patch_embed.weight")[3], float(st.at("backbone.patch_embed.weight")[3]));
}

TEST(Checkpoint, CorruptionTruncationAndHeaderErrors) {
    const auto bytes = encode_checkpoint(init_backbone<float>(tiny(), 3));
    auto flipped = bytes;
    flipped[bytes.size() - 100] ^= 0x01;
    EXPECT_EQ(kind_of(flipped), LoadError::Kind::checksum);
    EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 7)), LoadError::Kind::truncated);
    EXPECT_EQ(kind_of(bytes.substr(0, 20)), LoadError::Kind::header);  // cut inside the tensor table
    EXPECT_EQ(kind_of(bytes + "x"), LoadError::Kind::header);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(kind_of(magic), LoadError::Kind::header);
}

TEST(Checkpoint, ConfigMismatchIsReported) {
    const auto dir = fs::temp_directory_path() / "mvpt_test_ckpt";
    fs::create_directories(dir);
    save_checkpoint(dir / "a.ckpt", init_backbone<float>(tiny(), 4));
    auto other = tiny();
    other.embed_dim = 16;
    try {
        load_checkpoint<float>(dir / "a.ckpt", other);
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind, LoadError::Kind::mismatch);
    }
    try {
        load_checkpoint<float>(dir / "missing.ckpt");
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind, LoadError::Kind::io);
    }
}

TEST(StateHash, SensitiveToOneUlpAndPrefix) {
    auto st = init_backbone<float>(tiny(), 5);
    const auto h = state_hash(st);
    auto& v = st.at("backbone.norm.bias")[0];
    v = std::nextafter(v, 1.f);
    EXPECT_NE(state_hash(st), h);
    EXPECT_EQ(state_hash(st, "head."), state_hash(init_backbone<float>(tiny(), 5), "head."));
}

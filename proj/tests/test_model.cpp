#include <fstream>

#include <gtest/gtest.h>

#include "clva/errors.hpp"
#include "clva/model.hpp"
#include "clva/text.hpp"
#include "test_support.hpp"

using namespace clva;
using namespace clva::model;
using clva::testing::random_image;
using clva::testing::TempDir;
using clva::testing::tiny_config;
using clva::testing::toy_vocabulary;

namespace {

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.flatten().to(torch::kFloat64);
    auto y = b.flatten().to(torch::kFloat64);
    return (x.dot(y) / (x.norm() * y.norm())).item<double>();
}

}  // namespace

// ---------------------------------------------------------------- config / init

TEST(ModelConfig, DefaultsMatchDocumentedWidths) {
    ModelConfig c;
    EXPECT_EQ(c.channels, 256);
    EXPECT_EQ(c.style_dim, 256);
    EXPECT_EQ(c.attention_bottleneck, 64);
    EXPECT_EQ(c.encoder_stages, 4);
    EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, BottleneckWiderThanChannelsIsArgumentError) {
    ModelConfig c;
    c.attention_bottleneck = 512;
    EXPECT_THROW(c.validate(), ArgumentError);
    EXPECT_THROW(init_params(c, 0), ArgumentError);
}

TEST(ModelConfig, EncoderStagesFixedAtFour) {
    ModelConfig c;
    c.encoder_stages = 3;
    EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(ModelConfig, JsonRoundTrip) {
    auto c = tiny_config();
    nlohmann::json j = c;
    EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(InitParams, DeterministicPerSeed) {
    auto a = init_params(tiny_config(), 3, toy_vocabulary());
    auto b = init_params(tiny_config(), 3, toy_vocabulary());
    ASSERT_EQ(a.store().size(), b.store().size());
    for (std::size_t i = 0; i < a.store().size(); ++i) {
        EXPECT_EQ(a.store().entries()[i].first, b.store().entries()[i].first);
        EXPECT_TRUE(torch::equal(a.store().entries()[i].second, b.store().entries()[i].second));
    }
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), init_params(tiny_config(), 4, toy_vocabulary()).hash());
}

TEST(InitParams, DefaultDecoderEndsInThreeChannels) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    EXPECT_EQ(p.param("decoder.out.weight").size(0), 3);
}

TEST(InitParams, FourNetworksPartitionTheStore) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    std::size_t total = 0;
    for (const char* net : {"encoder", "decoder", "text", "discriminator"}) {
        auto params = p.network_parameters(net);
        EXPECT_FALSE(params.empty()) << net;
        total += params.size();
    }
    EXPECT_EQ(total, p.store().size());
    EXPECT_EQ(p.generator_parameters().size() + p.discriminator_parameters().size(), p.store().size());
}

TEST(InitParams, AllFinite) {
    auto p = init_params(tiny_config(), 1, toy_vocabulary());
    for (const auto& [name, t] : p.store().entries()) EXPECT_TRUE(torch::isfinite(t).all().item<bool>()) << name;
}

TEST(ModelParams, CloneIsIndependent) {
    auto p = init_params(tiny_config(), 1, toy_vocabulary());
    auto q = p.clone();
    EXPECT_EQ(p.hash(), q.hash());
    {
        torch::NoGradGuard g;
        q.param("encoder.stem.weight").add_(1.0);
    }
    EXPECT_NE(p.hash(), q.hash());
}

// ---------------------------------------------------------------- encoder

TEST(EncodeImage, PaperResolutionContentMap) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto f = encode_image(p, random_image(384, 512, 1));
    EXPECT_EQ(f.content_map.sizes(), (std::vector<int64_t>{1, 256, 24, 32}));
    EXPECT_EQ(f.style_vec.sizes(), (std::vector<int64_t>{1, 256}));
}

TEST(EncodeImage, SixtyFourSquare) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto f = encode_image(p, random_image(64, 64, 1));
    EXPECT_EQ(f.content_map.sizes(), (std::vector<int64_t>{1, 256, 4, 4}));
    EXPECT_EQ(f.style_vec.size(1), 256);
    EXPECT_TRUE(torch::isfinite(f.style_vec).all().item<bool>());
}

TEST(EncodeImage, DistinctImagesGiveDistinctStyleVectors) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto a = encode_image(p, random_image(32, 32, 1)).style_vec;
    auto b = encode_image(p, random_image(32, 32, 2)).style_vec;
    EXPECT_LT(cosine(a, b), 1.0 - 1e-6);
}

TEST(EncodeImage, BatchedMatchesUnbatched) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto x0 = random_image(32, 48, 1);
    auto x1 = random_image(32, 48, 2);
    auto batched = encode_image(p, torch::stack({x0, x1}));
    auto single = encode_image(p, x1);
    EXPECT_TRUE(torch::allclose(batched.content_map[1], single.content_map[0], 1e-5, 1e-5));
    EXPECT_TRUE(torch::allclose(batched.style_vec[1], single.style_vec[0], 1e-5, 1e-5));
}

TEST(EncodeImage, NonDivisibleIsArgumentError) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    EXPECT_THROW(encode_image(p, random_image(30, 32, 1)), ArgumentError);
    EXPECT_THROW(encode_image(p, torch::zeros({1, 32, 32})), ArgumentError);
}

// ---------------------------------------------------------------- text encoder

TEST(EncodeInstruction, ShapeAndFinite) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto v = encode_instruction(p, "red horizontal stripes");
    EXPECT_EQ(v.dim(), 1);
    EXPECT_EQ(v.size(0), 256);
    EXPECT_TRUE(torch::isfinite(v).all().item<bool>());
}

TEST(EncodeInstruction, EmptyIsArgumentError) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    EXPECT_THROW(encode_instruction(p, ""), ArgumentError);
}

TEST(EncodeInstruction, PureAndOovTolerant) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    EXPECT_TRUE(torch::equal(encode_instruction(p, "green checkerboard"), encode_instruction(p, "green checkerboard")));
    auto oov = encode_instruction(p, "zebra paisley");
    EXPECT_TRUE(torch::isfinite(oov).all().item<bool>());
    EXPECT_FALSE(torch::equal(encode_instruction(p, "red solid"), encode_instruction(p, "blue solid")));
}

TEST(EncodeInstruction, BatchMatchesSingles) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto batch = encode_instructions(p, {"red solid", "blue horizontal stripes"});
    EXPECT_TRUE(torch::allclose(batch[1], encode_instruction(p, "blue horizontal stripes"), 1e-6, 1e-6));
}

TEST(EncodeInstruction, ExternalBackendUsesSentenceTable) {
    TempDir dir;
    {
        std::ofstream out(dir / "table.jsonl");
        out << R"({"text":"red solid","vector":[1,0,0,0,0,0]})" << '\n';
        out << R"({"text":"Blue  Solid","vector":[0,1,0,0,0,0]})" << '\n';
    }
    auto table = std::make_shared<PrecomputedSentenceTable>(dir / "table.jsonl");
    auto cfg = tiny_config();
    cfg.text_backend = TextBackend::External;
    cfg.external_dim = 6;
    auto p = init_params(cfg, 0, {}, table);
    torch::NoGradGuard g;
    auto v = encode_instruction(p, "blue solid");
    EXPECT_EQ(v.size(0), cfg.style_dim);
    // Only the dense projection is trainable: the embedding is its column for the one-hot input.
    EXPECT_TRUE(torch::allclose(v, p.param("text.proj.weight").select(1, 1) + p.param("text.proj.bias"), 1e-6, 1e-6));
    EXPECT_THROW(encode_instruction(p, "unknown phrase"), InputError);
}

// ---------------------------------------------------------------- decoder

TEST(Decode, ShapeAndRange) {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto content = torch::randn({cfg.channels, 4, 4});
    auto style = torch::randn({cfg.style_dim});
    auto out = decode(p, content, style);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 64, 64}));
    EXPECT_LT(out.abs().max().item<float>(), 1.0f);
}

TEST(Decode, DefaultWidthsShapeContract) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto out = decode(p, torch::randn({256, 4, 4}), torch::randn({256}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 64, 64}));
    EXPECT_LT(out.abs().max().item<float>(), 1.0f);
}

TEST(Decode, RoundTripShapeForAnyDivisibleSize) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    for (auto [h, w] : std::vector<std::pair<int, int>>{{16, 16}, {32, 48}, {80, 16}, {64, 112}}) {
        auto f = encode_image(p, random_image(h, w, 1));
        auto out = decode(p, f.content_map, f.style_vec);
        EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 3, h, w}));
    }
}

TEST(Decode, InitialOutputNearMidGray) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto f = encode_image(p, random_image(32, 32, 1));
    EXPECT_LT(decode(p, f.content_map, f.style_vec).abs().max().item<float>(), 0.1f);
}

TEST(Decode, Pure) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto f = encode_image(p, random_image(32, 32, 1));
    EXPECT_TRUE(torch::equal(decode(p, f.content_map, f.style_vec), decode(p, f.content_map, f.style_vec)));
}

TEST(Decode, InstructionAndStyleVectorsShareTheSpace) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto f = encode_image(p, random_image(32, 32, 1));
    EXPECT_EQ(encode_instruction(p, "red solid").size(0), f.style_vec.size(1));
    EXPECT_NO_THROW(decode(p, f.content_map, encode_instruction(p, "red solid").unsqueeze(0)));
    EXPECT_NO_THROW(decode(p, f.content_map, f.style_vec));
}

TEST(Decode, ShapeMismatchIsArgumentError) {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 0, toy_vocabulary());
    EXPECT_THROW(decode(p, torch::randn({cfg.channels + 1, 4, 4}), torch::randn({cfg.style_dim})), ArgumentError);
    EXPECT_THROW(decode(p, torch::randn({cfg.channels, 4, 4}), torch::randn({cfg.style_dim + 1})), ArgumentError);
}

// ---------------------------------------------------------------- discriminator

TEST(Discriminate, StrictlyInUnitIntervalAndPure) {
    auto cfg = tiny_config();
    auto p = init_params(cfg, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto patches = torch::rand({5, 3, 8, 6}) * 2 - 1;
    auto instr = encode_instruction(p, "red solid");
    auto d = discriminate(p, patches, instr);
    EXPECT_EQ(d.sizes(), (std::vector<int64_t>{5}));
    EXPECT_GT(d.min().item<float>(), 0.0f);
    EXPECT_LT(d.max().item<float>(), 1.0f);
    EXPECT_TRUE(torch::equal(d, discriminate(p, patches, instr)));
}

TEST(Discriminate, InitialMeanNearHalf) {
    auto p = init_params(ModelConfig{}, 0, toy_vocabulary());
    torch::NoGradGuard g;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(42);
    auto patches = torch::rand({100, 3, 8, 8}, gen) * 2 - 1;
    auto instr = torch::randn({100, 256}, gen);
    const double mean = discriminate(p, patches, instr).mean().item<double>();
    EXPECT_GT(mean, 0.2);
    EXPECT_LT(mean, 0.8);
}

TEST(Discriminate, UndersizedPatchIsArgumentError) {
    auto cfg = tiny_config();  // one halving: minimum patch side 2
    auto p = init_params(cfg, 0, toy_vocabulary());
    EXPECT_EQ(cfg.min_patch_side(), 2);
    auto instr = encode_instruction(p, "red solid");
    EXPECT_THROW(discriminate(p, torch::zeros({1, 3, 1, 4}), instr), ArgumentError);
    EXPECT_NO_THROW(discriminate(p, torch::zeros({1, 3, 2, 2}), instr));
}

TEST(Discriminate, InstructionAffectsScore) {
    auto p = init_params(tiny_config(), 0, toy_vocabulary());
    // Perturb the output layer so the near-zero init does not hide the dependence.
    {
        torch::NoGradGuard g;
        p.param("discriminator.out.weight").normal_(0.0, 1.0);
    }
    torch::NoGradGuard g;
    auto patches = torch::rand({2, 3, 8, 8}) * 2 - 1;
    auto a = discriminate(p, patches, encode_instruction(p, "red solid"));
    auto b = discriminate(p, patches, encode_instruction(p, "blue horizontal stripes"));
    EXPECT_FALSE(torch::equal(a, b));
}

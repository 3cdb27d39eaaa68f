#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "clva/image.hpp"
#include "test_support.hpp"

using clva::testing::random_image;
using clva::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string output;
};

/// Runs the clva binary with the given argument string, capturing stdout and stderr.
Outcome run_cli(const std::string& args) {
    const std::string cmd = std::string("'") + CLVA_CLI_PATH + "' " + args + " 2>&1";
    Outcome o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return o;
    std::array<char, 4096> buf{};
    while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) o.output.append(buf.data(), n);
    const int status = ::pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small toy corpus plus a config that trains the tiny model for `epochs`.
fs::path write_training_setup(const TempDir& dir, int epochs) {
    EXPECT_EQ(run_cli("toy-corpus --out " + quote(dir / "toy") + " --styles 4 --contents 2 --width 32 --height 32")
                  .code,
              0);
    nlohmann::json cfg = {{"run_dir", "run"},
                          {"epochs", epochs},
                          {"lva_steps_per_epoch", 2},
                          {"cr_steps_per_epoch", 1},
                          {"batch_size", 1},
                          {"patches_per_image", 2},
                          {"data", {{"contents", "toy/contents"}, {"styles", "toy/styles.jsonl"}, {"content_size", {32, 32}}}},
                          {"model",
                           {{"channels", 16},
                            {"style_dim", 16},
                            {"attention_bottleneck", 8},
                            {"min_channels", 8},
                            {"token_dim", 8},
                            {"discriminator_stages", 1}}}};
    std::ofstream(dir / "config.json") << cfg.dump(2);
    return dir / "config.json";
}

fs::path trained_checkpoint(const TempDir& dir) {
    auto config = write_training_setup(dir, 1);
    auto r = run_cli("train --config " + quote(config));
    EXPECT_EQ(r.code, 0) << r.output;
    return dir / "run" / "ckpt_epoch_0001.clva";
}

void write_manifest(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::ofstream out(path);
    for (const auto& [id, instruction] : pairs)
        out << nlohmann::json{{"pair_id", id}, {"instruction", instruction}}.dump() << '\n';
}

}  // namespace

TEST(Cli, NoSubcommandFails) { EXPECT_NE(run_cli("").code, 0); }

TEST(Cli, TrainWithZeroEpochsWritesOnlyInitialCheckpoint) {
    TempDir dir;
    auto r = run_cli("train --config " + quote(write_training_setup(dir, 0)));
    ASSERT_EQ(r.code, 0) << r.output;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir / "run"))
        if (e.path().extension() == ".clva") files.push_back(e.path().filename().string());
    EXPECT_EQ(files, std::vector<std::string>{"ckpt_epoch_0000.clva"});
}

TEST(Cli, OverridesShowInEffectiveConfig) {
    TempDir dir;
    auto r = run_cli("train --config " + quote(write_training_setup(dir, 0)) + " --lr_g 0.0003");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto marker = r.output.find("effective config: ");
    ASSERT_NE(marker, std::string::npos) << r.output;
    const auto line = r.output.substr(marker + 18, r.output.find('\n', marker) - marker - 18);
    auto effective = nlohmann::json::parse(line);
    EXPECT_DOUBLE_EQ(effective["lr_g"].get<double>(), 0.0003);
    EXPECT_DOUBLE_EQ(nlohmann::json::parse(slurp(dir / "run" / "config.json"))["lr_g"].get<double>(), 0.0003);
}

TEST(Cli, MissingConfigFailsWithoutRunDirectory) {
    TempDir dir;
    write_training_setup(dir, 0);
    EXPECT_NE(run_cli("train --config " + quote(dir / "absent.json")).code, 0);
    EXPECT_FALSE(fs::exists(dir / "run"));

    // An empty content corpus is detected before anything is written.
    fs::create_directories(dir / "empty");
    auto r = run_cli("train --config " + quote(dir / "config.json") + " data.contents=empty");
    EXPECT_EQ(r.code, 3) << r.output;
    EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
    TempDir dir;
    auto config = write_training_setup(dir, 2);
    ASSERT_EQ(run_cli("train --config " + quote(config) + " run_dir=full").code, 0);
    ASSERT_EQ(run_cli("train --config " + quote(config) + " run_dir=first epochs=1").code, 0);
    auto r = run_cli("train --config " + quote(config) + " run_dir=resumed --resume " +
                     quote(dir / "first" / "ckpt_epoch_0001.clva"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_FALSE(fs::exists(dir / "resumed" / "ckpt_epoch_0001.clva"));
    EXPECT_EQ(slurp(dir / "resumed" / "ckpt_epoch_0002.clva"), slurp(dir / "full" / "ckpt_epoch_0002.clva"));
}

TEST(Cli, InferExitCodesAndOutput) {
    TempDir dir;
    auto ckpt = trained_checkpoint(dir);
    ASSERT_TRUE(fs::exists(ckpt));
    clva::write_png(dir / "content.png", random_image(40, 50, 1));

    const auto base = " --image " + quote(dir / "content.png") + " --out " + quote(dir / "out.png");
    auto ok = run_cli("infer --checkpoint " + quote(ckpt) + base + " --instruction 'red solid'");
    ASSERT_EQ(ok.code, 0) << ok.output;
    auto out = clva::read_image(dir / "out.png");
    EXPECT_EQ(clva::image_size(out), (clva::Size{48, 48}));
    const auto first = slurp(dir / "out.png");
    ASSERT_EQ(run_cli("infer --checkpoint " + quote(ckpt) + base + " --instruction 'red solid'").code, 0);
    EXPECT_EQ(slurp(dir / "out.png"), first);

    auto sized = run_cli("infer --checkpoint " + quote(ckpt) + base +
                         " --instruction 'red solid' --width 64 --height 32");
    ASSERT_EQ(sized.code, 0) << sized.output;
    EXPECT_EQ(clva::image_size(clva::read_image(dir / "out.png")), (clva::Size{64, 32}));

    std::ofstream(dir / "bad.clva") << "not a checkpoint";
    EXPECT_EQ(run_cli("infer --checkpoint " + quote(dir / "bad.clva") + base + " --instruction 'red solid'").code, 2);
    std::ofstream(dir / "broken.png") << "not an image";
    EXPECT_EQ(run_cli("infer --checkpoint " + quote(ckpt) + " --image " + quote(dir / "broken.png") + " --out " +
                      quote(dir / "o.png") + " --instruction 'red solid'")
                  .code,
              3);
    EXPECT_EQ(run_cli("infer --checkpoint " + quote(ckpt) + base + " --instruction ''").code, 1);
}

TEST(Cli, EvalIdenticalDirectories) {
    TempDir dir;
    fs::create_directories(dir / "results");
    for (int i = 0; i < 3; ++i)
        clva::write_png(dir / "results" / ("p" + std::to_string(i) + ".png"), random_image(32, 32, 10 + i));
    write_manifest(dir / "pairs.jsonl", {{"p0", "red solid"}, {"p1", "blue horizontal stripes"}, {"p2", "green checkerboard"}});

    auto r = run_cli("eval --results " + quote(dir / "results") + " --semi-gt " + quote(dir / "results") +
                     " --manifest " + quote(dir / "pairs.jsonl") + " --out " + quote(dir / "report.json") + " --csv " +
                     quote(dir / "report.csv"));
    ASSERT_EQ(r.code, 0) << r.output;
    auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(report["per_pair"].size(), 3u);
    EXPECT_DOUBLE_EQ(report["aggregate"]["mse"].get<double>(), 0.0);
    EXPECT_NEAR(report["aggregate"]["ssim"].get<double>(), 100.0, 1e-6);
    EXPECT_NEAR(report["aggregate"]["fad"].get<double>(), 0.0, 1e-9);
    EXPECT_NEAR(report["aggregate"]["rs"].get<double>(), 100.0, 1e-9);

    const auto csv = slurp(dir / "report.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Cli, EvalWithNoMatchingPairsFails) {
    TempDir dir;
    fs::create_directories(dir / "results");
    fs::create_directories(dir / "semi");
    clva::write_png(dir / "results" / "a.png", random_image(32, 32, 1));
    clva::write_png(dir / "semi" / "b.png", random_image(32, 32, 2));
    write_manifest(dir / "pairs.jsonl", {{"a", "red solid"}, {"b", "red solid"}});
    auto r = run_cli("eval --results " + quote(dir / "results") + " --semi-gt " + quote(dir / "semi") +
                     " --manifest " + quote(dir / "pairs.jsonl") + " --out " + quote(dir / "report.json"));
    EXPECT_NE(r.code, 0) << r.output;
}

TEST(Cli, PrepareWritesSplit) {
    TempDir dir;
    ASSERT_EQ(run_cli("toy-corpus --out " + quote(dir / "toy") + " --styles 8 --contents 4 --width 32 --height 32").code,
              0);
    auto r = run_cli("prepare --styles " + quote(dir / "toy" / "styles.jsonl") + " --contents " +
                     quote(dir / "toy" / "contents") + " --n-test 3 --seed 7 --out " + quote(dir / "split.json") +
                     " --width 32 --height 32");
    ASSERT_EQ(r.code, 0) << r.output;
    auto split = nlohmann::json::parse(slurp(dir / "split.json"));
    EXPECT_EQ(split["test_style_ids"].size(), 3u);
    EXPECT_EQ(split["train_style_ids"].size(), 5u);
}

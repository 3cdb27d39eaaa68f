#include <cstdlib>
#include <fstream>
#include <future>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "clva/checkpoint.hpp"
#include "clva/errors.hpp"
#include "clva/rng.hpp"
#include "clva/service.hpp"
#include "test_support.hpp"

using namespace clva;
using clva::testing::random_image;
using clva::testing::TempDir;
using clva::testing::tiny_config;
using clva::testing::toy_vocabulary;

namespace {

std::filesystem::path write_model(const TempDir& dir, const std::string& name, std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.params = model::init_params(tiny_config(), seed, toy_vocabulary());
    // Lift the near-zero output layer so different seeds give visibly different images.
    {
        torch::NoGradGuard g;
        ckpt.params.param("decoder.out.weight").normal_(0.0, 0.2);
    }
    ckpt.rng_state = Rng(seed).serialize();
    auto path = dir / name;
    save_checkpoint(path, ckpt);
    return path;
}

std::string png_bytes(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    auto bytes = encode_png(random_image(h, w, seed));
    return {bytes.begin(), bytes.end()};
}

/// Service bound to an ephemeral port and listening on a background thread.
class RunningService {
public:
    RunningService() {
        port_ = service_.bind("127.0.0.1", 0);
        thread_ = std::thread([this] { service_.listen(); });
        service_.server().wait_until_ready();
    }
    ~RunningService() {
        service_.stop();
        thread_.join();
    }
    serve::Service& service() { return service_; }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(60, 0);
        return c;
    }

private:
    serve::Service service_;
    int port_ = 0;
    std::thread thread_;
};

httplib::Result post_stylize(httplib::Client& client, const std::string& image, const std::string& instruction,
                             std::optional<std::pair<int, int>> size = std::nullopt) {
    httplib::MultipartFormDataItems items{{"image", image, "content.png", "image/png"},
                                          {"instruction", instruction, "", ""}};
    if (size) {
        items.push_back({"width", std::to_string(size->first), "", ""});
        items.push_back({"height", std::to_string(size->second), "", ""});
    }
    return client.Post("/stylize", items);
}

nlohmann::json health(httplib::Client& client) {
    auto res = client.Get("/health");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    return nlohmann::json::parse(res->body);
}

httplib::Result reload(httplib::Client& client, const std::filesystem::path& path) {
    return client.Post("/reload", nlohmann::json{{"checkpoint_path", path.string()}}.dump(), "application/json");
}

}  // namespace

TEST(Health, LoadingBeforeModel) {
    RunningService s;
    auto c = s.client();
    auto h = health(c);
    EXPECT_EQ(h["status"], "loading");
    EXPECT_TRUE(h["model_id"].is_null());
    EXPECT_GE(h["uptime_s"].get<double>(), 0.0);
}

TEST(Health, ReadyAfterLoad) {
    TempDir dir;
    RunningService s;
    auto path = write_model(dir, "m.clva", 1);
    s.service().load(path);
    auto c = s.client();
    auto h = health(c);
    EXPECT_EQ(h["status"], "ready");
    EXPECT_EQ(h["model_id"], checkpoint_model_id(path));
}

TEST(Health, ErrorAfterFailedLoad) {
    TempDir dir;
    std::ofstream(dir / "bad.clva") << "garbage";
    RunningService s;
    EXPECT_THROW(s.service().load(dir / "bad.clva"), CheckpointError);
    auto c = s.client();
    auto h = health(c);
    EXPECT_EQ(h["status"], "error");
    EXPECT_TRUE(h.contains("message"));
}

TEST(Stylize, NoModelIs503) {
    RunningService s;
    auto c = s.client();
    auto res = post_stylize(c, png_bytes(32, 32, 1), "red solid");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
}

TEST(Stylize, ValidRequestReturnsPngOfRequestedSize) {
    TempDir dir;
    RunningService s;
    auto path = write_model(dir, "m.clva", 1);
    s.service().load(path);
    auto c = s.client();

    auto res = post_stylize(c, png_bytes(40, 50, 2), "red solid", std::make_pair(64, 32));
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(res->get_header_value("X-Model-Id"), checkpoint_model_id(path));
    EXPECT_GE(std::stod(res->get_header_value("X-Latency-Ms")), 0.0);
    auto image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()));
    EXPECT_EQ(image_size(image), (Size{64, 32}));

    // Without an explicit size the content snaps to the nearest 16-multiple.
    auto snapped = post_stylize(c, png_bytes(40, 50, 2), "red solid");
    ASSERT_EQ(snapped->status, 200);
    auto img2 = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(snapped->body.data()), snapped->body.size()));
    EXPECT_EQ(image_size(img2), (Size{48, 48}));
}

TEST(Stylize, BadRequestsAre400) {
    TempDir dir;
    RunningService s;
    s.service().load(write_model(dir, "m.clva", 1));
    auto c = s.client();
    EXPECT_EQ(post_stylize(c, png_bytes(32, 32, 1), "")->status, 400);
    EXPECT_EQ(post_stylize(c, png_bytes(32, 32, 1), "   ")->status, 400);
    EXPECT_EQ(post_stylize(c, "definitely not an image", "red solid")->status, 400);
    EXPECT_EQ(post_stylize(c, png_bytes(32, 32, 1), "red solid", std::make_pair(30, 32))->status, 400);
    httplib::MultipartFormDataItems no_image{{"instruction", "red solid", "", ""}};
    EXPECT_EQ(c.Post("/stylize", no_image)->status, 400);
}

TEST(Stylize, ConcurrentIdenticalRequestsAreByteIdentical) {
    TempDir dir;
    RunningService s;
    s.service().load(write_model(dir, "m.clva", 1));
    const auto image = png_bytes(64, 64, 5);
    auto serial_client = s.client();
    auto serial = post_stylize(serial_client, image, "blue horizontal stripes");
    ASSERT_EQ(serial->status, 200);

    std::vector<std::future<std::pair<int, std::string>>> futures;
    for (int i = 0; i < 8; ++i)
        futures.push_back(std::async(std::launch::async, [&] {
            auto c = s.client();
            auto res = post_stylize(c, image, "blue horizontal stripes");
            return res ? std::make_pair(res->status, res->body) : std::make_pair(-1, std::string());
        }));
    for (auto& f : futures) {
        auto [status, body] = f.get();
        EXPECT_EQ(status, 200);
        EXPECT_TRUE(body == serial->body);
    }
}

TEST(Reload, ValidCheckpointSwapsModelId) {
    TempDir dir;
    RunningService s;
    auto first = write_model(dir, "a.clva", 1);
    auto second = write_model(dir, "b.clva", 2);
    s.service().load(first);
    auto c = s.client();
    const auto image = png_bytes(32, 32, 3);
    auto before = post_stylize(c, image, "red solid");

    auto res = reload(c, second);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(nlohmann::json::parse(res->body)["model_id"], checkpoint_model_id(second));
    auto after = post_stylize(c, image, "red solid");
    EXPECT_EQ(after->get_header_value("X-Model-Id"), checkpoint_model_id(second));
    EXPECT_NE(after->body, before->body);
}

TEST(Reload, CorruptCheckpointIs422AndKeepsOldModel) {
    TempDir dir;
    RunningService s;
    auto good = write_model(dir, "a.clva", 1);
    std::ofstream(dir / "corrupt.clva") << "CLVACKPT but not really";
    s.service().load(good);
    auto c = s.client();
    auto res = reload(c, dir / "corrupt.clva");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(nlohmann::json::parse(res->body)["model_id"], checkpoint_model_id(good));
    EXPECT_EQ(health(c)["status"], "ready");
    EXPECT_EQ(post_stylize(c, png_bytes(32, 32, 3), "red solid")->get_header_value("X-Model-Id"),
              checkpoint_model_id(good));
    EXPECT_EQ(c.Post("/reload", "not json", "application/json")->status, 400);
}

TEST(Reload, IdenticalCheckpointIsIdempotent) {
    TempDir dir;
    RunningService s;
    auto path = write_model(dir, "a.clva", 1);
    s.service().load(path);
    auto c = s.client();
    const auto image = png_bytes(32, 32, 4);
    auto before = post_stylize(c, image, "green checkerboard");
    ASSERT_EQ(reload(c, path)->status, 200);
    auto after = post_stylize(c, image, "green checkerboard");
    EXPECT_EQ(before->body, after->body);
    EXPECT_EQ(before->get_header_value("X-Model-Id"), after->get_header_value("X-Model-Id"));
}

TEST(ServeConfig, EnvironmentOverridesSection) {
    ::unsetenv("CLVA_PORT");
    ::unsetenv("CLVA_HOST");
    auto c = serve::ServeConfig::from_json_and_env({{"host", "0.0.0.0"}, {"port", 9000}, {"checkpoint", nullptr}});
    EXPECT_EQ(c.port, 9000);
    EXPECT_EQ(c.host, "0.0.0.0");
    EXPECT_FALSE(c.checkpoint.has_value());

    ::setenv("CLVA_PORT", "9123", 1);
    ::setenv("CLVA_HOST", "127.0.0.2", 1);
    auto e = serve::ServeConfig::from_json_and_env({{"host", "0.0.0.0"}, {"port", 9000}});
    EXPECT_EQ(e.port, 9123);
    EXPECT_EQ(e.host, "127.0.0.2");
    ::setenv("CLVA_PORT", "eighty", 1);
    EXPECT_THROW(serve::ServeConfig::from_json_and_env(nullptr), ArgumentError);
    ::unsetenv("CLVA_PORT");
    ::unsetenv("CLVA_HOST");
}

#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "clva/inference.hpp"

namespace httplib {
class Server;
}

namespace clva::serve {

struct ServeConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> checkpoint;

    /// Reads the `serve` section of a config document ({host, port, checkpoint}),
    /// then applies CLVA_HOST / CLVA_PORT from the environment.
    static ServeConfig from_json_and_env(const nlohmann::json& serve_section);
};

enum class Status { Loading, Ready, Error };

/// HTTP front end over an immutable model snapshot.
///
///   POST /stylize  multipart: `image` file, `instruction` field, optional
///                  `width` and `height` fields -> image/png, with
///                  X-Model-Id and X-Latency-Ms headers
///   GET  /health   {"status": "loading"|"ready"|"error", "model_id", "uptime_s", ["message"]}
///   POST /reload   {"checkpoint_path": ...} -> {"status", "model_id"}; 422 on failure
///
/// Handlers copy the current snapshot pointer under a mutex and run the
/// forward pass without holding it, so a reload never disturbs in-flight
/// requests and every response pairs its image with exactly one model_id.
class Service {
public:
    Service();
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Loads a checkpoint and swaps it in. On failure the previous snapshot
    /// is kept; the status becomes Error only if no model was loaded yet.
    /// Rethrows the load error.
    void load(const std::filesystem::path& checkpoint);
    void install(std::shared_ptr<const infer::ModelSnapshot> snapshot);

    std::shared_ptr<const infer::ModelSnapshot> snapshot() const;
    Status status() const;
    nlohmann::json health() const;

    /// Binds `host:port` (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves on the bound socket until stop() is called.
    void listen();
    void stop();

    httplib::Server& server() { return *server_; }

private:
    void register_routes();

    std::unique_ptr<httplib::Server> server_;
    mutable std::mutex mutex_;
    std::shared_ptr<const infer::ModelSnapshot> snapshot_;
    Status status_ = Status::Loading;
    std::string error_message_;
    std::chrono::steady_clock::time_point started_;
};

}  // namespace clva::serve

#include "clva/service.hpp"

#include <cstdlib>
#include <span>

#include <httplib.h>

#include "clva/errors.hpp"

namespace clva::serve {
namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

std::optional<int> int_field(const httplib::Request& req, const std::string& key) {
    if (!req.has_file(key)) return std::nullopt;
    const auto text = req.get_file_value(key).content;
    std::size_t used = 0;
    const int value = std::stoi(text, &used);
    if (used != text.size()) throw ArgumentError(key + " must be an integer");
    return value;
}

const char* status_name(Status s) {
    switch (s) {
        case Status::Loading: return "loading";
        case Status::Ready: return "ready";
        case Status::Error: return "error";
    }
    return "error";
}

}  // namespace

ServeConfig ServeConfig::from_json_and_env(const nlohmann::json& serve_section) {
    ServeConfig c;
    if (!serve_section.is_null()) {
        c.host = serve_section.value("host", c.host);
        c.port = serve_section.value("port", c.port);
        if (serve_section.contains("checkpoint") && !serve_section.at("checkpoint").is_null())
            c.checkpoint = serve_section.at("checkpoint").get<std::string>();
    }
    if (const char* host = std::getenv("CLVA_HOST"); host && *host) c.host = host;
    if (const char* port = std::getenv("CLVA_PORT"); port && *port) {
        try {
            c.port = std::stoi(port);
        } catch (const std::exception&) {
            throw ArgumentError(std::string("CLVA_PORT is not a port number: ") + port);
        }
    }
    if (c.port < 0 || c.port > 65535) throw ArgumentError("port out of range");
    return c;
}

Service::Service() : server_(std::make_unique<httplib::Server>()), started_(std::chrono::steady_clock::now()) {
    register_routes();
}

Service::~Service() { stop(); }

void Service::load(const std::filesystem::path& checkpoint) {
    try {
        install(infer::load_snapshot(checkpoint));
    } catch (const std::exception& e) {
        std::lock_guard lock(mutex_);
        if (!snapshot_) {
            status_ = Status::Error;
            error_message_ = e.what();
        }
        throw;
    }
}

void Service::install(std::shared_ptr<const infer::ModelSnapshot> snapshot) {
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snapshot);
    status_ = Status::Ready;
    error_message_.clear();
}

std::shared_ptr<const infer::ModelSnapshot> Service::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
}

Status Service::status() const {
    std::lock_guard lock(mutex_);
    return status_;
}

nlohmann::json Service::health() const {
    std::lock_guard lock(mutex_);
    nlohmann::json j{{"status", status_name(status_)},
                     {"model_id", snapshot_ ? nlohmann::json(snapshot_->model_id) : nlohmann::json(nullptr)},
                     {"uptime_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count()}};
    if (status_ == Status::Error) j["message"] = error_message_;
    return j;
}

int Service::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw ArgumentError("cannot bind " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw ArgumentError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

void Service::register_routes() {
    server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(health().dump(), "application/json");
    });

    server_->Post("/stylize", [this](const httplib::Request& req, httplib::Response& res) {
        const auto t0 = std::chrono::steady_clock::now();
        auto model = snapshot();
        if (!model) return send_error(res, 503, "model not loaded");
        if (!req.has_file("image")) return send_error(res, 400, "missing 'image' file");
        const std::string instruction = req.has_file("instruction") ? req.get_file_value("instruction").content : "";
        if (instruction.find_first_not_of(" \t\r\n") == std::string::npos)
            return send_error(res, 400, "instruction must be non-empty");

        std::optional<Size> output_size;
        try {
            const auto w = int_field(req, "width");
            const auto h = int_field(req, "height");
            if (w.has_value() != h.has_value()) return send_error(res, 400, "give both width and height or neither");
            if (w) output_size = Size{*w, *h};
        } catch (const std::exception& e) {
            return send_error(res, 400, std::string("bad output size: ") + e.what());
        }

        try {
            const auto& bytes = req.get_file_value("image").content;
            auto image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
            auto content = infer::prepare_content(image, output_size);
            auto result = infer::stylize(model->params, content, instruction);
            auto png = encode_png(result);
            const double latency_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            res.set_header("X-Model-Id", model->model_id);
            res.set_header("X-Latency-Ms", std::to_string(latency_ms));
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        } catch (const InputError& e) {
            send_error(res, 400, e.what());
        } catch (const ArgumentError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    server_->Post("/reload", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("checkpoint_path") ||
            !body.at("checkpoint_path").is_string())
            return send_error(res, 400, "expected JSON {\"checkpoint_path\": ...}");
        try {
            load(body.at("checkpoint_path").get<std::string>());
        } catch (const std::exception& e) {
            auto current = snapshot();
            res.status = 422;
            res.set_content(nlohmann::json{{"error", e.what()},
                                           {"model_id", current ? nlohmann::json(current->model_id)
                                                                : nlohmann::json(nullptr)}}
                                .dump(),
                            "application/json");
            return;
        }
        res.set_content(nlohmann::json{{"status", "ready"}, {"model_id", snapshot()->model_id}}.dump(),
                        "application/json");
    });
}

}  // namespace clva::serve

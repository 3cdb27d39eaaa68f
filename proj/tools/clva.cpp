// clva: dataset preparation, training, inference, evaluation and serving.
//
// Exit codes: 0 ok, 1 generic or argument error, 2 checkpoint error,
// 3 input error (unreadable image, manifest or corpus).

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "clva/checkpoint.hpp"
#include "clva/data.hpp"
#include "clva/errors.hpp"
#include "clva/evaluation.hpp"
#include "clva/inference.hpp"
#include "clva/run_config.hpp"
#include "clva/service.hpp"
#include "clva/toy_corpus.hpp"
#include "clva/training.hpp"

namespace fs = std::filesystem;
using namespace clva;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGeneric = 1;
constexpr int kExitCheckpoint = 2;
constexpr int kExitInput = 3;

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ArgumentError("not valid JSON: " + path.string());
    return doc;
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

std::optional<Size> optional_size(int width, int height) {
    if (width == 0 && height == 0) return std::nullopt;
    if (width <= 0 || height <= 0) throw ArgumentError("give both --width and --height");
    return Size{width, height};
}

// ---------------------------------------------------------------- toy-corpus

struct ToyArgs {
    fs::path out;
    int styles = 32;
    int contents = 16;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 1;
};

int run_toy_corpus(const ToyArgs& a) {
    auto corpus = data::generate_toy_corpus(a.styles, a.contents, {a.width, a.height}, a.seed);
    fs::create_directories(a.out / "contents");
    fs::create_directories(a.out / "styles");
    for (const auto& c : corpus.contents) write_png(a.out / "contents" / c.source_id, c.pixels);
    std::vector<std::pair<std::string, std::string>> lines;
    for (const auto& s : corpus.styles) {
        const std::string rel = "styles/" + s.record_id + ".png";
        write_png(a.out / rel, s.image);
        lines.emplace_back(rel, s.instruction);
    }
    data::write_style_manifest(a.out / "styles.jsonl", lines);
    std::cout << "wrote " << corpus.contents.size() << " contents and " << corpus.styles.size() << " styles to "
              << a.out.string() << '\n';
    return kExitOk;
}

// ------------------------------------------------------------------- prepare

struct PrepareArgs {
    fs::path styles;
    fs::path contents;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
    fs::path out;
    int width = 512;
    int height = 384;
};

int run_prepare(const PrepareArgs& a) {
    auto styles = data::load_style_corpus(a.styles);
    auto contents = data::load_content_corpus(a.contents, {a.width, a.height});
    std::vector<std::string> style_ids, content_ids;
    for (const auto& s : styles) style_ids.push_back(s.record_id);
    for (const auto& c : contents) content_ids.push_back(c.source_id);
    auto split = data::make_split(style_ids, content_ids, a.n_test, a.seed);
    write_json_file(a.out, split);
    std::cout << "split: " << split.train_style_ids.size() << " train / " << split.test_style_ids.size()
              << " test styles, " << split.train_content_ids.size() << " train / " << split.test_content_ids.size()
              << " test contents -> " << a.out.string() << '\n';
    return kExitOk;
}

// --------------------------------------------------------------------- train

template <typename T>
std::vector<T> keep_ids(std::vector<T> items, const std::vector<std::string>& ids,
                        std::string T::*id_field) {
    const std::set<std::string> keep(ids.begin(), ids.end());
    std::erase_if(items, [&](const T& item) { return !keep.contains(item.*id_field); });
    return items;
}

// Accepts `key=value`, `--key value` and `--key=value` overrides.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& arg = extras[i];
        if (arg.starts_with("--")) {
            auto body = arg.substr(2);
            if (body.find('=') == std::string::npos) {
                if (i + 1 >= extras.size()) throw ArgumentError("override " + arg + " lacks a value");
                body += "=" + extras[++i];
            }
            out.push_back(body);
        } else {
            out.push_back(arg);
        }
    }
    return out;
}

int run_train(const fs::path& config_path, const std::optional<fs::path>& resume,
              const std::vector<std::string>& extras) {
    // Everything is validated before the run directory is created.
    auto doc = read_json_file(config_path);
    for (const auto& o : collect_overrides(extras)) apply_override(doc, o);
    auto rc = parse_run_config(doc, config_path.parent_path());

    auto contents = data::load_content_corpus(rc.data.contents, rc.data.content_size);
    auto styles = data::load_style_corpus(rc.data.styles, rc.data.style_size);
    if (rc.data.split) {
        const auto split = read_json_file(*rc.data.split).get<data::SplitManifest>();
        contents = keep_ids(std::move(contents), split.train_content_ids, &data::ContentImage::source_id);
        styles = keep_ids(std::move(styles), split.train_style_ids, &data::StyleRecord::record_id);
        if (contents.empty() || styles.empty()) throw CorpusEmptyError("split leaves no training data");
    }

    std::shared_ptr<const SentenceEncoder> sentences;
    if (rc.model.text_backend == model::TextBackend::External) {
        if (!rc.data.sentence_table) throw ArgumentError("external text backend needs data.sentence_table");
        auto table = std::make_shared<PrecomputedSentenceTable>(*rc.data.sentence_table);
        rc.model.external_dim = table->dim();
        sentences = table;
    }
    std::vector<std::string> captions;
    for (const auto& s : styles) captions.push_back(s.instruction);
    // A resumed run keeps the checkpoint's parameters, moments and rng and
    // continues from its epoch; the loaded model config wins over the file's.
    std::optional<Checkpoint> resumed;
    if (resume) resumed = load_checkpoint(*resume, sentences);
    auto params = resumed ? resumed->params
                          : model::init_params(rc.model, rc.train.seed, Vocabulary::build(captions), sentences);

    fs::create_directories(rc.run_dir);
    const auto effective = to_document(rc);
    write_json_file(rc.run_dir / "config.json", effective);
    std::cout << "effective config: " << effective.dump() << '\n';

    if (!resumed && rc.train.warmup && rc.train.warmup_steps > 0) {
        std::vector<double> losses;
        params = train::warmup_pretrain(params, train::load_warmup_targets(*rc.train.warmup), rc.train.warmup_steps,
                                        rc.train, &losses);
        std::cout << "warm-up: " << losses.size() << " steps, loss " << losses.front() << " -> " << losses.back()
                  << '\n';
    }

    train::Trainer trainer = resumed ? train::Trainer::resume(*resumed, rc.train)
                                     : train::Trainer(std::move(params), rc.train);
    train::FitOptions options;
    options.run_dir = rc.run_dir;
    const int total = rc.train.epochs * (rc.train.lva_steps_per_epoch + rc.train.cr_steps_per_epoch);
    options.on_record = [total](const nlohmann::json& r) {
        const auto step = r.at("step").get<std::int64_t>();
        if (step % 50 != 0 && step != total) return;
        std::cout << "step " << step << '/' << total << " epoch " << r.at("epoch") << ' ' << r.at("phase").get<std::string>();
        if (r.contains("g_total")) std::cout << " L_G " << r.at("g_total") << " L_D " << r.at("d_loss");
        if (r.contains("crt_total")) std::cout << " L_crt " << r.at("crt_total");
        std::cout << '\n';
    };
    auto checkpoints = train::fit(trainer, {std::move(contents), std::move(styles)}, options);
    std::cout << "wrote " << checkpoints.size() << " checkpoint(s) to " << rc.run_dir.string() << '\n';
    return kExitOk;
}

// --------------------------------------------------------------------- infer

struct InferArgs {
    fs::path checkpoint;
    fs::path image;
    std::string instruction;
    fs::path out;
    int width = 0;
    int height = 0;
};

int run_infer(const InferArgs& a) {
    if (a.instruction.find_first_not_of(" \t\r\n") == std::string::npos)
        throw ArgumentError("instruction must be non-empty");
    const auto size = optional_size(a.width, a.height);
    auto snapshot = infer::load_snapshot(a.checkpoint);
    auto content = infer::prepare_content(read_image(a.image), size);

    const auto passes_before = infer::forward_pass_count();
    const auto t0 = std::chrono::steady_clock::now();
    auto result = infer::stylize(snapshot->params, content, data::normalize_caption(a.instruction));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_png(a.out, result);

    const auto s = image_size(result);
    std::cout << "wrote " << a.out.string() << " (" << s.width << 'x' << s.height << ") in " << ms
              << " ms, forward passes: " << infer::forward_pass_count() - passes_before << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
    fs::path results;
    fs::path semi_gt;
    fs::path manifest;
    fs::path out;
    std::optional<fs::path> csv;
};

int run_eval(const EvalArgs& a) {
    eval::RandomConvExtractor extractor;
    eval::PaletteHashEmbedder embedder;
    auto report = eval::evaluate(a.results, a.semi_gt, a.manifest, extractor, embedder);
    write_json_file(a.out, report);
    if (a.csv) {
        std::ofstream csv(*a.csv);
        if (!csv) throw InputError("cannot write " + a.csv->string());
        eval::write_csv(csv, report);
    }
    const auto& g = report.aggregate;
    std::printf("pairs %zu skipped %zu | MSE %.5f SSIM %.3f FAD %.5f VLS %.3f RS %s\n", report.per_pair.size(),
                report.skipped.size(), g.mse, g.ssim, g.fad, g.vls,
                g.rs ? std::to_string(*g.rs).c_str() : "undefined");
    return kExitOk;
}

// --------------------------------------------------------------------- serve

serve::Service* g_service = nullptr;

void handle_signal(int) {
    if (g_service) g_service->stop();
}

int run_serve(const std::optional<fs::path>& config_path, const std::optional<fs::path>& checkpoint,
              const std::string& host, int port) {
    nlohmann::json section = nullptr;
    if (config_path) {
        auto doc = read_json_file(*config_path);
        auto rc = parse_run_config(doc, config_path->parent_path());
        section = rc.serve;
        if (section.contains("checkpoint") && section.at("checkpoint").is_string())
            section["checkpoint"] = (config_path->parent_path() / section.at("checkpoint").get<std::string>()).string();
    }
    auto cfg = serve::ServeConfig::from_json_and_env(section);
    if (checkpoint) cfg.checkpoint = *checkpoint;
    if (!host.empty()) cfg.host = host;
    if (port >= 0) cfg.port = port;

    serve::Service service;
    const int bound = service.bind(cfg.host, cfg.port);
    g_service = &service;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::thread listener([&] { service.listen(); });
    std::cout << "listening on " << cfg.host << ':' << bound << std::endl;
    if (cfg.checkpoint) {
        try {
            service.load(*cfg.checkpoint);
            std::cout << "model " << service.snapshot()->model_id << " ready" << std::endl;
        } catch (const std::exception& e) {
            std::cerr << "model load failed: " << e.what() << std::endl;
        }
    }
    listener.join();
    g_service = nullptr;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLVA: language-driven image style transfer"};
    app.require_subcommand(1);

    ToyArgs toy;
    auto* toy_cmd = app.add_subcommand("toy-corpus", "Generate the procedural texture-caption corpus");
    toy_cmd->add_option("--out", toy.out, "Output directory")->required();
    toy_cmd->add_option("--styles", toy.styles, "Number of styles");
    toy_cmd->add_option("--contents", toy.contents, "Number of content images");
    toy_cmd->add_option("--width", toy.width, "Image width (multiple of 16)");
    toy_cmd->add_option("--height", toy.height, "Image height (multiple of 16)");
    toy_cmd->add_option("--seed", toy.seed, "Generator seed");

    PrepareArgs prep;
    auto* prep_cmd = app.add_subcommand("prepare", "Build a train/test split manifest");
    prep_cmd->add_option("--styles", prep.styles, "Style manifest (JSON lines)")->required();
    prep_cmd->add_option("--contents", prep.contents, "Content image directory")->required();
    prep_cmd->add_option("--n-test", prep.n_test, "Held-out pairs")->required();
    prep_cmd->add_option("--seed", prep.seed, "Split seed");
    prep_cmd->add_option("--out", prep.out, "Split manifest to write")->required();
    prep_cmd->add_option("--width", prep.width, "Content width");
    prep_cmd->add_option("--height", prep.height, "Content height");

    fs::path train_config;
    auto* train_cmd = app.add_subcommand("train", "Run LVA + CR training (overrides: key=value or --key value)");
    train_cmd->add_option("--config", train_config, "Run config JSON")->required();
    std::optional<fs::path> train_resume;
    train_cmd->add_option("--resume", train_resume, "Continue from a checkpoint");
    train_cmd->allow_extras();

    InferArgs inf;
    auto* infer_cmd = app.add_subcommand("infer", "Stylize one image in a single forward pass");
    infer_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint archive")->required();
    infer_cmd->add_option("--image", inf.image, "Content image")->required();
    infer_cmd->add_option("--instruction", inf.instruction, "Style instruction")->required();
    infer_cmd->add_option("--out", inf.out, "Output PNG")->required();
    infer_cmd->add_option("--width", inf.width, "Output width (multiple of 16)");
    infer_cmd->add_option("--height", inf.height, "Output height (multiple of 16)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score results against semi-ground-truth");
    eval_cmd->add_option("--results", ev.results, "Result image directory")->required();
    eval_cmd->add_option("--semi-gt", ev.semi_gt, "Semi-ground-truth directory")->required();
    eval_cmd->add_option("--manifest", ev.manifest, "Instructions manifest (JSON lines)")->required();
    eval_cmd->add_option("--out", ev.out, "Report JSON")->required();
    eval_cmd->add_option("--csv", ev.csv, "Also write per-pair rows as CSV");

    std::optional<fs::path> serve_config, serve_checkpoint;
    std::string serve_host;
    int serve_port = -1;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP stylization service");
    serve_cmd->add_option("--config", serve_config, "Run config JSON (uses its serve section)");
    serve_cmd->add_option("--checkpoint", serve_checkpoint, "Checkpoint to load at startup");
    serve_cmd->add_option("--host", serve_host, "Bind address (default CLVA_HOST or 127.0.0.1)");
    serve_cmd->add_option("--port", serve_port, "Port (default CLVA_PORT or 8080)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitGeneric;
    }

    try {
        if (*toy_cmd) return run_toy_corpus(toy);
        if (*prep_cmd) return run_prepare(prep);
        if (*train_cmd) return run_train(train_config, train_resume, train_cmd->remaining());
        if (*infer_cmd) return run_infer(inf);
        if (*eval_cmd) return run_eval(ev);
        if (*serve_cmd) return run_serve(serve_config, serve_checkpoint, serve_host, serve_port);
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const CorpusEmptyError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitGeneric;
    }
    return kExitGeneric;
}

#include "clva/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "clva/errors.hpp"
#include "clva/text.hpp"
#include "clva/toy_corpus.hpp"

namespace clva::eval {
namespace fs = std::filesystem;

namespace {

torch::Tensor unit_double(const ImageArray& image) {
    return to_unit_range(image.detach().to(torch::kFloat64));
}

void require_same_shape(const ImageArray& a, const ImageArray& b, const char* what) {
    if (a.sizes() != b.sizes())
        throw ArgumentError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
}

torch::Tensor gaussian_window() {
    auto x = torch::arange(kSsimWindow, torch::kFloat64) - (kSsimWindow - 1) / 2.0;
    auto g = torch::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
    g = g / g.sum();
    return torch::outer(g, g);
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

torch::Tensor normalized(const torch::Tensor& v) {
    const double n = v.norm().item<double>();
    return n > 0.0 ? v / n : v;
}

double cosine_unit(const torch::Tensor& a, const torch::Tensor& b) {
    return torch::dot(normalized(a), normalized(b)).item<double>();
}

std::optional<fs::path> find_image(const fs::path& dir, const std::string& pair_id) {
    for (const char* ext : {".png", ".jpg", ".jpeg", ".bmp"}) {
        auto p = dir / (pair_id + ext);
        if (fs::is_regular_file(p)) return p;
    }
    return std::nullopt;
}

}  // namespace

double mse(const ImageArray& a, const ImageArray& b) {
    require_same_shape(a, b, "mse");
    auto d = unit_double(a) - unit_double(b);
    return (d * d).mean().item<double>();
}

double ssim(const ImageArray& a, const ImageArray& b) {
    require_same_shape(a, b, "ssim");
    if (a.dim() != 3) throw ArgumentError("ssim: expected [3,H,W] images");
    if (a.size(1) < kSsimWindow || a.size(2) < kSsimWindow)
        throw ArgumentError("ssim: images must be at least 11x11");
    const auto channels = a.size(0);
    auto x = unit_double(a).unsqueeze(0);
    auto y = unit_double(b).unsqueeze(0);
    auto w = gaussian_window().view({1, 1, kSsimWindow, kSsimWindow}).repeat({channels, 1, 1, 1});
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w, torch::Tensor(), torch::IntArrayRef{1}, torch::IntArrayRef{0}, torch::IntArrayRef{1}, channels); };

    const double c1 = std::pow(kSsimK1, 2), c2 = std::pow(kSsimK2, 2);
    auto mu_x = filt(x), mu_y = filt(y);
    auto sxx = filt(x * x) - mu_x * mu_x;
    auto syy = filt(y * y) - mu_y * mu_y;
    auto sxy = filt(x * y) - mu_x * mu_y;
    auto ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2));
    return ssim_map.mean().item<double>();
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int width) : seed_(seed) {
    if (width < 1) throw ArgumentError("RandomConvExtractor: width must be >= 1");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    w1_ = torch::randn({width, 3, 3, 3}, gen, opts) * std::sqrt(2.0 / 27.0);
    w2_ = torch::randn({width, width, 3, 3}, gen, opts) * std::sqrt(2.0 / (9.0 * width));
}

torch::Tensor RandomConvExtractor::extract(const ImageArray& image) const {
    if (image.dim() != 3 || image.size(0) != 3) throw ArgumentError("extract: expected a [3,H,W] image");
    torch::NoGradGuard no_grad;
    auto x = unit_double(image).unsqueeze(0);
    x = torch::relu(torch::conv2d(x, w1_, torch::Tensor(), 2, 1));
    x = torch::relu(torch::conv2d(x, w2_, torch::Tensor(), 2, 1));
    auto flat = x.flatten(2);
    return torch::cat({flat.mean(2), flat.std(2, /*unbiased=*/false)}, 1).squeeze(0);
}

std::string RandomConvExtractor::id() const { return "random-conv:seed=" + std::to_string(seed_); }

PaletteHashEmbedder::PaletteHashEmbedder(int dim, double temperature) : dim_(dim), temperature_(temperature) {
    if (dim < 2) throw ArgumentError("PaletteHashEmbedder: dim must be >= 2");
    if (!(temperature > 0.0)) throw ArgumentError("PaletteHashEmbedder: temperature must be > 0");
}

torch::Tensor PaletteHashEmbedder::token_direction(std::string_view token) const {
    std::mt19937_64 engine(fnv1a(token));
    std::normal_distribution<double> normal;
    std::vector<double> v(static_cast<std::size_t>(dim_));
    for (auto& x : v) x = normal(engine);
    return normalized(torch::tensor(v, torch::kFloat64));
}

torch::Tensor PaletteHashEmbedder::embed_text(std::string_view text) const {
    auto sum = torch::zeros({dim_}, torch::kFloat64);
    for (const auto& token : tokenize(text)) sum += token_direction(token);
    if (sum.norm().item<double>() == 0.0) sum = token_direction("");
    return normalized(sum);
}

torch::Tensor PaletteHashEmbedder::embed_image(const ImageArray& image) const {
    if (image.dim() != 3 || image.size(0) != 3) throw ArgumentError("embed_image: expected a [3,H,W] image");
    auto mean = unit_double(image).mean({1, 2});
    const auto colors = data::palette();
    std::vector<double> logits;
    for (const auto& c : colors) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double diff = mean[k].item<double>() - c.rgb[static_cast<std::size_t>(k)];
            d2 += diff * diff;
        }
        logits.push_back(-d2 / temperature_);
    }
    auto w = torch::softmax(torch::tensor(logits, torch::kFloat64), 0);
    auto sum = torch::zeros({dim_}, torch::kFloat64);
    for (std::size_t i = 0; i < colors.size(); ++i)
        sum += w[static_cast<std::int64_t>(i)] * token_direction(colors[i].name);
    return normalized(sum);
}

std::string PaletteHashEmbedder::id() const {
    std::ostringstream s;
    s << "palette-hash:dim=" << dim_ << ",t=" << temperature_;
    return s.str();
}

double activation_distance(const ImageArray& a, const ImageArray& b, const ActivationExtractor& extractor) {
    require_same_shape(a, b, "fad");
    return (extractor.extract(a) - extractor.extract(b)).norm().item<double>();
}

double fad(const std::vector<ImageArray>& set_a, const std::vector<ImageArray>& set_b,
           const ActivationExtractor& extractor) {
    if (set_a.size() != set_b.size()) throw ArgumentError("fad: sets must have equal length");
    if (set_a.empty()) throw ArgumentError("fad: empty sets");
    double total = 0.0;
    for (std::size_t i = 0; i < set_a.size(); ++i) total += activation_distance(set_a[i], set_b[i], extractor);
    return total / static_cast<double>(set_a.size());
}

double vls(const ImageArray& result, std::string_view instruction, const JointEmbedder& embedder) {
    return 100.0 * cosine_unit(embedder.embed_image(result), embedder.embed_text(instruction));
}

std::optional<double> rs(const ImageArray& result, const ImageArray& semi_gt, std::string_view instruction,
                         const JointEmbedder& embedder) {
    auto text = embedder.embed_text(instruction);
    const double num = cosine_unit(embedder.embed_image(result), text);
    const double den = cosine_unit(embedder.embed_image(semi_gt), text);
    if (std::abs(den) < kRsDenominatorFloor) return std::nullopt;
    return 100.0 * num / den;
}

PairMetrics evaluate_pair(std::string pair_id, const ImageArray& result, const ImageArray& semi_gt,
                          std::string_view instruction, const ActivationExtractor& extractor,
                          const JointEmbedder& embedder) {
    PairMetrics m;
    m.pair_id = std::move(pair_id);
    m.mse = mse(result, semi_gt);
    m.ssim = 100.0 * ssim(result, semi_gt);
    m.fad_contrib = activation_distance(result, semi_gt, extractor);
    m.vls = vls(result, instruction, embedder);
    m.rs = rs(result, semi_gt, instruction, embedder);
    return m;
}

MetricReport::Aggregate aggregate(const std::vector<PairMetrics>& rows) {
    MetricReport::Aggregate a;
    if (rows.empty()) return a;
    double rs_sum = 0.0;
    for (const auto& r : rows) {
        a.mse += r.mse;
        a.ssim += r.ssim;
        a.fad += r.fad_contrib;
        a.vls += r.vls;
        if (r.rs) {
            rs_sum += *r.rs;
            ++a.rs_pairs;
        }
    }
    const auto n = static_cast<double>(rows.size());
    a.mse /= n;
    a.ssim /= n;
    a.fad /= n;
    a.vls /= n;
    if (a.rs_pairs > 0) a.rs = rs_sum / static_cast<double>(a.rs_pairs);
    return a;
}

MetricReport evaluate(const fs::path& results_dir, const fs::path& semi_gt_dir, const fs::path& instructions_manifest,
                      const ActivationExtractor& extractor, const JointEmbedder& embedder) {
    std::ifstream in(instructions_manifest);
    if (!in) throw InputError("cannot open instructions manifest " + instructions_manifest.string());
    MetricReport report;
    report.extractor_id = extractor.id();
    report.embedder_id = embedder.id();

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.contains("pair_id") || !obj.contains("instruction"))
            throw InputError("malformed manifest line " + std::to_string(line_no) + " in " +
                             instructions_manifest.string());
        const auto pair_id = obj["pair_id"].get<std::string>();
        const auto instruction = obj["instruction"].get<std::string>();
        auto result_path = find_image(results_dir, pair_id);
        auto semi_path = find_image(semi_gt_dir, pair_id);
        if (!result_path || !semi_path) {
            report.skipped.push_back({pair_id, !result_path ? "missing result image" : "missing semi-gt image"});
            continue;
        }
        try {
            auto result = read_image(*result_path);
            auto semi = read_image(*semi_path);
            if (semi.sizes() != result.sizes()) semi = resize_image(semi, image_size(result));
            report.per_pair.push_back(evaluate_pair(pair_id, result, semi, instruction, extractor, embedder));
        } catch (const std::exception& e) {
            report.skipped.push_back({pair_id, e.what()});
        }
    }
    if (report.per_pair.empty()) throw InputError("no evaluable pairs: result and semi-gt ids do not intersect");
    report.aggregate = aggregate(report.per_pair);
    return report;
}

void to_json(nlohmann::json& j, const MetricReport& report) {
    auto rows = nlohmann::json::array();
    for (const auto& r : report.per_pair)
        rows.push_back({{"pair_id", r.pair_id},
                        {"mse", r.mse},
                        {"ssim", r.ssim},
                        {"fad_contrib", r.fad_contrib},
                        {"vls", r.vls},
                        {"rs", r.rs ? nlohmann::json(*r.rs) : nlohmann::json(nullptr)}});
    auto skipped = nlohmann::json::array();
    for (const auto& s : report.skipped) skipped.push_back({{"pair_id", s.pair_id}, {"reason", s.reason}});
    const auto& a = report.aggregate;
    j = nlohmann::json{{"per_pair", rows},
                       {"aggregate",
                        {{"mse", a.mse},
                         {"ssim", a.ssim},
                         {"fad", a.fad},
                         {"vls", a.vls},
                         {"rs", a.rs ? nlohmann::json(*a.rs) : nlohmann::json(nullptr)},
                         {"rs_pairs", a.rs_pairs}}},
                       {"backend_ids", {{"extractor", report.extractor_id}, {"embedder", report.embedder_id}}},
                       {"skipped", skipped}};
}

void write_csv(std::ostream& out, const MetricReport& report) {
    out << "pair_id,mse,ssim,fad_contrib,vls,rs\n" << std::setprecision(10);
    for (const auto& r : report.per_pair) {
        out << r.pair_id << ',' << r.mse << ',' << r.ssim << ',' << r.fad_contrib << ',' << r.vls << ',';
        if (r.rs) out << *r.rs;
        out << '\n';
    }
}

}  // namespace clva::eval

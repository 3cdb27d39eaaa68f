#include "clva/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "clva/errors.hpp"

namespace clva::data {
namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    static const std::set<std::string> known{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"};
    return known.contains(ext);
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::vector<std::string> index_ids(std::size_t n) {
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
    return ids;
}

template <typename T, typename KeyFn>
std::size_t count_distinct(const std::vector<T>& items, KeyFn key) {
    std::set<std::string> seen;
    for (const auto& item : items) seen.insert(key(item));
    return seen.size();
}

}  // namespace

void to_json(nlohmann::json& j, const SplitManifest& m) {
    j = nlohmann::json{{"train_style_ids", m.train_style_ids},
                       {"test_style_ids", m.test_style_ids},
                       {"train_content_ids", m.train_content_ids},
                       {"test_content_ids", m.test_content_ids},
                       {"seed", m.seed}};
}

void from_json(const nlohmann::json& j, SplitManifest& m) {
    j.at("train_style_ids").get_to(m.train_style_ids);
    j.at("test_style_ids").get_to(m.test_style_ids);
    j.at("train_content_ids").get_to(m.train_content_ids);
    j.at("test_content_ids").get_to(m.test_content_ids);
    j.at("seed").get_to(m.seed);
}

std::vector<ContentImage> load_content_corpus(const fs::path& directory, Size target) {
    if (!divisible_by_16(target))
        throw ArgumentError("content target size must be divisible by 16");
    if (!fs::is_directory(directory))
        throw CorpusEmptyError("content corpus directory not found: " + directory.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory))
        if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    std::vector<ContentImage> corpus;
    corpus.reserve(files.size());
    for (const auto& file : files) {
        try {
            corpus.push_back({resize_image(read_image(file), target), file.filename().string()});
        } catch (const InputError& e) {
            warn(std::string("skipping content image: ") + e.what());
        }
    }
    if (corpus.empty()) throw CorpusEmptyError("no usable content images in " + directory.string());
    return corpus;
}

std::string normalize_caption(std::string_view caption) {
    std::string out;
    out.reserve(caption.size());
    bool pending_space = false;
    for (unsigned char c : caption) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<StyleRecord> load_style_corpus(const fs::path& manifest_file, std::optional<Size> target) {
    if (target && !divisible_by_16(*target)) throw ArgumentError("style target size must be divisible by 16");
    std::ifstream in(manifest_file);
    if (!in) throw InputError("cannot open style manifest " + manifest_file.string());
    const fs::path base = manifest_file.parent_path();
    const std::string stem = manifest_file.stem().string();

    std::vector<StyleRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        const std::string where = manifest_file.string() + ":" + std::to_string(line_no);

        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            warn(where + ": not a JSON object, skipped");
            continue;
        }
        if (!obj.contains("image") || !obj["image"].is_string()) {
            warn(where + ": missing image path, skipped");
            continue;
        }
        std::string caption = normalize_caption(obj.value("caption", std::string{}));
        if (caption.empty()) {
            warn(where + ": empty caption, rejected");
            continue;
        }
        const fs::path image_path = base / obj["image"].get<std::string>();
        if (!fs::exists(image_path)) {
            warn(where + ": image " + image_path.string() + " missing, skipped");
            continue;
        }
        try {
            ImageArray image = read_image(image_path);
            image = resize_image(image, target ? *target : snap_to_16(image_size(image)));
            records.push_back({std::move(image), std::move(caption), stem + ":" + std::to_string(line_no)});
        } catch (const InputError& e) {
            warn(where + ": " + e.what());
        }
    }
    if (records.empty()) throw CorpusEmptyError("no usable style records in " + manifest_file.string());
    return records;
}

SplitManifest make_split(std::size_t style_count, std::size_t content_count, std::size_t n_test,
                         std::uint64_t seed) {
    return make_split(index_ids(style_count), index_ids(content_count), n_test, seed);
}

SplitManifest make_split(const std::vector<std::string>& style_ids, const std::vector<std::string>& content_ids,
                         std::size_t n_test, std::uint64_t seed) {
    if (n_test == 0 || n_test >= std::min(style_ids.size(), content_ids.size()))
        throw ArgumentError("make_split: n_test must satisfy 0 < n_test < min(style_count, content_count)");

    Rng rng(seed);
    auto split = [&](const std::vector<std::string>& ids, std::vector<std::string>& train,
                     std::vector<std::string>& test) {
        std::vector<std::size_t> order(ids.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng.engine());
        std::vector<bool> is_test(ids.size(), false);
        for (std::size_t i = 0; i < n_test; ++i) {
            is_test[order[i]] = true;
            test.push_back(ids[order[i]]);
        }
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (!is_test[i]) train.push_back(ids[i]);
    };

    SplitManifest m;
    m.seed = seed;
    split(style_ids, m.train_style_ids, m.test_style_ids);
    split(content_ids, m.train_content_ids, m.test_content_ids);
    return m;
}

std::vector<PatchWindow> sample_patch_windows(Size image, double fraction, int k, Rng& rng) {
    if (k < 1) throw ArgumentError("crop: k must be >= 1");
    if (!(fraction > 0.0) || fraction > 1.0) throw ArgumentError("crop: fraction must be in (0,1]");
    const int ph = static_cast<int>(std::lround(fraction * image.height));
    const int pw = static_cast<int>(std::lround(fraction * image.width));
    if (ph < 1 || pw < 1) throw ArgumentError("crop: patch would be smaller than 1 px");

    std::vector<PatchWindow> windows;
    windows.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int top = static_cast<int>(rng.uniform_int(0, image.height - ph));
        const int left = static_cast<int>(rng.uniform_int(0, image.width - pw));
        windows.push_back({top, left, ph, pw});
    }
    return windows;
}

std::vector<ImageArray> crop_patches(const ImageArray& image, double fraction, int k, std::uint64_t seed) {
    require_model_image(image, "crop_patches");
    Rng rng(seed);
    auto windows = sample_patch_windows(image_size(image), fraction, k, rng);
    std::vector<ImageArray> patches;
    patches.reserve(windows.size());
    for (const auto& w : windows)
        patches.push_back(image.narrow(1, w.top, w.height).narrow(2, w.left, w.width));
    return patches;
}

torch::Tensor crop_windows(const torch::Tensor& image, const std::vector<PatchWindow>& windows) {
    torch::Tensor chw = image.dim() == 4 ? image.squeeze(0) : image;
    if (chw.dim() != 3) throw ArgumentError("crop_windows: expected [3,H,W] or [1,3,H,W]");
    if (windows.empty()) throw ArgumentError("crop_windows: no windows");
    std::vector<torch::Tensor> parts;
    parts.reserve(windows.size());
    for (const auto& w : windows) {
        if (w.top < 0 || w.left < 0 || w.top + w.height > chw.size(1) || w.left + w.width > chw.size(2))
            throw ArgumentError("crop_windows: window out of bounds");
        parts.push_back(chw.narrow(1, w.top, w.height).narrow(2, w.left, w.width));
    }
    return torch::stack(parts);
}

LvaBatch sample_lva_batch(const std::vector<ContentImage>& contents, const std::vector<StyleRecord>& styles,
                          std::size_t batch_size, Rng& rng) {
    if (contents.empty() || styles.empty()) throw CorpusEmptyError("sample_lva_batch: empty corpus");
    if (batch_size == 0) throw ArgumentError("sample_lva_batch: batch_size must be >= 1");
    LvaBatch batch;
    batch.contents.reserve(batch_size);
    batch.styles.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        batch.contents.push_back(contents[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(contents.size()) - 1))]);
        batch.styles.push_back(
            styles[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(styles.size()) - 1))]);
    }
    return batch;
}

ContrastiveBatch sample_contrastive_batch(const std::vector<ContentImage>& contents,
                                          const std::vector<StyleRecord>& styles, Rng& rng) {
    if (count_distinct(contents, [](const ContentImage& c) { return c.source_id; }) < 2 ||
        count_distinct(styles, [](const StyleRecord& s) { return s.record_id; }) < 2)
        throw CorpusEmptyError("sample_contrastive_batch: need >= 2 distinct contents and styles");

    auto pick = [&rng](std::size_t n) {
        return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    };
    const std::size_t c1 = pick(contents.size());
    std::size_t c2 = pick(contents.size());
    while (contents[c2].source_id == contents[c1].source_id) c2 = pick(contents.size());
    const std::size_t s1 = pick(styles.size());
    std::size_t s2 = pick(styles.size());
    while (styles[s2].record_id == styles[s1].record_id) s2 = pick(styles.size());

    return {{contents[c1], styles[s1]}, {contents[c2], styles[s2]}};
}

void write_style_manifest(const fs::path& manifest_file,
                          const std::vector<std::pair<std::string, std::string>>& image_and_caption) {
    std::ofstream out(manifest_file);
    if (!out) throw InputError("cannot write " + manifest_file.string());
    for (const auto& [image, caption] : image_and_caption)
        out << nlohmann::json{{"image", image}, {"caption", caption}}.dump() << '\n';
}

}  // namespace clva::data

#include "d3sr/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/rng.hpp"

namespace fs = std::filesystem;

namespace d3sr {

nlohmann::json Manifest::to_json() const {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& e : entries)
        files.push_back({{"name", e.name},
                         {"width", e.width},
                         {"height", e.height},
                         {"bytes", e.bytes},
                         {"crc", e.crc}});
    return {{"root", root}, {"files", files}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    m.root = j.at("root").get<std::string>();
    for (const auto& f : j.at("files")) {
        ManifestEntry e;
        e.name = f.at("name").get<std::string>();
        e.width = f.at("width").get<int>();
        e.height = f.at("height").get<int>();
        e.bytes = f.at("bytes").get<uint64_t>();
        e.crc = f.at("crc").get<uint32_t>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

uint32_t Manifest::digest() const {
    // root path excluded: the same files in a different location hash equal
    nlohmann::json j = to_json();
    j.erase("root");
    const std::string s = j.dump();
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

Manifest build_manifest(const std::string& root_dir) {
    if (!fs::is_directory(root_dir)) throw data_error("not a directory: " + root_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") names.push_back(entry.path().filename().string());
    }
    if (names.empty()) throw data_error("no images found in " + root_dir);
    std::sort(names.begin(), names.end());

    Manifest m;
    m.root = root_dir;
    for (const auto& name : names) {
        const std::string path = root_dir + "/" + name;
        ManifestEntry e;
        e.name = name;
        try {
            png_dimensions(path, &e.width, &e.height);
        } catch (const std::exception& ex) {
            throw data_error("undecodable image " + path + ": " + ex.what());
        }
        std::ifstream f(path, std::ios::binary);
        if (!f) throw data_error("unreadable image: " + path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
        e.bytes = bytes.size();
        e.crc = static_cast<uint32_t>(crc32(
            0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
        m.entries.push_back(std::move(e));
    }
    return m;
}

void DatasetSpec::validate() const {
    if (root.empty()) throw config_error("data.root", "must not be empty");
    if (split != "train" && split != "val") throw config_error("data.split", "must be train or val");
    if (patch < 16 || patch % 16 != 0)
        throw config_error("data.patch",
                           "must be a positive multiple of 16 (degradation and codec factors)");
    if (pairing != "on_the_fly" && pairing != "pre_generated")
        throw config_error("data.pairing", "must be on_the_fly or pre_generated");
}

nlohmann::json DatasetSpec::to_json() const {
    return {{"root", root}, {"split", split}, {"patch", patch}, {"pairing", pairing},
            {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.root = j.value("root", s.root);
    s.split = j.value("split", s.split);
    s.patch = j.value("patch", s.patch);
    s.pairing = j.value("pairing", s.pairing);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

LoadedDataset load_dataset(const DatasetSpec& spec) {
    spec.validate();
    LoadedDataset ds;
    ds.manifest = build_manifest(spec.split_dir());
    ds.images.reserve(ds.manifest.entries.size());
    for (const auto& e : ds.manifest.entries) {
        Tensor<float> img = read_png(spec.split_dir() + "/" + e.name);
        if (img.dim(1) < spec.patch || img.dim(2) < spec.patch)
            throw data_error("image " + e.name + " smaller than patch size " +
                             std::to_string(spec.patch));
        ds.images.push_back(std::move(img));
    }
    return ds;
}

std::pair<Tensor<float>, Tensor<float>> sample_training_pair(const LoadedDataset& ds,
                                                             const DatasetSpec& spec,
                                                             const DegradationConfig& deg,
                                                             uint64_t iteration, uint64_t item) {
    if (ds.images.empty()) throw data_error("sample_training_pair: empty dataset");
    const uint64_t idx = iteration * 0x100000000ULL + item;
    Rng rng(derive_seed(spec.seed, streams::kData, idx));

    const int img_idx = rng.uniform_int(static_cast<int>(ds.images.size()));
    const Tensor<float>& src = ds.images[static_cast<size_t>(img_idx)];
    const int H = src.dim(1), W = src.dim(2), P = spec.patch;
    const int oy = rng.uniform_int(H - P + 1);
    const int ox = rng.uniform_int(W - P + 1);

    Tensor<float> x_h({3, P, P});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x) x_h.at3(c, y, x) = src.at3(c, oy + y, ox + x);

    const DegradationRecipe recipe = make_recipe(rng.next_u64(), deg);
    Tensor<float> x_l = apply_degradation(x_h, recipe);
    return {std::move(x_l), std::move(x_h)};
}

void generate_toy_corpus_splits(const std::string& root, int train_count, int val_count, int size,
                                uint64_t seed) {
    generate_toy_corpus(root + "/train", train_count, size, derive_seed(seed, 100));
    generate_toy_corpus(root + "/val", val_count, size, derive_seed(seed, 200));
}

}  // namespace d3sr

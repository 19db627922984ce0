#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "d3sr/degradation.hpp"
#include "d3sr/tensor.hpp"

namespace d3sr {

struct ManifestEntry {
    std::string name;  // file name relative to the manifest root
    int width = 0;
    int height = 0;
    uint64_t bytes = 0;
    uint32_t crc = 0;
};

// Deterministic, lexicographically sorted listing of a directory of PNGs.
struct Manifest {
    std::string root;
    std::vector<ManifestEntry> entries;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);

    // crc32 of the canonical serialization; stable across rebuilds of an
    // unchanged directory.
    uint32_t digest() const;
};

Manifest build_manifest(const std::string& root_dir);

struct DatasetSpec {
    std::string root;
    std::string split = "train";  // subdirectory of root
    int patch = 64;
    std::string pairing = "on_the_fly";  // or "pre_generated"
    uint64_t seed = 0;

    void validate() const;
    std::string split_dir() const { return root + "/" + split; }
    nlohmann::json to_json() const;
    static DatasetSpec from_json(const nlohmann::json& j);
};

// Manifest plus decoded images, kept in memory for pair sampling.
struct LoadedDataset {
    Manifest manifest;
    std::vector<Tensor<float>> images;
};

LoadedDataset load_dataset(const DatasetSpec& spec);

// Pure function of (dataset, spec.seed, iteration, item): image choice, crop
// origin, and degradation recipe all derive from one child seed, so emitted
// pairs are independent of worker count and call order. Returns (x_L, x_H).
std::pair<Tensor<float>, Tensor<float>> sample_training_pair(const LoadedDataset& ds,
                                                             const DatasetSpec& spec,
                                                             const DegradationConfig& deg,
                                                             uint64_t iteration, uint64_t item);

// Toy corpus generation (procedural textures: checkerboards, ramps, Gabor
// noise, glyph text). Writes numbered PNGs; no external data required.
Tensor<float> make_toy_image(uint64_t seed, int size);
void generate_toy_corpus(const std::string& out_dir, int count, int size, uint64_t seed);

// Convenience: root/train and root/val populated from one seed.
void generate_toy_corpus_splits(const std::string& root, int train_count, int val_count, int size,
                                uint64_t seed);

}  // namespace d3sr

#include "doctest.h"

#include <fstream>

#include "d3sr/container.hpp"
#include "d3sr/dataio.hpp"
#include "d3sr/errors.hpp"
#include "d3sr/image_io.hpp"
#include "d3sr/rng.hpp"
#include "test_util.hpp"

using namespace d3sr;

TEST_CASE("manifest of an empty directory is an error") {
    const std::string dir = testutil::fresh_dir("empty");
    CHECK_THROWS_WITH_AS(build_manifest(dir), doctest::Contains("no images found"), data_error);
}

TEST_CASE("manifest lists PNGs in lexicographic order with stable digest") {
    const std::string dir = testutil::fresh_dir("manifest");
    Rng rng(3);
    for (int i = 9; i >= 0; --i) {
        Tensor<float> img({3, 24, 24});
        for (auto& v : img.data) v = static_cast<float>(rng.uniform());
        write_png(dir + "/img_" + std::to_string(i) + ".png", img);
    }
    const Manifest m = build_manifest(dir);
    CHECK(m.entries.size() == 10);
    for (size_t i = 1; i < m.entries.size(); ++i) CHECK(m.entries[i - 1].name < m.entries[i].name);
    for (const auto& e : m.entries) {
        CHECK(e.width == 24);
        CHECK(e.height == 24);
        CHECK(e.bytes > 0);
    }
    CHECK(build_manifest(dir).digest() == m.digest());

    // manifest JSON round trip
    const Manifest back = Manifest::from_json(m.to_json());
    CHECK(back.digest() == m.digest());
}

TEST_CASE("undecodable files are reported with their path") {
    const std::string dir = testutil::fresh_dir("garbage");
    std::ofstream(dir + "/broken.png") << "this is not a png";
    CHECK_THROWS_WITH_AS(build_manifest(dir), doctest::Contains("broken.png"), data_error);
}

TEST_CASE("toy corpus generation is deterministic") {
    const std::string a = testutil::fresh_dir("corpus_a");
    const std::string b = testutil::fresh_dir("corpus_b");
    generate_toy_corpus(a, 6, 64, 42);
    generate_toy_corpus(b, 6, 64, 42);
    const Manifest ma = build_manifest(a), mb = build_manifest(b);
    CHECK(ma.digest() == mb.digest());
}

TEST_CASE("training pairs: shapes, determinism, crop coverage") {
    const std::string root = testutil::fresh_dir("pairs");
    std::filesystem::create_directories(root + "/train");
    // a single 71x71 image gives an 8x8 grid of valid 64-crop origins
    Rng rng(4);
    Tensor<float> img({3, 71, 71});
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    write_png(root + "/train/only.png", img);

    DatasetSpec spec{.root = root, .split = "train", .patch = 64, .seed = 11};
    const LoadedDataset ds = load_dataset(spec);
    DegradationConfig deg;

    SUBCASE("shape contract and determinism") {
        auto [l1, h1] = sample_training_pair(ds, spec, deg, 5, 2);
        auto [l2, h2] = sample_training_pair(ds, spec, deg, 5, 2);
        CHECK(h1.shape == std::vector<int>{3, 64, 64});
        CHECK(l1.shape == std::vector<int>{3, 16, 16});
        CHECK(max_abs_diff(l1, l2) == 0.0f);
        CHECK(max_abs_diff(h1, h2) == 0.0f);
        auto [l3, h3] = sample_training_pair(ds, spec, deg, 6, 2);
        CHECK(max_abs_diff(h1, h3) > 0.0f);
    }

    SUBCASE("crop-origin histogram is uniform (chi-square at 0.001, df=63)") {
        DegradationConfig cheap;  // degradation content irrelevant here
        cheap.blur_enabled = cheap.resize_enabled = cheap.noise_enabled = cheap.jpeg_enabled =
            false;
        const Tensor<float>& loaded = ds.images[0];  // PNG-quantized pixels
        std::vector<int64_t> counts(64, 0);
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            auto [l, h] = sample_training_pair(ds, spec, cheap, static_cast<uint64_t>(i), 0);
            // recover the crop origin by matching pixel rows of the source
            int oy = -1, ox = -1;
            for (int y = 0; y < 8 && oy < 0; ++y)
                for (int x = 0; x < 8; ++x) {
                    bool match = true;
                    for (int k = 0; k < 8 && match; ++k)
                        if (h.at3(0, 0, k) != loaded.at3(0, y, x + k)) match = false;
                    for (int k = 0; k < 8 && match; ++k)
                        if (h.at3(1, 1, k) != loaded.at3(1, y + 1, x + k)) match = false;
                    if (match) {
                        oy = y;
                        ox = x;
                        break;
                    }
                }
            REQUIRE(oy >= 0);
            counts[static_cast<size_t>(oy * 8 + ox)]++;
        }
        CHECK(testutil::chi_square_uniform(counts, draws) < testutil::kChi2Crit999Df63);
    }

    SUBCASE("images smaller than the patch are rejected at load") {
        const std::string small_root = testutil::fresh_dir("small");
        std::filesystem::create_directories(small_root + "/train");
        Tensor<float> tiny({3, 32, 32}, 0.5f);
        write_png(small_root + "/train/tiny.png", tiny);
        DatasetSpec s2{.root = small_root, .split = "train", .patch = 64, .seed = 0};
        CHECK_THROWS_AS(load_dataset(s2), data_error);
    }
}

TEST_CASE("dataset spec validation names offending fields") {
    DatasetSpec s{.root = "", .split = "train", .patch = 64, .seed = 0};
    CHECK_THROWS_AS(s.validate(), config_error);
    s.root = "/tmp";
    s.patch = 60;
    try {
        s.validate();
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(e.field() == "data.patch");
    }
}

TEST_CASE("container round trip is byte-identical") {
    Container c;
    c.meta["kind"] = "demo";
    c.meta["note"] = "round trip";
    Rng rng(6);
    c.put_f32("a", rng.normal_tensor<float>({3, 5}));
    c.put_f64("b", rng.normal_tensor<double>({2, 2, 2}));
    c.put_i64("c", {1, -2, 3});
    c.put_string("s", "hello");

    const std::string dir = testutil::fresh_dir("container");
    save_container(c, dir + "/x.d3ck");
    const Container c2 = load_container(dir + "/x.d3ck");
    save_container(c2, dir + "/y.d3ck");

    std::ifstream fa(dir + "/x.d3ck", std::ios::binary);
    std::ifstream fb(dir + "/y.d3ck", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);

    const auto a = c2.get_f32("a");
    CHECK(a.shape == std::vector<int>{3, 5});
    CHECK(c2.get_string("s") == "hello");
    CHECK(c2.get_i64("c") == std::vector<int64_t>{1, -2, 3});
}

TEST_CASE("truncated and tampered containers fail the checksum") {
    Container c;
    c.put_string("x", "payload");
    std::vector<uint8_t> bytes = serialize_container(c);

    std::vector<uint8_t> truncated(bytes.begin(), bytes.end() - 9);
    CHECK_THROWS_WITH_AS(parse_container(truncated), doctest::Contains("checksum"), io_error);

    std::vector<uint8_t> flipped = bytes;
    flipped[20] ^= 0x40;
    CHECK_THROWS_AS(parse_container(flipped), io_error);
}

TEST_CASE("unsupported container versions are rejected") {
    Container c;
    c.put_string("x", "v");
    std::vector<uint8_t> bytes = serialize_container(c);
    bytes[8] = 99;  // version field follows the 8-byte magic
    // fix up the trailing crc so only the version check can fire
    // (recompute crc over the modified body)
    {
        // recompute the trailing crc over the modified body so only the
        // version check can fire; CRC-32 (reflected, poly 0xEDB88320)
        const size_t body = bytes.size() - 4;
        uint32_t crc = 0xFFFFFFFFu;
        for (size_t i = 0; i < body; ++i) {
            crc ^= bytes[i];
            for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (~(crc & 1u) + 1u));
        }
        crc ^= 0xFFFFFFFFu;
        for (size_t i = 0; i < 4; ++i) bytes[body + i] = static_cast<uint8_t>(crc >> (8 * i));
    }
    CHECK_THROWS_WITH_AS(parse_container(bytes), doctest::Contains("version"), io_error);
}

TEST_CASE("missing entries and dtype mismatches are reported") {
    Container c;
    c.put_string("s", "text");
    CHECK_THROWS_AS(c.get_f32("nope"), io_error);
    CHECK_THROWS_AS(c.get_f32("s"), io_error);
}

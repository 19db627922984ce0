#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "d3sr/tensor.hpp"

namespace d3sr {

// Binary checkpoint container:
//
//   magic "D3SRCKPT" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   u32 entry_count
//   entries: u16 name_len | name | u8 dtype | u8 ndim | u32 dims[] |
//            u64 payload_len | payload
//   u32 crc32 over everything before it (zlib polynomial)
//
// All integers little-endian. Saves write a temp file and rename it into
// place; loads verify the checksum before anything is returned.
struct ContainerEntry {
    enum class DType : uint8_t { f32 = 0, f64 = 1, i64 = 2, bytes = 3 };
    DType dtype = DType::bytes;
    std::vector<int> shape;
    std::vector<uint8_t> payload;
};

struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, ContainerEntry> entries;  // ordered by name

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    void put_f32(const std::string& name, const Tensor<float>& t);
    void put_f64(const std::string& name, const Tensor<double>& t);
    void put_i64(const std::string& name, const std::vector<int64_t>& v);
    void put_bytes(const std::string& name, const std::vector<uint8_t>& v);
    void put_string(const std::string& name, const std::string& s);

    Tensor<float> get_f32(const std::string& name) const;
    Tensor<double> get_f64(const std::string& name) const;
    std::vector<int64_t> get_i64(const std::string& name) const;
    std::vector<uint8_t> get_bytes(const std::string& name) const;
    std::string get_string(const std::string& name) const;

private:
    const ContainerEntry& require(const std::string& name, ContainerEntry::DType want) const;
};

constexpr uint32_t kContainerVersion = 1;

std::vector<uint8_t> serialize_container(const Container& c);
Container parse_container(const std::vector<uint8_t>& bytes);

void save_container(const Container& c, const std::string& path);
Container load_container(const std::string& path);

}  // namespace d3sr

#include "d3sr/container.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "d3sr/errors.hpp"

namespace d3sr {

namespace {

constexpr char kMagic[8] = {'D', '3', 'S', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
void append_le(std::vector<uint8_t>& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

    template <typename T>
    T read_le() {
        if (pos_ + sizeof(T) > n_) throw io_error("container: truncated header field");
        uint64_t v = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    const uint8_t* read_span(size_t n) {
        if (pos_ + n > n_) throw io_error("container: truncated payload");
        const uint8_t* r = p_ + pos_;
        pos_ += n;
        return r;
    }

    size_t pos() const { return pos_; }

private:
    const uint8_t* p_;
    size_t n_;
    size_t pos_ = 0;
};

size_t dtype_size(ContainerEntry::DType d) {
    switch (d) {
        case ContainerEntry::DType::f32: return 4;
        case ContainerEntry::DType::f64: return 8;
        case ContainerEntry::DType::i64: return 8;
        case ContainerEntry::DType::bytes: return 1;
    }
    return 1;
}

}  // namespace

void Container::put_f32(const std::string& name, const Tensor<float>& t) {
    ContainerEntry e;
    e.dtype = ContainerEntry::DType::f32;
    e.shape = t.shape;
    e.payload.resize(t.data.size() * 4);
    std::memcpy(e.payload.data(), t.data.data(), e.payload.size());
    entries[name] = std::move(e);
}

void Container::put_f64(const std::string& name, const Tensor<double>& t) {
    ContainerEntry e;
    e.dtype = ContainerEntry::DType::f64;
    e.shape = t.shape;
    e.payload.resize(t.data.size() * 8);
    std::memcpy(e.payload.data(), t.data.data(), e.payload.size());
    entries[name] = std::move(e);
}

void Container::put_i64(const std::string& name, const std::vector<int64_t>& v) {
    ContainerEntry e;
    e.dtype = ContainerEntry::DType::i64;
    e.shape = {static_cast<int>(v.size())};
    e.payload.resize(v.size() * 8);
    std::memcpy(e.payload.data(), v.data(), e.payload.size());
    entries[name] = std::move(e);
}

void Container::put_bytes(const std::string& name, const std::vector<uint8_t>& v) {
    ContainerEntry e;
    e.dtype = ContainerEntry::DType::bytes;
    e.shape = {static_cast<int>(v.size())};
    e.payload = v;
    entries[name] = std::move(e);
}

void Container::put_string(const std::string& name, const std::string& s) {
    put_bytes(name, std::vector<uint8_t>(s.begin(), s.end()));
}

const ContainerEntry& Container::require(const std::string& name,
                                         ContainerEntry::DType want) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw io_error("container: missing entry '" + name + "'");
    if (it->second.dtype != want) throw io_error("container: dtype mismatch for '" + name + "'");
    return it->second;
}

Tensor<float> Container::get_f32(const std::string& name) const {
    const auto& e = require(name, ContainerEntry::DType::f32);
    Tensor<float> t(e.shape);
    std::memcpy(t.data.data(), e.payload.data(), e.payload.size());
    return t;
}

Tensor<double> Container::get_f64(const std::string& name) const {
    const auto& e = require(name, ContainerEntry::DType::f64);
    Tensor<double> t(e.shape);
    std::memcpy(t.data.data(), e.payload.data(), e.payload.size());
    return t;
}

std::vector<int64_t> Container::get_i64(const std::string& name) const {
    const auto& e = require(name, ContainerEntry::DType::i64);
    std::vector<int64_t> v(e.payload.size() / 8);
    std::memcpy(v.data(), e.payload.data(), e.payload.size());
    return v;
}

std::vector<uint8_t> Container::get_bytes(const std::string& name) const {
    return require(name, ContainerEntry::DType::bytes).payload;
}

std::string Container::get_string(const std::string& name) const {
    const auto b = get_bytes(name);
    return std::string(b.begin(), b.end());
}

std::vector<uint8_t> serialize_container(const Container& c) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    append_le<uint32_t>(out, kContainerVersion);
    const std::string meta = c.meta.dump();
    append_le<uint64_t>(out, meta.size());
    out.insert(out.end(), meta.begin(), meta.end());
    append_le<uint32_t>(out, static_cast<uint32_t>(c.entries.size()));
    for (const auto& [name, e] : c.entries) {
        if (name.size() > 0xffff) throw io_error("container: entry name too long");
        append_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<uint8_t>(e.dtype));
        out.push_back(static_cast<uint8_t>(e.shape.size()));
        for (int d : e.shape) append_le<uint32_t>(out, static_cast<uint32_t>(d));
        append_le<uint64_t>(out, e.payload.size());
        out.insert(out.end(), e.payload.begin(), e.payload.end());
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    append_le<uint32_t>(out, crc);
    return out;
}

Container parse_container(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 + 4 + 8 + 4 + 4) throw io_error("container: file too small");
    const size_t body = bytes.size() - 4;
    uint32_t stored = 0;
    for (size_t i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[body + i]) << (8 * i);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
    if (crc != stored) throw io_error("container: checksum mismatch (corrupt or truncated file)");

    Reader r(bytes.data(), body);
    const uint8_t* magic = r.read_span(8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw io_error("container: bad magic");
    const uint32_t version = r.read_le<uint32_t>();
    if (version != kContainerVersion)
        throw io_error("container: unsupported version " + std::to_string(version));

    Container c;
    const uint64_t meta_len = r.read_le<uint64_t>();
    const uint8_t* meta = r.read_span(meta_len);
    try {
        c.meta = nlohmann::json::parse(std::string(meta, meta + meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("container: bad metadata JSON: ") + e.what());
    }
    const uint32_t count = r.read_le<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t nlen = r.read_le<uint16_t>();
        const uint8_t* nstr = r.read_span(nlen);
        std::string name(nstr, nstr + nlen);
        ContainerEntry e;
        const uint8_t dt = r.read_le<uint8_t>();
        if (dt > 3) throw io_error("container: bad dtype for '" + name + "'");
        e.dtype = static_cast<ContainerEntry::DType>(dt);
        const uint8_t ndim = r.read_le<uint8_t>();
        e.shape.resize(ndim);
        int64_t numel = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            e.shape[d] = static_cast<int>(r.read_le<uint32_t>());
            numel *= e.shape[d];
        }
        const uint64_t plen = r.read_le<uint64_t>();
        if (plen != static_cast<uint64_t>(numel) * dtype_size(e.dtype))
            throw io_error("container: payload size mismatch for '" + name + "'");
        const uint8_t* payload = r.read_span(plen);
        e.payload.assign(payload, payload + plen);
        c.entries[name] = std::move(e);
    }
    if (r.pos() != body) throw io_error("container: trailing bytes");
    return c;
}

void save_container(const Container& c, const std::string& path) {
    const std::vector<uint8_t> bytes = serialize_container(c);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw io_error("cannot open for write: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw io_error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
}

Container load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return parse_container(bytes);
}

}  // namespace d3sr

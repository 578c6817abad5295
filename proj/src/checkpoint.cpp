#include "motionplan/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace motionplan {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '0', '1'};

// CRC-64/XZ (reflected, poly 0x42F0E1EBA9EA3693)
const std::array<uint64_t, 256>& crc_table() {
    static const std::array<uint64_t, 256> table = [] {
        std::array<uint64_t, 256> t{};
        constexpr uint64_t poly = 0xC96C5795D7870F42ull;  // reflected
        for (uint64_t i = 0; i < 256; ++i) {
            uint64_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? (c >> 1) ^ poly : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error(
                std::string("checkpoint parse error at byte offset ") +
                std::to_string(pos) + ": truncated " + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

uint64_t crc64(const uint8_t* data, size_t len, uint64_t seed) {
    uint64_t c = ~seed;
    const auto& t = crc_table();
    for (size_t i = 0; i < len; ++i)
        c = t[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return ~c;
}

void save_arrays(const std::string& path, const ArrayMap& arrays) {
    std::vector<uint8_t> payload;
    for (const auto& [name, arr] : arrays) {
        if (numel(arr.shape) != static_cast<int64_t>(arr.data.size()))
            throw std::runtime_error("array " + name + " shape/data mismatch");
        append_u32(payload, static_cast<uint32_t>(name.size()));
        payload.insert(payload.end(), name.begin(), name.end());
        append_u32(payload, static_cast<uint32_t>(arr.shape.size()));
        for (int d : arr.shape) append_u32(payload, static_cast<uint32_t>(d));
        size_t off = payload.size();
        payload.resize(off + arr.data.size() * 4);
        std::memcpy(payload.data() + off, arr.data.data(), arr.data.size() * 4);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    std::vector<uint8_t> crc_bytes;
    append_u64(crc_bytes, crc64(payload.data(), payload.size()));
    out.write(reinterpret_cast<const char*>(crc_bytes.data()), 8);
    if (!out) throw std::runtime_error("write failed: " + path);
}

ArrayMap load_arrays(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw std::runtime_error(
            "checkpoint parse error at byte offset 0: bad magic in " + path);
    size_t payload_end = buf.size() - 8;
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<uint64_t>(buf[payload_end + i]) << (8 * i);
    uint64_t actual = crc64(buf.data() + 8, payload_end - 8);
    if (stored != actual)
        throw std::runtime_error("checkpoint parse error at byte offset " +
                                 std::to_string(payload_end) +
                                 ": CRC-64 mismatch in " + path);
    Reader r{buf, 8};
    ArrayMap out;
    while (r.pos < payload_end) {
        uint32_t name_len = r.u32("name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(buf.data() + r.pos),
                         name_len);
        r.pos += name_len;
        uint32_t rank = r.u32("rank");
        if (rank > 8)
            throw std::runtime_error("checkpoint parse error at byte offset " +
                                     std::to_string(r.pos - 4) +
                                     ": implausible rank " + std::to_string(rank));
        NamedArray arr;
        int64_t count = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = r.u32("dimension");
            arr.shape.push_back(static_cast<int>(d));
            count *= d;
        }
        r.need(static_cast<size_t>(count) * 4, "array data");
        arr.data.resize(static_cast<size_t>(count));
        std::memcpy(arr.data.data(), buf.data() + r.pos,
                    static_cast<size_t>(count) * 4);
        r.pos += static_cast<size_t>(count) * 4;
        out.emplace(std::move(name), std::move(arr));
    }
    return out;
}

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const ArrayMap& extra) {
    ArrayMap arrays;
    for (const auto& [name, e] : store.entries)
        arrays[name] = NamedArray{e.tensor.shape(), e.tensor.value()};
    for (const auto& [name, arr] : extra) arrays["extra." + name] = arr;
    save_arrays(path, arrays);
}

void load_checkpoint(const std::string& path, ParameterStore& store,
                     ArrayMap* extra_out) {
    ArrayMap arrays = load_arrays(path);
    for (auto& [name, arr] : arrays) {
        if (name.rfind("extra.", 0) == 0) {
            if (extra_out) (*extra_out)[name.substr(6)] = std::move(arr);
            continue;
        }
        if (store.has(name)) {
            Tensor& t = store.get(name);
            if (t.shape() != arr.shape)
                throw std::runtime_error("checkpoint shape mismatch for " + name);
            t.value() = std::move(arr.data);
        } else {
            Tensor& t = store.create(name, arr.shape);
            t.value() = std::move(arr.data);
        }
    }
}

}  // namespace motionplan

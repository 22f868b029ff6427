#include "ci2p/checkpoint.hpp"

#include <array>
#include <fstream>

namespace ci2p {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& buf, const std::string& path)
        : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }

    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw CheckpointCrcError(path_ + ": truncated checkpoint (need " + std::to_string(n) +
                                     " bytes at offset " + std::to_string(pos_) + ")");
        }
    }

    const std::vector<std::uint8_t>& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed) {
    static const auto table = make_crc_table();
    std::uint32_t c = seed ^ 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void write_checkpoint_file(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'C', 'I', '2', 'P'});
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        buf.push_back(e.dtype);
        buf.push_back(static_cast<std::uint8_t>(e.dims.size()));
        for (auto d : e.dims) put_u64(buf, static_cast<std::uint64_t>(d));
        const std::size_t elem = e.dtype == 0 ? 4 : 8;
        if (e.payload.size() != static_cast<std::size_t>(e.numel()) * elem) {
            throw ContractError("write_checkpoint_file: payload size mismatch for '" + e.name + "'");
        }
        buf.insert(buf.end(), e.payload.begin(), e.payload.end());
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(path + ": cannot open for writing");
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw DataError(path + ": write failed");
}

std::vector<CheckpointEntry> read_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(path + ": cannot open");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());

    Reader r(buf, path);
    if (buf.size() < 16) throw CheckpointCrcError(path + ": file too short for a checkpoint");
    const auto magic = r.bytes(4);
    if (magic != std::vector<std::uint8_t>{'C', 'I', '2', 'P'}) {
        throw DataError(path + ": bad checkpoint magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError(path + ": checkpoint version " + std::to_string(version) +
                                     ", this build reads version " +
                                     std::to_string(kCheckpointVersion));
    }
    // validate the CRC before trusting any entry field
    const std::uint32_t stored =
        static_cast<std::uint32_t>(buf[buf.size() - 4]) |
        static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8 |
        static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16 |
        static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24;
    const std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
    if (stored != actual) {
        throw CheckpointCrcError(path + ": CRC mismatch (stored " + std::to_string(stored) +
                                 ", computed " + std::to_string(actual) + ")");
    }

    const std::uint32_t count = r.u32();
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint32_t name_len = r.u32();
        auto nb = r.bytes(name_len);
        e.name.assign(nb.begin(), nb.end());
        e.dtype = r.u8();
        if (e.dtype > 1) throw DataError(path + ": unknown dtype code for '" + e.name + "'");
        const std::uint8_t rank = r.u8();
        for (int d = 0; d < rank; ++d) e.dims.push_back(static_cast<std::int64_t>(r.u64()));
        const std::size_t elem = e.dtype == 0 ? 4 : 8;
        e.payload = r.bytes(static_cast<std::size_t>(e.numel()) * elem);
        entries.push_back(std::move(e));
    }
    if (r.pos() != buf.size() - 4) {
        throw DataError(path + ": trailing bytes after the last checkpoint entry");
    }
    return entries;
}

}  // namespace ci2p

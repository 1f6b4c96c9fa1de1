#include "hsrnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hsrnet {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

class Reader {
  public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw io_error(path_ + ": " + what);
    }

    void bytes(void* dst, size_t n, const char* what) {
        is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n) {
            fail(std::string("truncated file while reading ") + what);
        }
    }

    uint16_t u16(const char* what) {
        unsigned char b[2];
        bytes(b, 2, what);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

  private:
    std::istream& is_;
    std::string path_;
};

CheckpointRecord read_record(Reader& r) {
    CheckpointRecord rec;
    const uint16_t name_len = r.u16("record name length");
    rec.name.resize(name_len);
    if (name_len > 0) r.bytes(rec.name.data(), name_len, "record name");
    unsigned char ndim = 0;
    r.bytes(&ndim, 1, "record rank");
    rec.dims.resize(ndim);
    uint64_t n = 1;
    for (unsigned i = 0; i < ndim; ++i) {
        rec.dims[i] = r.u32("record dims");
        n *= rec.dims[i];
    }
    if (n > (1ull << 31)) r.fail("record '" + rec.name + "' is implausibly large");
    rec.data.resize(static_cast<size_t>(n));
    for (size_t i = 0; i < rec.data.size(); ++i) rec.data[i] = r.f32("record data");
    return rec;
}

void write_record(std::ostream& os, const CheckpointRecord& rec, const std::string& path) {
    if (rec.name.size() > 0xffff) throw io_error(path + ": record name too long: " + rec.name);
    if (rec.dims.size() > 0xff) throw io_error(path + ": record rank > 255: " + rec.name);
    uint64_t n = 1;
    for (uint32_t d : rec.dims) n *= d;
    if (n != rec.data.size()) {
        throw io_error(path + ": record '" + rec.name + "' dims disagree with data size");
    }
    put_u16(os, static_cast<uint16_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    const unsigned char ndim = static_cast<unsigned char>(rec.dims.size());
    os.write(reinterpret_cast<const char*>(&ndim), 1);
    for (uint32_t d : rec.dims) put_u32(os, d);
    for (float v : rec.data) put_f32(os, v);
}

}  // namespace

uint64_t CheckpointRecord::numel() const {
    uint64_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

const CheckpointRecord* Checkpoint::find_adam(const std::string& name) const {
    for (const auto& r : adam_records) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error(path + ": cannot open for reading");
    Reader r(is, path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "HSRC", 4) != 0) r.fail("bad magic, not a checkpoint file");
    const uint32_t version = r.u32("version");
    if (version != 1) r.fail("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    const uint32_t count = r.u32("record count");
    ck.records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) ck.records.push_back(read_record(r));

    if (!r.at_eof()) {
        char amagic[4];
        r.bytes(amagic, 4, "optimizer magic");
        if (std::memcmp(amagic, "ADAM", 4) != 0) r.fail("unexpected trailing bytes");
        const uint32_t aversion = r.u32("optimizer version");
        if (aversion != 1) r.fail("unsupported optimizer block version " + std::to_string(aversion));
        const uint32_t acount = r.u32("optimizer record count");
        ck.adam_records.reserve(acount);
        for (uint32_t i = 0; i < acount; ++i) ck.adam_records.push_back(read_record(r));
        ck.has_adam = true;
        if (!r.at_eof()) r.fail("unexpected trailing bytes");
    }
    return ck;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error(path + ": cannot open for writing");
    os.write("HSRC", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(ck.records.size()));
    for (const auto& rec : ck.records) write_record(os, rec, path);
    if (ck.has_adam) {
        os.write("ADAM", 4);
        put_u32(os, 1);
        put_u32(os, static_cast<uint32_t>(ck.adam_records.size()));
        for (const auto& rec : ck.adam_records) write_record(os, rec, path);
    }
    if (!os) throw io_error(path + ": write failed");
}

}  // namespace hsrnet

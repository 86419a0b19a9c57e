#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tws/data.hpp"

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

namespace tws {

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'W', 'S', 'V'};
constexpr char kMeasurementMagic[4] = {'T', 'W', 'M', 'V'};

class Writer {
  public:
    void put(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void put_u32(uint32_t v) { put(&v, 4); }
    void put_u64(uint64_t v) { put(&v, 8); }

    void put_tensors(const std::vector<NamedTensorF>& ts) {
        put_u32(uint32_t(ts.size()));
        for (const auto& t : ts) {
            put_u32(uint32_t(t.name.size()));
            put(t.name.data(), t.name.size());
            put_u32(uint32_t(t.dims.size()));
            uint64_t numel = 1;
            for (uint64_t d : t.dims) {
                put_u64(d);
                numel *= d;
            }
            if (numel != t.data.size())
                throw std::runtime_error("container: dims do not match payload size");
            put(t.data.data(), t.data.size() * 4);
        }
    }

    void finish(const std::string& path) {
        uint32_t crc = uint32_t(
            crc32(0, reinterpret_cast<const Bytef*>(buf_.data()), uInt(buf_.size())));
        put_u32(crc);
        std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw std::runtime_error("cannot write " + path);
            f.write(buf_.data(), std::streamsize(buf_.size()));
            if (!f) throw std::runtime_error("write failed for " + path);
        }
        std::filesystem::rename(tmp, path);
    }

  private:
    std::vector<char> buf_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + path);
        buf_.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (buf_.size() < 8) throw std::runtime_error("container truncated: " + path);
        uint32_t stored;
        std::memcpy(&stored, buf_.data() + buf_.size() - 4, 4);
        uint32_t actual = uint32_t(crc32(
            0, reinterpret_cast<const Bytef*>(buf_.data()), uInt(buf_.size() - 4)));
        if (stored != actual)
            throw std::runtime_error("container CRC mismatch (corrupt file): " + path);
        end_ = buf_.size() - 4;
    }

    void get(void* p, size_t n) {
        if (pos_ + n > end_) throw std::runtime_error("container truncated");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    uint32_t get_u32() {
        uint32_t v;
        get(&v, 4);
        return v;
    }
    uint64_t get_u64() {
        uint64_t v;
        get(&v, 8);
        return v;
    }
    std::string get_str(size_t n) {
        std::string s(n, '\0');
        get(s.data(), n);
        return s;
    }

    std::vector<NamedTensorF> get_tensors() {
        uint32_t count = get_u32();
        std::vector<NamedTensorF> ts(count);
        for (auto& t : ts) {
            t.name = get_str(get_u32());
            uint32_t rank = get_u32();
            uint64_t numel = 1;
            t.dims.resize(rank);
            for (auto& d : t.dims) {
                d = get_u64();
                numel *= d;
            }
            t.data.resize(numel);
            get(t.data.data(), numel * 4);
        }
        return ts;
    }

    void expect_done() const {
        if (pos_ != end_) throw std::runtime_error("container has trailing bytes");
    }

  private:
    std::vector<char> buf_;
    size_t pos_ = 0;
    size_t end_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointFile& ckpt) {
    Writer w;
    w.put(kCheckpointMagic, 4);
    w.put_u32(kCheckpointVersion);
    w.put_u32(ckpt.depth);
    w.put_u32(ckpt.channels);
    w.put_u32(ckpt.kernel);
    w.put_u32(ckpt.input_channels);
    w.put_tensors(ckpt.tensors);
    w.finish(path);
}

CheckpointFile read_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.get(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t version = r.get_u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version mismatch in " + path);
    CheckpointFile c;
    c.depth = r.get_u32();
    c.channels = r.get_u32();
    c.kernel = r.get_u32();
    c.input_channels = r.get_u32();
    c.tensors = r.get_tensors();
    r.expect_done();
    return c;
}

void write_measurement(const std::string& path, const MeasurementFile& m) {
    Writer w;
    w.put(kMeasurementMagic, 4);
    w.put_u32(kCheckpointVersion);
    w.put_u32(uint32_t(m.meta_json.size()));
    w.put(m.meta_json.data(), m.meta_json.size());
    w.put_tensors(m.tensors);
    w.finish(path);
}

MeasurementFile read_measurement(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.get(magic, 4);
    if (std::memcmp(magic, kMeasurementMagic, 4) != 0)
        throw std::runtime_error("not a measurement file: " + path);
    uint32_t version = r.get_u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("measurement version mismatch in " + path);
    MeasurementFile m;
    m.meta_json = r.get_str(r.get_u32());
    m.tensors = r.get_tensors();
    r.expect_done();
    return m;
}

uint32_t file_crc32(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return uint32_t(crc32(0, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
}

}  // namespace tws

#include "hetgpu/snapshot.h"

#include <cstring>
#include <sstream>

#include "hetgpu/error.h"

namespace hetgpu::snapshot {

namespace {

constexpr char kMagic[4] = {'H', 'G', 'P', 'B'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::vector<uint8_t> out;

    void bytes(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u8(uint8_t v) { out.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
    }
    void blob(const std::vector<uint8_t>& v) {
        u32(uint32_t(v.size()));
        bytes(v.data(), v.size());
    }
    void str(const std::string& s) {
        u32(uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::vector<uint8_t>& in;
    size_t pos = 0;

    explicit Reader(const std::vector<uint8_t>& b) : in(b) {}

    void need(size_t n) const {
        if (pos + n > in.size())
            fail(ErrorKind::State, "unexpected end of state blob at byte " +
                                       std::to_string(pos) + " (wanted " + std::to_string(n) +
                                       " more)");
    }
    void bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, in.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        need(1);
        return in[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(in[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(in[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::vector<uint8_t> blob() {
        uint32_t n = u32();
        need(n);
        std::vector<uint8_t> v(in.begin() + pos, in.begin() + pos + n);
        pos += n;
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<uint8_t> serialize(const StateBlob& b) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.bytes(b.module_id.data(), 8);
    w.str(b.kernel);
    for (int i = 0; i < 3; ++i) w.u32(b.grid[i]);
    for (int i = 0; i < 3; ++i) w.u32(b.block[i]);
    w.u32(uint32_t(b.args.size()));
    for (const auto& a : b.args) {
        w.u8(a.kind);
        w.u64(a.payload);
    }
    w.blob(b.completed);
    w.u32(uint32_t(b.dumps.size()));
    for (const auto& d : b.dumps) {
        w.u32(d.block_index);
        w.u32(d.resume_point_id);
        w.u32(d.thread_count);
        w.blob(d.exited);
        w.u32(uint32_t(d.reg_layout.size()));
        for (uint32_t t = 0; t < d.thread_count; ++t)
            for (size_t r = 0; r < d.reg_layout.size(); ++r) {
                w.u32(d.reg_layout[r].id);
                w.u8(d.reg_layout[r].type);
                w.u64(d.values[size_t(t) * d.reg_layout.size() + r]);
            }
        w.u64(d.shared.size());
        w.bytes(d.shared.data(), d.shared.size());
    }
    w.u32(uint32_t(b.memory.size()));
    for (const auto& e : b.memory) {
        w.u64(e.vp_id);
        w.u64(e.bytes.size());
        w.bytes(e.bytes.data(), e.bytes.size());
    }
    w.u32(b.segment_x);
    w.u8(b.migration_mode ? 1 : 0);
    w.u64(b.sched_seed);
    w.u64(ir::fnv1a64(w.out.data(), w.out.size()));
    return std::move(w.out);
}

StateBlob deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 + 8)
        fail(ErrorKind::State, "state blob is too short to be valid");
    uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    uint64_t computed = ir::fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != computed)
        fail(ErrorKind::State, "state blob checksum mismatch (corrupt or truncated)");

    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrorKind::State, "state blob magic is not HGPB");
    uint32_t version = r.u32();
    if (version != kVersion)
        fail(ErrorKind::State,
             "state blob format version " + std::to_string(version) + " is not supported");

    StateBlob b;
    r.bytes(b.module_id.data(), 8);
    b.kernel = r.str();
    for (int i = 0; i < 3; ++i) b.grid[i] = r.u32();
    for (int i = 0; i < 3; ++i) b.block[i] = r.u32();
    uint32_t nargs = r.u32();
    for (uint32_t i = 0; i < nargs; ++i) {
        BlobArg a;
        a.kind = r.u8();
        if (a.kind > 1) fail(ErrorKind::State, "state blob argument kind is invalid");
        a.payload = r.u64();
        b.args.push_back(a);
    }
    b.completed = r.blob();
    uint32_t ndumps = r.u32();
    for (uint32_t i = 0; i < ndumps; ++i) {
        BlobDump d;
        d.block_index = r.u32();
        d.resume_point_id = r.u32();
        d.thread_count = r.u32();
        d.exited = r.blob();
        uint32_t regs = r.u32();
        r.need(size_t(d.thread_count) * regs * 13);
        d.values.reserve(size_t(d.thread_count) * regs);
        for (uint32_t t = 0; t < d.thread_count; ++t)
            for (uint32_t k = 0; k < regs; ++k) {
                BlobRegSlot slot;
                slot.id = r.u32();
                slot.type = r.u8();
                uint64_t v = r.u64();
                if (t == 0) {
                    d.reg_layout.push_back(slot);
                } else if (!(slot == d.reg_layout[k])) {
                    fail(ErrorKind::State,
                         "state blob register layout varies across threads of block " +
                             std::to_string(d.block_index));
                }
                d.values.push_back(v);
            }
        uint64_t shared_len = r.u64();
        r.need(shared_len);
        d.shared.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + shared_len);
        r.pos += shared_len;
        b.dumps.push_back(std::move(d));
    }
    uint32_t nmem = r.u32();
    uint64_t prev_vp = 0;
    for (uint32_t i = 0; i < nmem; ++i) {
        MemEntry e;
        e.vp_id = r.u64();
        if (e.vp_id <= prev_vp)
            fail(ErrorKind::State, "state blob memory section is not in ascending vp order");
        prev_vp = e.vp_id;
        uint64_t n = r.u64();
        r.need(n);
        e.bytes.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + n);
        r.pos += n;
        b.memory.push_back(std::move(e));
    }
    b.segment_x = r.u32();
    b.migration_mode = r.u8() != 0;
    b.sched_seed = r.u64();
    if (r.pos != bytes.size() - 8)
        fail(ErrorKind::State, "state blob has trailing bytes before the checksum");
    return b;
}

std::string inspect(const StateBlob& b) {
    std::ostringstream os;
    os << "magic=HGPB version=" << kVersion << "\n";
    os << "module_id=" << ir::module_id_hex(b.module_id) << "\n";
    os << "kernel=" << (b.kernel.empty() ? "(none)" : b.kernel) << "\n";
    os << "grid=" << b.grid[0] << "x" << b.grid[1] << "x" << b.grid[2];
    os << " block=" << b.block[0] << "x" << b.block[1] << "x" << b.block[2] << "\n";
    os << "args=" << b.args.size() << "\n";
    for (const auto& a : b.args)
        os << (a.kind == 1 ? "  vp id=" : "  scalar slot=0x") << (a.kind == 1 ? std::dec : std::hex)
           << a.payload << std::dec << "\n";
    uint32_t total = b.grid[0] * b.grid[1] * b.grid[2];
    uint32_t done = 0;
    for (uint32_t i = 0; i < total; ++i)
        if (!b.completed.empty() && i / 8 < b.completed.size() &&
            (b.completed[i / 8] >> (i % 8) & 1))
            done++;
    os << "blocks=" << total << " completed=" << done << " dumps=" << b.dumps.size() << "\n";
    for (const auto& d : b.dumps)
        os << "  block " << d.block_index << ": resume_point=" << d.resume_point_id
           << " threads=" << d.thread_count << " regs_per_thread=" << d.reg_layout.size()
           << " shared_bytes=" << d.shared.size() << "\n";
    uint64_t mem = 0;
    for (const auto& e : b.memory) mem += e.bytes.size();
    os << "memory_entries=" << b.memory.size() << " memory_bytes=" << mem << "\n";
    os << "segment_x=" << b.segment_x << " migration_mode=" << (b.migration_mode ? 1 : 0)
       << " sched_seed=" << b.sched_seed << "\n";
    return os.str();
}

}  // namespace hetgpu::snapshot

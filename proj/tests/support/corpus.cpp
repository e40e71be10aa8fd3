#include "corpus.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "hetgpu/error.h"
#include "hetgpu/oracle.h"
#include "hetgpu/text.h"

using namespace hetgpu;

namespace testsup {

uint64_t Rng::next() {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t Rng::below(uint64_t n) { return n ? next() % n : 0; }

float Rng::f32_small() {
    // 1/1024 steps over [-2, 2); exact binary fractions keep values friendly
    return float(int64_t(below(4096)) - 2048) / 1024.0f;
}

std::vector<uint8_t> f32_bytes(const std::vector<float>& v) {
    std::vector<uint8_t> b(v.size() * 4);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
}

std::vector<float> f32_view(const std::vector<uint8_t>& b) {
    std::vector<float> v(b.size() / 4);
    std::memcpy(v.data(), b.data(), v.size() * 4);
    return v;
}

std::vector<uint8_t> u32_bytes(const std::vector<uint32_t>& v) {
    std::vector<uint8_t> b(v.size() * 4);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
}

std::vector<uint32_t> u32_view(const std::vector<uint8_t>& b) {
    std::vector<uint32_t> v(b.size() / 4);
    std::memcpy(v.data(), b.data(), v.size() * 4);
    return v;
}

std::vector<uint8_t> u64_bytes(const std::vector<uint64_t>& v) {
    std::vector<uint8_t> b(v.size() * 8);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
}

std::vector<uint64_t> u64_view(const std::vector<uint8_t>& b) {
    std::vector<uint64_t> v(b.size() / 8);
    std::memcpy(v.data(), b.data(), v.size() * 8);
    return v;
}

std::string kernel_dir() { return HETGPU_KERNEL_DIR; }

const ir::Module& corpus_module(const std::string& file) {
    static std::map<std::string, ir::Module> cache;
    auto it = cache.find(file);
    if (it != cache.end()) return it->second;
    std::ifstream in(kernel_dir() + "/" + file);
    if (!in) throw std::runtime_error("cannot open kernel file " + file);
    std::stringstream ss;
    ss << in.rdbuf();
    auto res = text::parse(ss.str(), file);
    if (!res.ok()) throw std::runtime_error(file + ":\n" + res.diagnostics_text());
    return cache.emplace(file, std::move(res.module)).first->second;
}

static uint32_t count_barrier_sites(const std::string& file, const std::string& kernel) {
    const ir::Kernel* k = corpus_module(file).find_kernel(kernel);
    // suspension points are the barrier sites plus the exit sentinel
    return uint32_t(k->meta.suspension_points.size()) - 1;
}

static std::vector<float> gen_f32(Rng& rng, size_t n, float canonical, bool randomize) {
    std::vector<float> v(n, canonical);
    if (randomize)
        for (auto& x : v) x = rng.f32_small();
    return v;
}

std::vector<CorpusCase> corpus_cases(uint64_t data_seed) {
    bool rnd = data_seed != 0;
    Rng rng(data_seed * 0x5bd1e995u + 17);
    std::vector<CorpusCase> cases;

    {
        CorpusCase c;
        c.kernel = "vecadd";
        c.file = "vecadd.hir";
        c.grid = {8, 1, 1};
        c.block = {32, 1, 1};
        uint32_t n = rnd ? 241 : 256;
        c.buf_names = {"a", "b", "c"};
        c.buffers = {f32_bytes(gen_f32(rng, 256, 1.5f, rnd)),
                     f32_bytes(gen_f32(rng, 256, 2.25f, rnd)),
                     std::vector<uint8_t>(1024, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {true, 2, 0}, {false, 0, n}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "saxpy";
        c.file = "saxpy.hir";
        c.grid = {8, 1, 1};
        c.block = {32, 1, 1};
        uint32_t n = rnd ? 247 : 256;
        float a = rnd ? rng.f32_small() : 2.0f;
        c.buf_names = {"x", "y"};
        c.buffers = {f32_bytes(gen_f32(rng, 256, 1.25f, rnd)),
                     f32_bytes(gen_f32(rng, 256, 2.0f, rnd))};
        c.args = {{false, 0, f32_slot(a)}, {true, 0, 0}, {true, 1, 0}, {false, 0, n}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "matmul";
        c.file = "matmul.hir";
        c.grid = {3, 3, 1};
        c.block = {16, 2, 1};
        c.buf_names = {"a", "b", "c"};
        c.buffers = {f32_bytes(gen_f32(rng, 48 * 48, 1.5f, rnd)),
                     f32_bytes(gen_f32(rng, 48 * 48, 0.25f, rnd)),
                     std::vector<uint8_t>(48 * 48 * 4, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {true, 2, 0}, {false, 0, 48}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "reduction";
        c.file = "reduction.hir";
        c.grid = {8, 1, 1};
        c.block = {32, 1, 1};
        uint32_t n = rnd ? 225 : 256;
        c.buf_names = {"a", "out"};
        c.buffers = {f32_bytes(gen_f32(rng, 256, 1.5f, rnd)),
                     std::vector<uint8_t>(8 * 4, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {false, 0, n}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "scan";
        c.file = "scan.hir";
        c.grid = {4, 1, 1};
        c.block = {32, 1, 1};
        std::vector<uint32_t> a(128, 3);
        if (rnd)
            for (auto& x : a) x = uint32_t(rng.below(1 << 20));
        c.buf_names = {"a", "out"};
        c.buffers = {u32_bytes(a), std::vector<uint8_t>(512, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "bitcount";
        c.file = "bitcount.hir";
        c.grid = {4, 1, 1};
        c.block = {32, 1, 1};
        std::vector<uint32_t> a(128);
        for (size_t i = 0; i < a.size(); ++i)
            a[i] = rnd ? uint32_t(rng.next()) : uint32_t(i);
        c.buf_names = {"a", "out", "masks"};
        c.buffers = {u32_bytes(a), std::vector<uint8_t>(512, 0),
                     std::vector<uint8_t>(4 * 8, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {true, 2, 0}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "montecarlo";
        c.file = "montecarlo.hir";
        c.grid = {8, 1, 1};
        c.block = {32, 1, 1};
        uint32_t seed = rnd ? uint32_t(rng.next()) : 12345;
        c.buf_names = {"hits", "ctr"};
        c.buffers = {std::vector<uint8_t>(1024, 0), std::vector<uint8_t>(4, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {false, 0, 64}, {false, 0, seed}};
        cases.push_back(std::move(c));
    }
    {
        CorpusCase c;
        c.kernel = "matvec_relu";
        c.file = "matvec_relu.hir";
        c.grid = {2, 1, 1};
        c.block = {32, 1, 1};
        uint32_t nrows = rnd ? 61 : 64;
        c.buf_names = {"a", "x", "y"};
        c.buffers = {f32_bytes(gen_f32(rng, 64 * 32, 0.5f, rnd)),
                     f32_bytes(gen_f32(rng, 32, 1.5f, rnd)),
                     std::vector<uint8_t>(64 * 4, 0)};
        c.args = {{true, 0, 0}, {true, 1, 0}, {true, 2, 0},
                  {false, 0, nrows}, {false, 0, 32}};
        cases.push_back(std::move(c));
    }

    for (auto& c : cases) c.barrier_sites = count_barrier_sites(c.file, c.kernel);
    return cases;
}

CorpusCase case_loop_accum(uint32_t trips) {
    CorpusCase c;
    c.kernel = "loop_accum";
    c.file = "loop_accum.hir";
    c.grid = {1, 1, 1};
    c.block = {32, 1, 1};
    c.buf_names = {"out"};
    c.buffers = {std::vector<uint8_t>(128, 0)};
    c.args = {{true, 0, 0}, {false, 0, trips}};
    c.barrier_sites = count_barrier_sites(c.file, c.kernel);
    return c;
}

CorpusCase case_partial_barrier(uint64_t data_seed) {
    CorpusCase c;
    c.kernel = "partial_barrier";
    c.file = "partial_barrier.hir";
    c.grid = {2, 1, 1};
    c.block = {32, 1, 1};
    Rng rng(data_seed + 5);
    c.buf_names = {"a", "out"};
    c.buffers = {f32_bytes(gen_f32(rng, 64, 2.5f, data_seed != 0)),
                 std::vector<uint8_t>(256, 0)};
    c.args = {{true, 0, 0}, {true, 1, 0}, {false, 0, 32}};
    c.barrier_sites = count_barrier_sites(c.file, c.kernel);
    return c;
}

CorpusCase case_atomic_add_one() {
    CorpusCase c;
    c.kernel = "atomic_add_one";
    c.file = "atomic_add_one.hir";
    c.grid = {8, 1, 1};
    c.block = {32, 1, 1};
    c.buf_names = {"ctr"};
    c.buffers = {std::vector<uint8_t>(4, 0)};
    c.args = {{true, 0, 0}};
    c.barrier_sites = count_barrier_sites(c.file, c.kernel);
    return c;
}

// ---- plain-C++ kernel models ----------------------------------------------

static float bitsf(uint32_t b) {
    float f;
    std::memcpy(&f, &b, 4);
    return f;
}

static std::vector<std::vector<uint8_t>> ref_vecadd(const CorpusCase& c) {
    auto a = f32_view(c.buffers[0]), b = f32_view(c.buffers[1]), out = f32_view(c.buffers[2]);
    uint32_t T = c.grid[0] * c.block[0];
    uint32_t n = uint32_t(c.args[3].scalar);
    for (uint32_t i = 0; i < T; ++i)
        if (i < n) out[i] = a[i] + b[i];
    return {c.buffers[0], c.buffers[1], f32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_saxpy(const CorpusCase& c) {
    auto x = f32_view(c.buffers[0]), y = f32_view(c.buffers[1]);
    float a = bitsf(uint32_t(c.args[0].scalar));
    uint32_t T = c.grid[0] * c.block[0];
    uint32_t n = uint32_t(c.args[3].scalar);
    for (uint32_t i = 0; i < T; ++i)
        if (i < n) y[i] = std::fmaf(a, x[i], y[i]);
    return {c.buffers[0], f32_bytes(y)};
}

static std::vector<std::vector<uint8_t>> ref_matmul(const CorpusCase& c) {
    auto a = f32_view(c.buffers[0]), b = f32_view(c.buffers[1]), out = f32_view(c.buffers[2]);
    uint32_t n = uint32_t(c.args[3].scalar);
    // the kernel accumulates k ascending (tile-major, k within tile), which
    // collapses to a single ascending-k FMA chain per output element
    for (uint32_t r = 0; r < n; ++r)
        for (uint32_t col = 0; col < n; ++col) {
            float acc = 0.0f;
            for (uint32_t k = 0; k < n; ++k)
                acc = std::fmaf(a[r * n + k], b[k * n + col], acc);
            out[r * n + col] = acc;
        }
    return {c.buffers[0], c.buffers[1], f32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_reduction(const CorpusCase& c) {
    auto a = f32_view(c.buffers[0]);
    auto out = f32_view(c.buffers[1]);
    uint32_t n = uint32_t(c.args[2].scalar);
    for (uint32_t blk = 0; blk < c.grid[0]; ++blk) {
        float s[32];
        for (uint32_t t = 0; t < 32; ++t) {
            uint32_t gid = blk * 32 + t;
            s[t] = gid < n ? a[gid] : 0.0f;
        }
        for (uint32_t off = 16; off >= 1; off >>= 1)
            for (uint32_t t = 0; t < off; ++t) s[t] = s[t] + s[t + off];
        out[blk] = s[0];
    }
    return {c.buffers[0], f32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_scan(const CorpusCase& c) {
    auto a = u32_view(c.buffers[0]);
    auto out = u32_view(c.buffers[1]);
    for (uint32_t blk = 0; blk < c.grid[0]; ++blk) {
        uint32_t s[32], tmp[32];
        for (uint32_t t = 0; t < 32; ++t) s[t] = a[blk * 32 + t];
        for (uint32_t off = 1; off < 32; off <<= 1) {
            for (uint32_t t = 0; t < 32; ++t) tmp[t] = t >= off ? s[t - off] : 0;
            for (uint32_t t = 0; t < 32; ++t) s[t] += tmp[t];
        }
        for (uint32_t t = 0; t < 32; ++t) out[blk * 32 + t] = s[t];
    }
    return {c.buffers[0], u32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_bitcount(const CorpusCase& c) {
    auto a = u32_view(c.buffers[0]);
    auto out = u32_view(c.buffers[1]);
    auto masks = u64_view(c.buffers[2]);
    for (uint32_t blk = 0; blk < c.grid[0]; ++blk) {
        bool any = false, all = true;
        uint64_t ballot = 0;
        uint32_t counts[32];
        for (uint32_t t = 0; t < 32; ++t) {
            counts[t] = uint32_t(__builtin_popcount(a[blk * 32 + t]));
            bool odd = counts[t] & 1;
            any = any || odd;
            all = all && odd;
            if (odd) ballot |= 1ull << t;
        }
        for (uint32_t t = 0; t < 32; ++t)
            out[blk * 32 + t] = counts[t] * 4 + (any ? 2 : 0) + (all ? 1 : 0);
        masks[blk] = ballot;
    }
    return {c.buffers[0], u32_bytes(out), u64_bytes(masks)};
}

static std::vector<std::vector<uint8_t>> ref_montecarlo(const CorpusCase& c) {
    auto hits = u32_view(c.buffers[0]);
    auto ctr = u32_view(c.buffers[1]);
    uint32_t T = c.grid[0] * c.block[0];
    uint32_t nsamples = uint32_t(c.args[2].scalar);
    uint32_t seed = uint32_t(c.args[3].scalar);
    const float scale = bitsf(0x2F800000u);  // 2^-32
    for (uint32_t gid = 0; gid < T; ++gid) {
        uint32_t state = gid * 2654435761u + seed;
        uint32_t h = 0;
        for (uint32_t k = 0; k < nsamples; ++k) {
            state = state * 1664525u + 1013904223u;
            float x = float(state) * scale;
            state = state * 1664525u + 1013904223u;
            float y = float(state) * scale;
            float r = std::fmaf(y, y, x * x);
            if (r <= 1.0f) {
                h++;
                ctr[0]++;
            }
        }
        hits[gid] = h;
    }
    return {u32_bytes(hits), u32_bytes(ctr)};
}

static std::vector<std::vector<uint8_t>> ref_matvec(const CorpusCase& c) {
    auto a = f32_view(c.buffers[0]), x = f32_view(c.buffers[1]), y = f32_view(c.buffers[2]);
    uint32_t T = c.grid[0] * c.block[0];
    uint32_t nrows = uint32_t(c.args[3].scalar);
    uint32_t ncols = uint32_t(c.args[4].scalar);
    for (uint32_t row = 0; row < T; ++row) {
        if (row >= nrows) continue;
        float acc = 0.0f;
        for (uint32_t k = 0; k < ncols; ++k)
            acc = std::fmaf(a[row * ncols + k], x[k], acc);
        y[row] = std::fmax(acc, 0.0f);
    }
    return {c.buffers[0], c.buffers[1], f32_bytes(y)};
}

static std::vector<std::vector<uint8_t>> ref_loop_accum(const CorpusCase& c) {
    auto out = u32_view(c.buffers[0]);
    uint32_t trips = uint32_t(c.args[1].scalar);
    uint32_t acc = 0, k = 0;
    do {  // the loop body runs at least once
        acc += k;
        k++;
    } while (k < trips);
    uint32_t T = c.grid[0] * c.block[0];
    for (uint32_t i = 0; i < T; ++i) out[i] = acc;
    return {u32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_partial(const CorpusCase& c) {
    auto a = f32_view(c.buffers[0]);
    auto out = f32_view(c.buffers[1]);
    uint32_t half = uint32_t(c.args[2].scalar) / 2;
    for (uint32_t blk = 0; blk < c.grid[0]; ++blk)
        for (uint32_t t = 0; t < half; ++t) {
            uint32_t gid = blk * 32 + t;
            out[gid] = a[gid] + a[blk * 32 + t + half];
        }
    return {c.buffers[0], f32_bytes(out)};
}

static std::vector<std::vector<uint8_t>> ref_atomic(const CorpusCase& c) {
    auto ctr = u32_view(c.buffers[0]);
    ctr[0] += c.grid[0] * c.grid[1] * c.grid[2] * c.block[0] * c.block[1] * c.block[2];
    return {u32_bytes(ctr)};
}

std::vector<std::vector<uint8_t>> cpu_reference(const CorpusCase& c) {
    if (c.kernel == "vecadd") return ref_vecadd(c);
    if (c.kernel == "saxpy") return ref_saxpy(c);
    if (c.kernel == "matmul") return ref_matmul(c);
    if (c.kernel == "reduction") return ref_reduction(c);
    if (c.kernel == "scan") return ref_scan(c);
    if (c.kernel == "bitcount") return ref_bitcount(c);
    if (c.kernel == "montecarlo") return ref_montecarlo(c);
    if (c.kernel == "matvec_relu") return ref_matvec(c);
    if (c.kernel == "loop_accum") return ref_loop_accum(c);
    if (c.kernel == "partial_barrier") return ref_partial(c);
    if (c.kernel == "atomic_add_one") return ref_atomic(c);
    throw std::runtime_error("no reference model for kernel " + c.kernel);
}

// ---- runners ----------------------------------------------------------------

ir::DeviceDesc test_desc(ir::DeviceModel m) {
    ir::DeviceDesc d;
    d.model = m;
    d.global_mem_bytes = 8ull * 1024 * 1024;
    d.name = m == ir::DeviceModel::SIMT ? "simt-test" : "mimd-test";
    return d;
}

Target simt_target() { return {ir::DeviceModel::SIMT, {}}; }

Target mimd_target(lowering::MimdStrategy s, uint32_t partition_width) {
    Target t;
    t.model = ir::DeviceModel::MIMD;
    t.opts.strategy = s;
    t.opts.partition_width = partition_width;
    return t;
}

static std::vector<rt::ArgValue> resolve_args(const CorpusCase& c,
                                              const std::vector<rt::VirtualPointer>& vps) {
    std::vector<rt::ArgValue> args;
    for (const auto& a : c.args)
        args.push_back(a.is_buf ? rt::ArgValue::make_vp(vps[a.index])
                                : rt::ArgValue::make_scalar(a.scalar));
    return args;
}

static RunOutput finish(rt::Runtime& R, uint32_t stream, uint32_t dev,
                        const CorpusCase& c, const std::vector<rt::VirtualPointer>& vps) {
    RunOutput o;
    for (size_t i = 0; i < vps.size(); ++i) {
        std::vector<uint8_t> bytes(c.buffers[i].size());
        R.memcpy_d2h(bytes.data(), vps[i], 0, bytes.size(), stream);
        o.buffers.push_back(std::move(bytes));
    }
    auto& d = R.device(dev);
    o.instructions = d.instructions_executed();
    o.barrier_visits = d.barrier_visits();
    o.dma_read = d.dma_read_bytes();
    o.dma_write = d.dma_write_bytes();
    o.cache_hits = R.cache().hits();
    o.cache_misses = R.cache().misses();
    return o;
}

RunOutput run_case(const CorpusCase& c, const Target& t) {
    rt::Runtime R;
    uint32_t dev = R.register_device(test_desc(t.model));
    R.load_module(corpus_module(c.file));
    uint32_t st = R.create_stream(dev);
    std::vector<rt::VirtualPointer> vps;
    for (const auto& b : c.buffers) {
        auto vp = R.het_malloc(b.size(), st);
        R.memcpy_h2d(vp, 0, b.data(), b.size(), st);
        vps.push_back(vp);
    }
    R.launch_kernel(c.kernel, c.grid, c.block, resolve_args(c, vps), st, t.opts);
    auto state = R.stream_synchronize(st);
    if (state != device::RunState::COMPLETED)
        throw std::runtime_error("run did not complete");
    return finish(R, st, dev, c, vps);
}

RunOutput run_case_migrated(const CorpusCase& c, const Target& from,
                            const std::vector<Target>& hops, uint32_t pause_site,
                            uint64_t pause_instructions) {
    rt::Runtime R;
    uint32_t simt = R.register_device(test_desc(ir::DeviceModel::SIMT));
    uint32_t mimd = R.register_device(test_desc(ir::DeviceModel::MIMD));
    auto dev_of = [&](const Target& t) {
        return t.model == ir::DeviceModel::SIMT ? simt : mimd;
    };
    R.load_module(corpus_module(c.file));
    uint32_t st = R.create_stream(dev_of(from));
    std::vector<rt::VirtualPointer> vps;
    for (const auto& b : c.buffers) {
        auto vp = R.het_malloc(b.size(), st);
        R.memcpy_h2d(vp, 0, b.data(), b.size(), st);
        vps.push_back(vp);
    }
    rt::LaunchOptions opts = from.opts;
    opts.migration_mode = true;
    R.launch_kernel(c.kernel, c.grid, c.block, resolve_args(c, vps), st, opts);
    uint32_t final_dev = dev_of(from);
    for (const auto& hop : hops) {
        if (pause_site != UINT32_MAX)
            R.arm_pause_at_barrier_site(st, pause_site);
        else
            R.arm_pause_after_instructions(st, pause_instructions);
        R.stream_synchronize(st);
        rt::LaunchOptions hop_opts = hop.opts;
        hop_opts.migration_mode = true;
        R.migrate(st, dev_of(hop), hop_opts);
        final_dev = dev_of(hop);
    }
    auto state = R.stream_synchronize(st);
    if (state != device::RunState::COMPLETED)
        throw std::runtime_error("migrated run did not complete");
    return finish(R, st, final_dev, c, vps);
}

RunOutput run_case_oracle(const CorpusCase& c) {
    std::vector<uint8_t> mem(1 << 20, 0);
    std::vector<uint64_t> base(c.buffers.size());
    uint64_t next = 4096;
    for (size_t i = 0; i < c.buffers.size(); ++i) {
        base[i] = next;
        std::memcpy(mem.data() + next, c.buffers[i].data(), c.buffers[i].size());
        next = (next + c.buffers[i].size() + 255) & ~uint64_t(255);
    }
    oracle::Launch l;
    l.grid = c.grid;
    l.block = c.block;
    for (const auto& a : c.args)
        l.args.push_back(a.is_buf ? base[a.index] : a.scalar);
    const ir::Kernel* k = corpus_module(c.file).find_kernel(c.kernel);
    if (!k) throw std::runtime_error("kernel not in module: " + c.kernel);
    auto res = oracle::run(*k, l, mem);
    RunOutput o;
    o.instructions = res.instructions;
    for (size_t i = 0; i < c.buffers.size(); ++i)
        o.buffers.emplace_back(mem.begin() + ptrdiff_t(base[i]),
                               mem.begin() + ptrdiff_t(base[i] + c.buffers[i].size()));
    return o;
}

}  // namespace testsup

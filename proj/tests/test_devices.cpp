// Device engines against the corpus, the sequential interpreter, and each
// other: bit-exact outputs, deterministic scheduling, rendezvous faults,
// pause/resume, and launch-geometry rejection.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "corpus.h"
#include "hetgpu/device.h"
#include "hetgpu/error.h"
#include "hetgpu/lowering.h"
#include "hetgpu/oracle.h"
#include "hetgpu/text.h"

using namespace hetgpu;
using device::Device;
using device::LaunchSpec;
using device::RunState;
using lowering::LoweringConfig;
using lowering::MimdStrategy;
using testsup::CorpusCase;
using testsup::Target;

namespace {

LoweringConfig make_cfg(ir::DeviceModel model, MimdStrategy s = MimdStrategy::SINGLE_CORE,
                        uint32_t pw = 0, bool mig = false, uint32_t segx = 0) {
    LoweringConfig c;
    c.model = model;
    c.strategy = s;
    c.partition_width = pw;
    c.migration_mode = mig;
    c.segment_interval_x = segx;
    return c;
}

std::shared_ptr<lowering::DeviceProgram> lower_module(const ir::Module& m,
                                                      const ir::DeviceDesc& desc,
                                                      LoweringConfig cfg,
                                                      size_t kernel_index = 0) {
    auto p = desc.model == ir::DeviceModel::SIMT
                 ? lowering::lower_for_simt(m.kernels.at(kernel_index), m.module_id, desc, cfg)
                 : lowering::lower_for_mimd(m.kernels.at(kernel_index), m.module_id, desc, cfg);
    return std::make_shared<lowering::DeviceProgram>(std::move(p));
}

// Direct device harness, bypassing the runtime: buffers placed like the
// reference interpreter places them (base 4096, 256-byte aligned, in order).
struct Direct {
    std::unique_ptr<Device> dev;
    std::shared_ptr<lowering::DeviceProgram> prog;
    std::vector<uint64_t> bases;
    LaunchSpec spec;

    void stage(const CorpusCase& c, const ir::DeviceDesc& desc, LoweringConfig cfg,
               uint64_t sched_seed = 0) {
        prog = lower_module(testsup::corpus_module(c.file), desc, cfg);
        dev = desc.model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                  : device::make_mimd_device(desc);
        uint64_t at = 4096;
        bases.clear();
        for (const auto& b : c.buffers) {
            bases.push_back(at);
            dev->write_global(at, b.data(), b.size());
            at = (at + b.size() + 255) & ~255ull;
        }
        spec = LaunchSpec{};
        spec.program = prog;
        spec.grid = c.grid;
        spec.block = c.block;
        for (const auto& a : c.args)
            spec.args.push_back(a.is_buf ? bases[a.index] : a.scalar);
        spec.sched_seed = sched_seed;
    }

    std::vector<std::vector<uint8_t>> buffers(const CorpusCase& c) const {
        std::vector<std::vector<uint8_t>> out;
        for (size_t i = 0; i < c.buffers.size(); ++i) {
            out.emplace_back(c.buffers[i].size());
            dev->read_global(bases[i], out.back().data(), out.back().size());
        }
        return out;
    }
};

const std::vector<std::pair<const char*, Target>> kTargets = {
    {"simt", testsup::simt_target()},
    {"mimd/single_core", testsup::mimd_target(MimdStrategy::SINGLE_CORE)},
    {"mimd/multi_core", testsup::mimd_target(MimdStrategy::MULTI_CORE)},
    {"mimd/multi_core.pw8", testsup::mimd_target(MimdStrategy::MULTI_CORE, 8)},
    {"mimd/independent", testsup::mimd_target(MimdStrategy::INDEPENDENT_THREAD)},
};

}  // namespace

TEST_CASE("every corpus kernel is bit-identical on all engines and the interpreter") {
    for (uint64_t seed : {0ull, 1ull, 2ull}) {
        for (const auto& c : testsup::corpus_cases(seed)) {
            auto expected = testsup::cpu_reference(c);
            auto orc = testsup::run_case_oracle(c);
            CHECK(orc.buffers == expected);
            for (const auto& [name, t] : kTargets) {
                INFO(c.kernel, " seed=", seed, " on ", name);
                auto out = testsup::run_case(c, t);
                CHECK(out.buffers == expected);
            }
        }
    }
}

TEST_CASE("vecadd over 1024 elements: A=i, B=2i gives C=3i everywhere") {
    CorpusCase c = testsup::corpus_cases(0)[0];
    REQUIRE(c.kernel == "vecadd");
    std::vector<float> a(1024), b(1024);
    for (int i = 0; i < 1024; ++i) {
        a[i] = float(i);
        b[i] = float(2 * i);
    }
    c.grid = {32, 1, 1};
    c.block = {32, 1, 1};
    c.buffers = {testsup::f32_bytes(a), testsup::f32_bytes(b),
                 std::vector<uint8_t>(4096, 0)};
    c.args.back().scalar = 1024;

    for (const auto& [name, t] : kTargets) {
        INFO(name);
        auto out = testsup::run_case(c, t);
        auto cv = testsup::f32_view(out.buffers[2]);
        bool all = true;
        for (int i = 0; i < 1024; ++i) all = all && cv[i] == float(3 * i);
        CHECK(all);
    }
}

TEST_CASE("the mask and lock-step engines retire identical instruction streams") {
    for (const auto& c : testsup::corpus_cases(0)) {
        auto s = testsup::run_case(c, kTargets[0].second);
        auto m1 = testsup::run_case(c, kTargets[1].second);
        auto m2 = testsup::run_case(c, kTargets[2].second);
        auto m3 = testsup::run_case(c, kTargets[3].second);
        auto m4 = testsup::run_case(c, kTargets[4].second);
        auto orc = testsup::run_case_oracle(c);
        INFO(c.kernel);
        CHECK(s.instructions == m1.instructions);
        CHECK(s.instructions == m2.instructions);
        CHECK(s.instructions == m3.instructions);
        CHECK(s.instructions > orc.instructions);  // mask walks add control work
        CHECK(m4.instructions >= orc.instructions);
        // barrier arrivals are an architectural count, equal on every engine
        CHECK(s.barrier_visits == m1.barrier_visits);
        CHECK(s.barrier_visits == m2.barrier_visits);
        CHECK(s.barrier_visits == m3.barrier_visits);
        CHECK(s.barrier_visits == m4.barrier_visits);
    }
}

TEST_CASE("known barrier-visit totals: matmul 1728, reduction 1536, scan 1408") {
    auto cases = testsup::corpus_cases(0);
    auto visits = [&](const char* kernel) {
        for (const auto& c : cases)
            if (c.kernel == kernel) return testsup::run_case(c, kTargets[0].second).barrier_visits;
        FAIL("missing kernel ", kernel);
        return uint64_t(0);
    };
    // matmul: 2 barriers x 3 tiles x 32 threads x 9 blocks
    CHECK(visits("matmul") == 1728);
    // reduction: entry store barrier 256 + 5 tree rounds x 256
    CHECK(visits("reduction") == 1536);
    // scan: 128 + 5 rounds x 2 barriers x 128
    CHECK(visits("scan") == 1408);
    CHECK(visits("vecadd") == 0);
}

TEST_CASE("MIMD DMA traffic for vecadd is exactly the user loads and stores") {
    auto c = testsup::corpus_cases(0)[0];
    auto out = testsup::run_case(c, kTargets[1].second);
    CHECK(out.dma_read == 2048);   // 256 x 4 bytes from a and from b
    CHECK(out.dma_write == 1024);  // 256 x 4 bytes into c
}

TEST_CASE("scheduler seed never changes results") {
    auto cases = testsup::corpus_cases(0);
    for (const char* kernel : {"montecarlo", "matmul", "scan"}) {
        const CorpusCase* c = nullptr;
        for (const auto& cc : cases)
            if (cc.kernel == kernel) c = &cc;
        REQUIRE(c != nullptr);
        for (const auto& [name, t] : kTargets) {
            Target t0 = t, t1 = t, t2 = t;
            t1.opts.sched_seed = 1;
            t2.opts.sched_seed = 0xfeedface;
            auto r0 = testsup::run_case(*c, t0);
            auto r1 = testsup::run_case(*c, t1);
            auto r2 = testsup::run_case(*c, t2);
            INFO(kernel, " on ", name);
            CHECK(r0.buffers == r1.buffers);
            CHECK(r0.buffers == r2.buffers);
        }
    }
}

TEST_CASE("256 threads of ATOM_ADD(1) count to exactly 256 on every engine") {
    auto c = testsup::case_atomic_add_one();
    for (uint64_t seed : {0ull, 3ull, 17ull, 99ull, 1234ull}) {
        for (const auto& [name, t] : kTargets) {
            Target ts = t;
            ts.opts.sched_seed = seed;
            auto out = testsup::run_case(c, ts);
            INFO(name, " seed=", seed);
            CHECK(testsup::u32_view(out.buffers[0])[0] == 256);
        }
    }
    auto orc = testsup::run_case_oracle(c);
    CHECK(testsup::u32_view(orc.buffers[0])[0] == 256);
}

TEST_CASE("a barrier under divergent control deadlocks the gang-scheduled engines") {
    const char* src = R"(.func half_bar(.param .u64 %rd0<1>)
{
    .reg .u32 %r1, %r2;
    .reg .u64 %rd3;
    .reg .pred %p4;
    .shared 128;

    GET_LOCAL_ID %r1, 0;
    SETP.LT.U32 %p4, %r1, 16;
    @PRED(%p4) {
        BAR_SHARED;
        MOV.U32 %r2, 1;
    }
    CVT.U64 %rd3, %r1;
    SHL.U64 %rd3, %rd3, 2;
    ADD.U64 %rd3, %rd0, %rd3;
    ST_GLOBAL.U32 [%rd3], %r1;
}
)";
    auto pr = text::parse(src, "half_bar.hir");
    REQUIRE(pr.ok());

    for (const auto& [name, t] :
         {kTargets[0], kTargets[1], kTargets[2], kTargets[3]}) {
        ir::DeviceDesc desc = testsup::test_desc(t.model);
        LoweringConfig cfg = make_cfg(t.model, t.opts.strategy.value_or(MimdStrategy::SINGLE_CORE),
                                      t.opts.partition_width);
        auto prog = lower_module(pr.module, desc, cfg);
        auto dev = t.model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                    : device::make_mimd_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {32, 1, 1};
        spec.args = {4096};
        dev->launch(spec);
        INFO(name);
        try {
            dev->run_until_quiescent();
            FAIL("expected a divergence fault on ", name);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Fault);
            CHECK(std::string(e.what()).find("divergence deadlock at barrier site 1") !=
                  std::string::npos);
        }
    }

    // per-thread scheduling has no gang to deadlock: the skippers exit, the
    // survivors rendezvous among themselves; the interpreter agrees
    ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::MIMD);
    auto prog = lower_module(pr.module, desc,
                             make_cfg(ir::DeviceModel::MIMD, MimdStrategy::INDEPENDENT_THREAD));
    auto dev = device::make_mimd_device(desc);
    LaunchSpec spec;
    spec.program = prog;
    spec.block = {32, 1, 1};
    spec.args = {4096};
    dev->launch(spec);
    CHECK(dev->run_until_quiescent() == RunState::COMPLETED);
    std::vector<uint8_t> got(128);
    dev->read_global(4096, got.data(), got.size());

    std::vector<uint8_t> mem(1 << 20, 0);
    oracle::Launch ol;
    ol.block = {32, 1, 1};
    ol.args = {4096};
    oracle::run(pr.module.kernels[0], ol, mem);
    CHECK(std::equal(got.begin(), got.end(), mem.begin() + 4096));
}

TEST_CASE("a collective under divergent control faults the vector engines") {
    const char* src = R"(.func half_vote(.param .u64 %rd0<1>)
{
    .reg .u32 %r1, %r2;
    .reg .u64 %rd3;
    .reg .pred %p4, %p5, %p6;

    GET_LOCAL_ID %r1, 0;
    SETP.LT.U32 %p4, %r1, 16;
    SETP.GT.U32 %p5, %r1, 3;
    @PRED(%p4) {
        VOTE_ANY.PRED %p6, %p5;
    }
    ST_GLOBAL.U32 [%rd0], %r1;
}
)";
    auto pr = text::parse(src, "half_vote.hir");
    REQUIRE(pr.ok());
    for (const auto& [name, t] : {kTargets[0], kTargets[2]}) {
        ir::DeviceDesc desc = testsup::test_desc(t.model);
        auto prog = lower_module(pr.module, desc,
                                 make_cfg(t.model, t.opts.strategy.value_or(MimdStrategy::SINGLE_CORE),
                                          t.opts.partition_width));
        auto dev = t.model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                    : device::make_mimd_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {32, 1, 1};
        spec.args = {4096};
        dev->launch(spec);
        INFO(name);
        CHECK_THROWS_WITH_AS(dev->run_until_quiescent(),
                             doctest::Contains("divergent collective"), Error);
    }
}

TEST_CASE("SHUFFLE rotates values across the whole block on every engine") {
    const char* src = R"(.func rotate(.param .u64 %rd0<1>, .param .u64 %rd1<1>)
{
    .reg .u32 %r2, %r3, %r4, %r5;
    .reg .u64 %rd6;

    GET_LOCAL_ID %r2, 0;
    CVT.U64 %rd6, %r2;
    SHL.U64 %rd6, %rd6, 2;
    ADD.U64 %rd6, %rd0, %rd6;
    LD_GLOBAL.U32 %r3, [%rd6];
    ADD.U32 %r4, %r2, 1;
    REM.U32 %r4, %r4, 32;
    SHUFFLE.U32 %r5, %r4, %r3;
    CVT.U64 %rd6, %r2;
    SHL.U64 %rd6, %rd6, 2;
    ADD.U64 %rd6, %rd1, %rd6;
    ST_GLOBAL.U32 [%rd6], %r5;
}
)";
    auto pr = text::parse(src, "rotate.hir");
    REQUIRE(pr.ok());
    std::vector<uint32_t> in(32);
    for (uint32_t i = 0; i < 32; ++i) in[i] = i * i + 7;

    for (const auto& [name, t] : kTargets) {
        ir::DeviceDesc desc = testsup::test_desc(t.model);
        auto prog = lower_module(pr.module, desc,
                                 make_cfg(t.model, t.opts.strategy.value_or(MimdStrategy::SINGLE_CORE),
                                          t.opts.partition_width));
        auto dev = t.model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                    : device::make_mimd_device(desc);
        auto bytes = testsup::u32_bytes(in);
        dev->write_global(4096, bytes.data(), bytes.size());
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {32, 1, 1};
        spec.args = {4096, 8192};
        dev->launch(spec);
        REQUIRE(dev->run_until_quiescent() == RunState::COMPLETED);
        std::vector<uint8_t> got(128);
        dev->read_global(8192, got.data(), got.size());
        auto gv = testsup::u32_view(got);
        INFO(name);
        bool all = true;
        for (uint32_t i = 0; i < 32; ++i) all = all && gv[i] == in[(i + 1) % 32];
        CHECK(all);
    }
}

TEST_CASE("launch geometry is validated against program and device limits") {
    // BALLOT packs the block into a 64-bit mask
    {
        const ir::Module& m = testsup::corpus_module("bitcount.hir");
        ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::SIMT);
        auto prog = lower_module(m, desc, make_cfg(ir::DeviceModel::SIMT));
        auto dev = device::make_simt_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {128, 1, 1};
        spec.args.resize(m.kernels[0].params.size(), 4096);
        try {
            dev->launch(spec);
            FAIL("expected a validation error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Validation);
            CHECK(std::string(e.what()).find("limits blocks to 64 threads") !=
                  std::string::npos);
        }
    }
    // SIMT blocks cap at 1024 threads
    {
        const ir::Module& m = testsup::corpus_module("vecadd.hir");
        ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::SIMT);
        auto prog = lower_module(m, desc, make_cfg(ir::DeviceModel::SIMT));
        auto dev = device::make_simt_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {2048, 1, 1};
        spec.args = {4096, 8192, 12288, 256};
        CHECK_THROWS_WITH_AS(dev->launch(spec),
                             doctest::Contains("exceeds the device limit"), Error);
    }
    // zero dimension, wrong arg count, wrong model
    {
        const ir::Module& m = testsup::corpus_module("vecadd.hir");
        ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::SIMT);
        auto prog = lower_module(m, desc, make_cfg(ir::DeviceModel::SIMT));
        auto dev = device::make_simt_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.grid = {0, 1, 1};
        spec.args = {4096, 8192, 12288, 256};
        CHECK_THROWS_WITH_AS(dev->launch(spec), doctest::Contains("must be nonzero"),
                             Error);
        spec.grid = {1, 1, 1};
        spec.args = {4096};
        CHECK_THROWS_WITH_AS(dev->launch(spec), doctest::Contains("takes 4 arguments"),
                             Error);
        auto mimd_dev = device::make_mimd_device(testsup::test_desc(ir::DeviceModel::MIMD));
        spec.args = {4096, 8192, 12288, 256};
        CHECK_THROWS_WITH_AS(mimd_dev->launch(spec),
                             doctest::Contains("different device model"), Error);
    }
    // a block wider than one core's lanes must fit in cores
    {
        const ir::Module& m = testsup::corpus_module("vecadd.hir");
        ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::MIMD);
        desc.core_count = 2;
        auto prog = lower_module(m, desc,
                                 make_cfg(ir::DeviceModel::MIMD, MimdStrategy::MULTI_CORE, 8));
        auto dev = device::make_mimd_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {32, 1, 1};  // needs 4 cores at width 8
        spec.args = {4096, 8192, 12288, 32};
        CHECK_THROWS_WITH_AS(dev->launch(spec), doctest::Contains("one block needs"),
                             Error);
    }
}

TEST_CASE("more blocks than cores run in waves; device-wide barriers refuse that") {
    ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::MIMD);
    desc.core_count = 4;

    CorpusCase c = testsup::corpus_cases(0)[0];  // vecadd, 8 blocks
    REQUIRE(c.grid[0] > desc.core_count);
    Direct d;
    d.stage(c, desc, make_cfg(ir::DeviceModel::MIMD, MimdStrategy::SINGLE_CORE));
    d.dev->launch(d.spec);
    REQUIRE(d.dev->run_until_quiescent() == RunState::COMPLETED);
    CHECK(d.buffers(c) == testsup::cpu_reference(c));

    // segmented loop_accum carries a BAR_GLOBAL; 8 blocks on 4 cores is a wave
    // schedule, which a device-wide barrier cannot tolerate
    auto la = testsup::case_loop_accum(100);
    la.grid = {8, 1, 1};
    la.buffers[0].assign(8 * 32 * 4, 0);
    Direct d2;
    d2.stage(la, desc,
             make_cfg(ir::DeviceModel::MIMD, MimdStrategy::SINGLE_CORE, 0, false, 10));
    CHECK_THROWS_WITH_AS(d2.dev->launch(d2.spec),
                         doctest::Contains("device-wide barrier"), Error);
}

TEST_CASE("pausing mid-run dumps every unfinished block and resumes losslessly") {
    auto cases = testsup::corpus_cases(0);
    const CorpusCase* mm = nullptr;
    for (const auto& c : cases)
        if (c.kernel == "matmul") mm = &c;
    REQUIRE(mm != nullptr);
    auto expected = testsup::cpu_reference(*mm);

    for (auto model : {ir::DeviceModel::SIMT, ir::DeviceModel::MIMD}) {
        ir::DeviceDesc desc = testsup::test_desc(model);
        LoweringConfig cfg = make_cfg(model, MimdStrategy::MULTI_CORE, 0, true);
        Direct d;
        d.stage(*mm, desc, cfg);
        d.dev->launch(d.spec);
        d.dev->arm_pause_after(3000);
        REQUIRE(d.dev->run_until_quiescent() == RunState::PAUSED);

        auto dumps = d.dev->collect_block_dumps();
        auto completed = d.dev->completed_blocks();
        uint32_t done = 0;
        for (uint32_t b = 0; b < 9; ++b) done += device::dump_bit(completed, b);
        CHECK(dumps.size() == 9 - done);
        for (const auto& dump : dumps) {
            CHECK(dump.thread_count == 32);
            uint32_t live = uint32_t(
                d.prog->liveness.at(dump.resume_point_id).size());
            CHECK(dump.registers.size() == size_t(32) * live);
            CHECK(dump.shared.size() == d.prog->kernel.shared_mem_bytes);
        }

        // restore onto a fresh device of the same model, then finish
        Direct fresh;
        fresh.stage(*mm, desc, cfg);
        for (size_t i = 0; i < d.bases.size(); ++i) {
            std::vector<uint8_t> img(mm->buffers[i].size());
            d.dev->read_global(d.bases[i], img.data(), img.size());
            fresh.dev->write_global(fresh.bases[i], img.data(), img.size());
        }
        fresh.dev->resume(fresh.spec, dumps, completed);
        REQUIRE(fresh.dev->run_until_quiescent() == RunState::COMPLETED);
        CHECK(fresh.buffers(*mm) == expected);
        bool staged = false;
        for (const auto& e : fresh.dev->events())
            staged = staged || e.rfind("resume.stage", 0) == 0;
        CHECK(staged);
    }
}

TEST_CASE("the pause flag only matters at suspension checks") {
    // no barriers: the flag is never consulted, the launch completes
    CorpusCase c = testsup::corpus_cases(0)[0];
    ir::DeviceDesc desc = testsup::test_desc(ir::DeviceModel::SIMT);
    Direct d;
    d.stage(c, desc, make_cfg(ir::DeviceModel::SIMT, MimdStrategy::SINGLE_CORE, 0, true));
    d.dev->launch(d.spec);
    d.dev->set_pause_flag();
    CHECK(d.dev->run_until_quiescent() == RunState::COMPLETED);
    CHECK(d.buffers(c) == testsup::cpu_reference(c));

    // with barriers: the first suspension check honors it
    const CorpusCase* sc = nullptr;
    auto cases = testsup::corpus_cases(0);
    for (const auto& cc : cases)
        if (cc.kernel == "scan") sc = &cc;
    REQUIRE(sc != nullptr);
    Direct d2;
    d2.stage(*sc, desc, make_cfg(ir::DeviceModel::SIMT, MimdStrategy::SINGLE_CORE, 0, true));
    d2.dev->launch(d2.spec);
    d2.dev->set_pause_flag();
    REQUIRE(d2.dev->run_until_quiescent() == RunState::PAUSED);
    for (const auto& dump : d2.dev->collect_block_dumps())
        CHECK(dump.resume_point_id == 1);

    // arming at a site raises the device-wide flag at first arrival; with a
    // single block in flight the dump lands exactly on that site
    CorpusCase one = *sc;
    one.grid = {1, 1, 1};
    one.buffers[0].resize(32 * 4);
    one.buffers[1].resize(32 * 4);
    Direct d3;
    d3.stage(one, desc, make_cfg(ir::DeviceModel::SIMT, MimdStrategy::SINGLE_CORE, 0, true));
    d3.dev->launch(d3.spec);
    d3.dev->arm_pause_at_site(2);
    REQUIRE(d3.dev->run_until_quiescent() == RunState::PAUSED);
    auto d3dumps = d3.dev->collect_block_dumps();
    REQUIRE(d3dumps.size() == 1);
    CHECK(d3dumps[0].resume_point_id == 2);

    // dumps are refused while running
    Direct d4;
    d4.stage(c, desc, make_cfg(ir::DeviceModel::SIMT));
    d4.dev->launch(d4.spec);
    try {
        d4.dev->collect_block_dumps();
        FAIL("expected a protocol error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Protocol);
    }
}

TEST_CASE("permute_order: seed 0 is identity, other seeds are permutations") {
    std::vector<uint32_t> base(16);
    std::iota(base.begin(), base.end(), 0);

    auto v = base;
    device::permute_order(v, 0, 5);
    CHECK(v == base);

    auto a = base, b = base, c2 = base;
    device::permute_order(a, 42, 0);
    device::permute_order(b, 42, 0);
    device::permute_order(c2, 42, 1);
    CHECK(a == b);
    CHECK(a != base);
    CHECK(a != c2);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == base);
}

TEST_CASE("out-of-bounds accesses fault with the offending offset") {
    const char* src = R"(.func oob(.param .u64 %rd0<1>)
{
    .reg .u32 %r1;

    MOV.U32 %r1, 7;
    ST_GLOBAL.U32 [%rd0], %r1;
}
)";
    auto pr = text::parse(src, "oob.hir");
    REQUIRE(pr.ok());
    for (auto model : {ir::DeviceModel::SIMT, ir::DeviceModel::MIMD}) {
        ir::DeviceDesc desc = testsup::test_desc(model);
        auto prog = lower_module(pr.module, desc, make_cfg(model));
        auto dev = model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                  : device::make_mimd_device(desc);
        LaunchSpec spec;
        spec.program = prog;
        spec.block = {1, 1, 1};
        spec.args = {desc.global_mem_bytes + 128};
        dev->launch(spec);
        try {
            dev->run_until_quiescent();
            FAIL("expected an out-of-bounds fault");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Fault);
            CHECK(std::string(e.what()).find("out of bounds") != std::string::npos);
        }
    }
}

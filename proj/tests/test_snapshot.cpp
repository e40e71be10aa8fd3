// State capture and migration: blob wire-format integrity, checkpoint
// contents against the liveness tables, restore onto fresh processes and
// foreign devices, and exit-state preservation across migrations.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "corpus.h"
#include "genmod.h"
#include "hetgpu/error.h"
#include "hetgpu/lowering.h"
#include "hetgpu/runtime.h"
#include "hetgpu/snapshot.h"

using namespace hetgpu;
using rt::ArgValue;
using rt::LaunchOptions;
using rt::Runtime;
using rt::VirtualPointer;
using snapshot::StateBlob;
using testsup::CorpusCase;

namespace {

// Patches the trailing FNV checksum so structural edits stay "authentic".
void fix_checksum(std::vector<uint8_t>& bytes) {
    uint64_t sum = ir::fnv1a64(bytes.data(), bytes.size() - 8);
    std::memcpy(bytes.data() + bytes.size() - 8, &sum, 8);
}

bool state_error(const std::function<void()>& f, const char* needle = nullptr) {
    try {
        f();
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::State) return false;
        return !needle || std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
}

const CorpusCase& corpus_case(const char* kernel) {
    static std::vector<CorpusCase> cases = testsup::corpus_cases(0);
    for (const auto& c : cases)
        if (c.kernel == kernel) return c;
    throw std::runtime_error("no such corpus case");
}

struct Session {
    Runtime r;
    uint32_t simt, mimd, stream;
    std::vector<VirtualPointer> vps;

    Session() {
        simt = r.register_device(testsup::test_desc(ir::DeviceModel::SIMT));
        mimd = r.register_device(testsup::test_desc(ir::DeviceModel::MIMD));
        stream = r.create_stream(simt);
    }

    // loads, uploads and launches the case, then pauses it at `site`
    void launch_paused(const CorpusCase& c, uint32_t site, LaunchOptions opts = {}) {
        r.load_module(testsup::corpus_module(c.file));
        for (const auto& b : c.buffers) {
            vps.push_back(r.het_malloc(b.size(), stream));
            r.memcpy_h2d(vps.back(), 0, b.data(), b.size(), stream);
        }
        std::vector<ArgValue> args;
        for (const auto& a : c.args)
            args.push_back(a.is_buf ? ArgValue::make_vp(vps[a.index])
                                    : ArgValue::make_scalar(a.scalar));
        opts.migration_mode = true;
        r.launch_kernel(c.kernel, c.grid, c.block, args, stream, opts);
        r.arm_pause_at_barrier_site(stream, site);
        REQUIRE(r.stream_synchronize(stream) == device::RunState::PAUSED);
    }

    std::vector<std::vector<uint8_t>> read_buffers(const CorpusCase& c) {
        std::vector<std::vector<uint8_t>> out;
        for (size_t i = 0; i < c.buffers.size(); ++i) {
            out.emplace_back(c.buffers[i].size());
            r.memcpy_d2h(out.back().data(), vps[i], 0, out.back().size(), stream);
        }
        return out;
    }
};

// A fresh process that restores `blob` onto `model` and drains the stream.
// Virtual pointer ids replay because the allocator starts from zero.
std::vector<std::vector<uint8_t>> restore_elsewhere(const StateBlob& blob,
                                                    const CorpusCase& c,
                                                    ir::DeviceModel model,
                                                    std::vector<std::string>* dev_events
                                                    = nullptr) {
    Runtime r;
    uint32_t dev = r.register_device(testsup::test_desc(model));
    r.load_module(testsup::corpus_module(c.file));
    uint32_t st = r.create_stream(dev);
    r.restore(blob, dev, st);
    if (r.stream_synchronize(st) != device::RunState::COMPLETED)
        throw std::runtime_error("restored kernel did not finish");
    if (dev_events) *dev_events = r.device(dev).events();
    std::vector<std::vector<uint8_t>> out;
    for (size_t i = 0; i < c.buffers.size(); ++i) {
        out.emplace_back(c.buffers[i].size());
        r.memcpy_d2h(out.back().data(), VirtualPointer{i}, 0, out.back().size(), st);
    }
    return out;
}

}  // namespace

TEST_CASE("random blobs survive serialization round trips bit-exactly") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        StateBlob b = testsup::random_blob(seed);
        auto bytes = snapshot::serialize(b);
        StateBlob back = snapshot::deserialize(bytes);
        REQUIRE(back == b);
        REQUIRE(snapshot::serialize(back) == bytes);
    }
}

TEST_CASE("every single-bit corruption is rejected") {
    testsup::Rng rng(0x5eedb10b);
    for (uint64_t seed = 0; seed < 150; ++seed) {
        auto bytes = snapshot::serialize(testsup::random_blob(seed));
        for (int hit = 0; hit < 3; ++hit) {
            auto bad = bytes;
            size_t bit = rng.next() % (bad.size() * 8);
            bad[bit / 8] ^= uint8_t(1u << (bit % 8));
            REQUIRE(state_error([&] { snapshot::deserialize(bad); }));
        }
        // truncations of any length are rejected too
        auto cut = bytes;
        cut.resize(bytes.size() / 2);
        CHECK(state_error([&] { snapshot::deserialize(cut); }));
        cut.resize(4);
        CHECK(state_error([&] { snapshot::deserialize(cut); }, "too short"));
    }
}

TEST_CASE("structural damage is reported precisely") {
    auto bytes = snapshot::serialize(testsup::random_blob(7));

    auto bad = bytes;
    bad[0] = 'X';
    fix_checksum(bad);
    CHECK(state_error([&] { snapshot::deserialize(bad); }, "magic is not HGPB"));

    bad = bytes;
    bad[4] = 9;  // version field
    fix_checksum(bad);
    CHECK(state_error([&] { snapshot::deserialize(bad); }, "not supported"));

    // cutting the payload but re-signing it exposes the structural reader
    bad = bytes;
    bad.resize(bytes.size() - 24);
    bad.resize(bad.size() + 8);
    fix_checksum(bad);
    CHECK(state_error([&] { snapshot::deserialize(bad); }, "unexpected end"));

    // extra payload before the checksum
    bad = bytes;
    bad.insert(bad.end() - 8, uint8_t(0));
    fix_checksum(bad);
    CHECK(state_error([&] { snapshot::deserialize(bad); }, "trailing bytes"));

    // a memory section that is not ascending never serializes from the
    // runtime, but a hostile blob could carry one
    StateBlob twisted = testsup::random_blob(3);
    twisted.memory.clear();
    twisted.memory.push_back({2, {1, 2, 3}});
    twisted.memory.push_back({1, {4}});
    CHECK(state_error([&] { snapshot::deserialize(snapshot::serialize(twisted)); },
                      "ascending vp order"));
}

TEST_CASE("a checkpoint captures exactly the live registers and shared state") {
    const CorpusCase& c = corpus_case("matmul");
    Session s;
    s.launch_paused(c, 1);
    StateBlob blob = s.r.checkpoint(s.stream);

    CHECK(blob.kernel == "matmul");
    CHECK(blob.grid == c.grid);
    CHECK(blob.block == c.block);
    CHECK(blob.args.size() == c.args.size());
    CHECK(blob.module_id == testsup::corpus_module(c.file).module_id);
    CHECK(blob.migration_mode);
    CHECK(blob.segment_x == 0);

    uint32_t blocks = c.grid[0] * c.grid[1] * c.grid[2];
    uint32_t threads = c.block[0] * c.block[1] * c.block[2];
    REQUIRE(blob.dumps.size() == blocks);

    // the layout must agree with an independently computed liveness table
    const ir::Module& mod = testsup::corpus_module(c.file);
    const ir::Kernel* k = nullptr;
    for (const auto& kk : mod.kernels)
        if (kk.name == c.kernel) k = &kk;
    REQUIRE(k != nullptr);
    auto live = lowering::compute_liveness(*k, lowering::assign_resume_points(*k));

    std::vector<bool> seen(blocks, false);
    for (const auto& d : blob.dumps) {
        CHECK(d.resume_point_id == 1);
        CHECK(d.thread_count == threads);
        REQUIRE(d.block_index < blocks);
        seen[d.block_index] = true;
        const auto& expect = live.at(d.resume_point_id);
        REQUIRE(d.reg_layout.size() == expect.size());
        for (size_t i = 0; i < expect.size(); ++i) {
            CHECK(d.reg_layout[i].id == expect[i].id);
            CHECK(d.reg_layout[i].type == uint8_t(expect[i].type));
        }
        CHECK(d.values.size() == size_t(threads) * d.reg_layout.size());
        CHECK(d.shared.size() == k->shared_mem_bytes);
        CHECK(d.exited.size() == (threads + 7) / 8);
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

    REQUIRE(blob.memory.size() == c.buffers.size());
    for (size_t i = 0; i < blob.memory.size(); ++i) {
        CHECK(blob.memory[i].vp_id == i);
        CHECK(blob.memory[i].bytes.size() == c.buffers[i].size());
    }

    // the wire format reproduces it and the summary names the kernel
    CHECK(snapshot::deserialize(snapshot::serialize(blob)) == blob);
    CHECK(snapshot::inspect(blob).find("matmul") != std::string::npos);

    // the blob restores onto a fresh process, on either device model
    auto expected = testsup::cpu_reference(c);
    CHECK(restore_elsewhere(blob, c, ir::DeviceModel::SIMT) == expected);

    std::vector<std::string> ev;
    LaunchOptions multi;
    CHECK(restore_elsewhere(blob, c, ir::DeviceModel::MIMD, &ev) == expected);
    bool staged = false, vmask = false;
    for (const auto& e : ev) {
        if (e.rfind("resume.stage", 0) == 0 && e.find("via=dma") != std::string::npos)
            staged = true;
        if (e.rfind("vmask.restore", 0) == 0) vmask = true;
    }
    CHECK(staged);
    CHECK(vmask);  // site 1 sits inside the tile loop, so masks were rebuilt
}

TEST_CASE("a completed kernel checkpoints to a full-completion blob") {
    auto c = testsup::case_atomic_add_one();
    Session s;
    s.r.load_module(testsup::corpus_module(c.file));
    auto vp = s.r.het_malloc(4, s.stream);
    uint32_t zero = 0;
    s.r.memcpy_h2d(vp, 0, &zero, 4, s.stream);
    s.r.launch_kernel(c.kernel, c.grid, c.block, {ArgValue::make_vp(vp)}, s.stream);
    REQUIRE(s.r.stream_synchronize(s.stream) == device::RunState::COMPLETED);

    StateBlob blob = s.r.checkpoint(s.stream);
    CHECK(blob.dumps.empty());
    uint32_t blocks = c.grid[0];
    REQUIRE(blob.completed.size() == (blocks + 7) / 8);
    for (uint32_t b = 0; b < blocks; ++b) CHECK(device::dump_bit(blob.completed, b));
    REQUIRE(blob.memory.size() == 1);
    uint32_t ctr = 0;
    std::memcpy(&ctr, blob.memory[0].bytes.data(), 4);
    CHECK(ctr == 256);

    // restoring it is a no-op launch-wise but still lands the memory image
    Runtime fresh;
    uint32_t dev = fresh.register_device(testsup::test_desc(ir::DeviceModel::MIMD));
    uint32_t st = fresh.create_stream(dev);
    fresh.restore(blob, dev, st);
    CHECK(fresh.stream_synchronize(st) == device::RunState::COMPLETED);
    bool noop = false;
    for (const auto& e : fresh.events())
        if (e.rfind("restore.noop", 0) == 0) noop = true;
    CHECK(noop);
    uint32_t landed = 0;
    fresh.memcpy_d2h(&landed, VirtualPointer{0}, 0, 4, st);
    CHECK(landed == 256);
}

TEST_CASE("restore refuses blobs that do not match the process") {
    const CorpusCase& c = corpus_case("scan");
    Session s;
    s.launch_paused(c, 1);
    StateBlob blob = s.r.checkpoint(s.stream);

    // process that never loaded the module
    Runtime other;
    uint32_t dev = other.register_device(testsup::test_desc(ir::DeviceModel::SIMT));
    other.load_module(testsup::corpus_module("vecadd.hir"));
    uint32_t st = other.create_stream(dev);
    CHECK(state_error([&] { other.restore(blob, dev, st); },
                      "no loaded module matches the blob's module id"));

    // resume point that the target lowering does not know
    StateBlob bad = blob;
    bad.dumps[0].resume_point_id = 99;
    CHECK(state_error([&] { s.r.restore(bad, s.simt, s.stream); },
                      "resume point 99 does not exist"));

    // register count that disagrees with the liveness table
    bad = blob;
    bad.dumps[0].reg_layout.pop_back();
    CHECK(state_error([&] { s.r.restore(bad, s.simt, s.stream); },
                      "registers per thread"));

    // right count, wrong slot
    bad = blob;
    REQUIRE(bad.dumps[0].reg_layout.size() >= 2);
    std::swap(bad.dumps[0].reg_layout[0], bad.dumps[0].reg_layout[1]);
    CHECK(state_error([&] { s.r.restore(bad, s.simt, s.stream); },
                      "does not match the liveness table at slot"));

    // memory image whose size disagrees with the live allocation
    bad = blob;
    bad.memory[0].bytes.resize(bad.memory[0].bytes.size() + 4);
    CHECK(state_error([&] { s.r.restore(bad, s.simt, s.stream); }, "blob carries"));

    // a blob whose pointer ids cannot replay onto a fresh allocator
    StateBlob orphan;
    orphan.memory.push_back({5, std::vector<uint8_t>(16, 0)});
    Runtime blank;
    uint32_t bdev = blank.register_device(testsup::test_desc(ir::DeviceModel::SIMT));
    uint32_t bst = blank.create_stream(bdev);
    CHECK(state_error([&] { blank.restore(orphan, bdev, bst); }, "do not replay"));

    // the original, untampered blob still restores fine afterwards
    s.r.restore(blob, s.simt, s.stream);
    CHECK(s.r.stream_synchronize(s.stream) == device::RunState::COMPLETED);
    CHECK(s.read_buffers(c) == testsup::cpu_reference(c));
}

TEST_CASE("migration preserves results in every direction") {
    const CorpusCase& c = corpus_case("scan");
    auto simt = testsup::simt_target();
    auto multi = testsup::mimd_target(lowering::MimdStrategy::MULTI_CORE);
    auto plain = testsup::run_case(c, simt);

    for (uint32_t site : {1u, 2u}) {
        CHECK(testsup::run_case_migrated(c, simt, {multi}, site).buffers == plain.buffers);
        CHECK(testsup::run_case_migrated(c, multi, {simt}, site).buffers == plain.buffers);
        CHECK(testsup::run_case_migrated(c, simt, {simt}, site).buffers == plain.buffers);
        CHECK(testsup::run_case_migrated(c, multi, {multi}, site).buffers == plain.buffers);
    }
    // two hops: out and back
    CHECK(testsup::run_case_migrated(c, simt, {multi, simt}, 1).buffers == plain.buffers);
}

TEST_CASE("threads that exited before the pause stay exited") {
    auto c = testsup::case_partial_barrier(0);
    Session s;
    s.launch_paused(c, 1);
    StateBlob blob = s.r.checkpoint(s.stream);

    REQUIRE(blob.dumps.size() == 2);
    for (const auto& d : blob.dumps) {
        REQUIRE(d.thread_count == 32);
        for (uint32_t t = 0; t < 32; ++t)
            CHECK(device::dump_bit(d.exited, t) == (t >= 16));
        // departed threads still occupy their register slots
        CHECK(d.values.size() == 32 * d.reg_layout.size());
    }

    auto expected = testsup::cpu_reference(c);
    CHECK(restore_elsewhere(blob, c, ir::DeviceModel::MIMD) == expected);

    // the harness path agrees in both directions
    auto simt = testsup::simt_target();
    auto multi = testsup::mimd_target(lowering::MimdStrategy::MULTI_CORE);
    CHECK(testsup::run_case_migrated(c, simt, {multi}, 1).buffers == expected);
    CHECK(testsup::run_case_migrated(c, multi, {simt}, 1).buffers == expected);
}

TEST_CASE("segment barriers give long loops a place to pause") {
    auto c = testsup::case_loop_accum(100);
    Session s;
    LaunchOptions opts;
    opts.segment_x = 10;
    s.launch_paused(c, 1, opts);
    StateBlob blob = s.r.checkpoint(s.stream);
    CHECK(blob.segment_x == 10);
    REQUIRE(blob.dumps.size() == 1);
    CHECK(blob.dumps[0].resume_point_id == 1);

    // resuming in place finishes the loop with nothing lost
    s.r.restore(blob, s.simt, s.stream);
    REQUIRE(s.r.stream_synchronize(s.stream) == device::RunState::COMPLETED);
    CHECK(s.read_buffers(c) == testsup::cpu_reference(c));

    // the blob also replays on the other device model, which relowers with
    // the recorded segment interval so resume site 1 exists there
    CHECK(restore_elsewhere(blob, c, ir::DeviceModel::MIMD)
          == testsup::cpu_reference(c));
}

TEST_CASE("gang dumps restore with thread order preserved") {
    // scan's shared-memory indexing is thread-position sensitive: any
    // permutation of per-thread registers or shared slots corrupts the result
    const CorpusCase& c = corpus_case("scan");
    auto expected = testsup::run_case(c, testsup::simt_target()).buffers;
    auto multi8 = testsup::mimd_target(lowering::MimdStrategy::MULTI_CORE, 8);
    auto simt = testsup::simt_target();
    for (uint32_t site : {1u, 2u, 3u}) {
        CHECK(testsup::run_case_migrated(c, multi8, {simt}, site).buffers == expected);
        CHECK(testsup::run_case_migrated(c, simt, {multi8}, site).buffers == expected);
    }
}

#include "hetgpu/runtime.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include "hetgpu/error.h"

namespace hetgpu {

const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Lowering: return "lowering";
        case ErrorKind::Launch: return "launch";
        case ErrorKind::Fault: return "fault";
        case ErrorKind::OOM: return "out-of-memory";
        case ErrorKind::Protocol: return "protocol";
        case ErrorKind::State: return "state";
    }
    return "?";
}

}  // namespace hetgpu

namespace hetgpu::rt {

using device::RunState;

// ---- env hints ---------------------------------------------------------------

void apply_env_hints(LaunchOptions& opts) {
    if (!opts.strategy) {
        if (const char* s = std::getenv("HETGPU_STRATEGY")) {
            lowering::MimdStrategy st;
            if (!lowering::strategy_from_string(s, &st))
                fail(ErrorKind::Validation,
                     std::string("HETGPU_STRATEGY has unknown value '") + s + "'");
            opts.strategy = st;
        }
    }
    if (!opts.segment_x) {
        if (const char* s = std::getenv("HETGPU_SEGMENT_X")) {
            char* end = nullptr;
            unsigned long v = std::strtoul(s, &end, 10);
            if (!end || *end != '\0')
                fail(ErrorKind::Validation,
                     std::string("HETGPU_SEGMENT_X is not an integer: '") + s + "'");
            opts.segment_x = uint32_t(v);
        }
    }
}

// ---- translation cache --------------------------------------------------------

std::shared_ptr<const lowering::DeviceProgram> TranslationCache::get(
    const ir::Module& mod, const std::string& kernel, const ir::DeviceDesc& desc,
    const lowering::LoweringConfig& cfg) {
    std::string key = ir::module_id_hex(mod.module_id) + "/" + kernel + "/" +
                      cfg.fingerprint() + "/w" + std::to_string(desc.warp_width) + ":l" +
                      std::to_string(desc.lane_count) + ":c" + std::to_string(desc.core_count);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
        hits_++;
        return it->second;
    }
    misses_++;
    const ir::Kernel* k = nullptr;
    for (const auto& kn : mod.kernels)
        if (kn.name == kernel) k = &kn;
    if (!k) fail(ErrorKind::Validation, "module has no kernel named '" + kernel + "'");
    auto prog = std::make_shared<lowering::DeviceProgram>(
        cfg.model == ir::DeviceModel::SIMT
            ? lowering::lower_for_simt(*k, mod.module_id, desc, cfg)
            : lowering::lower_for_mimd(*k, mod.module_id, desc, cfg));
    entries_.emplace(std::move(key), prog);
    return prog;
}

// ---- registry ------------------------------------------------------------------

uint32_t Runtime::register_device(const ir::DeviceDesc& desc) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    devices_.push_back(desc.model == ir::DeviceModel::SIMT ? device::make_simt_device(desc)
                                                           : device::make_mimd_device(desc));
    descs_.push_back(desc);
    return uint32_t(devices_.size() - 1);
}

size_t Runtime::device_count() const {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    return devices_.size();
}

const ir::DeviceDesc& Runtime::device_desc(uint32_t id) const {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (id >= descs_.size()) fail(ErrorKind::Protocol, "no such device");
    return descs_[id];
}

device::Device& Runtime::device(uint32_t id) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (id >= devices_.size()) fail(ErrorKind::Protocol, "no such device");
    return *devices_[id];
}

void Runtime::load_module(const ir::Module& mod) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    ir::validate(mod);
    for (const auto& m : modules_)
        if (m.module_id == mod.module_id) return;  // already loaded
    modules_.push_back(mod);
}

const ir::Module* Runtime::module_by_id(const std::array<uint8_t, 8>& id) const {
    for (const auto& m : modules_)
        if (m.module_id == id) return &m;
    return nullptr;
}

// ---- streams ----------------------------------------------------------------------

uint32_t Runtime::create_stream(uint32_t device_id) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (devices_.empty()) fail(ErrorKind::Protocol, "no device registered");
    if (device_id >= devices_.size()) fail(ErrorKind::Protocol, "no such device");
    StreamState s;
    s.id = uint32_t(streams_.size());
    s.device = device_id;
    streams_.push_back(std::move(s));
    return streams_.back().id;
}

uint32_t Runtime::stream_device(uint32_t stream) const {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (stream >= streams_.size()) fail(ErrorKind::Protocol, "no such stream");
    return streams_[stream].device;
}

Runtime::StreamState& Runtime::stream_at(uint32_t id) {
    if (id >= streams_.size()) fail(ErrorKind::Protocol, "no such stream");
    return streams_[id];
}

// ---- memory -------------------------------------------------------------------------

Runtime::VpInfo& Runtime::vp_at(uint64_t id) {
    auto it = vps_.find(id);
    if (it == vps_.end()) fail(ErrorKind::Protocol, "unknown virtual pointer");
    return it->second;
}

const Runtime::VpInfo& Runtime::vp_at(uint64_t id) const {
    auto it = vps_.find(id);
    if (it == vps_.end()) fail(ErrorKind::Protocol, "unknown virtual pointer");
    return it->second;
}

VirtualPointer Runtime::het_malloc(uint64_t size, uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (size == 0) fail(ErrorKind::Validation, "het_malloc of zero bytes");
    StreamState& s = stream_at(stream);
    uint64_t base = (heap_next_ + 255) & ~uint64_t(255);
    if (base + size > devices_[s.device]->global_mem_bytes())
        fail(ErrorKind::OOM, "device memory exhausted: need " + std::to_string(base + size) +
                                 " bytes, device has " +
                                 std::to_string(devices_[s.device]->global_mem_bytes()));
    VpInfo vp;
    vp.id = next_vp_++;
    vp.size = size;
    vp.base = base;
    vp.mirror.assign(size, 0);
    heap_next_ = base + size;
    uint64_t id = vp.id;
    vps_.emplace(id, std::move(vp));
    ensure_backing(vps_.at(id), s.device);
    return VirtualPointer{id};
}

uint64_t Runtime::vp_size(VirtualPointer p) const {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    return vp_at(p.id).size;
}

uint64_t Runtime::vp_offset(VirtualPointer p) const {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    return vp_at(p.id).base;
}

Runtime::VpInfo& Runtime::materialize_vp(uint64_t id, uint64_t size) {
    auto it = vps_.find(id);
    if (it != vps_.end()) {
        if (it->second.size != size)
            fail(ErrorKind::State, "blob carries " + std::to_string(size) +
                                       " bytes for virtual pointer " + std::to_string(id) +
                                       ", which has " + std::to_string(it->second.size));
        return it->second;
    }
    if (id != next_vp_)
        fail(ErrorKind::State,
             "blob virtual pointer ids do not replay onto this process (expected " +
                 std::to_string(next_vp_) + ", blob has " + std::to_string(id) + ")");
    VpInfo vp;
    vp.id = next_vp_++;
    vp.size = size;
    vp.base = (heap_next_ + 255) & ~uint64_t(255);
    vp.mirror.assign(size, 0);
    heap_next_ = vp.base + size;
    return vps_.emplace(vp.id, std::move(vp)).first->second;
}

void Runtime::ensure_backing(VpInfo& vp, uint32_t device_id) {
    if (vp.base + vp.size > devices_[device_id]->global_mem_bytes())
        fail(ErrorKind::OOM, "allocation does not fit on device " + std::to_string(device_id));
    if (vp.backed.size() <= device_id) vp.backed.resize(device_id + 1, 0);
    vp.backed[device_id] = 1;
    devices_[device_id]->write_global(vp.base, vp.mirror.data(), vp.size);
}

void Runtime::writeback_device(uint32_t device_id) {
    for (auto& [id, vp] : vps_)
        if (device_id < vp.backed.size() && vp.backed[device_id])
            devices_[device_id]->read_global(vp.base, vp.mirror.data(), vp.size);
}

void Runtime::memcpy_h2d(VirtualPointer dst, uint64_t dst_off, const void* src, uint64_t n,
                         uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    StreamState& s = stream_at(stream);
    drain(s);
    VpInfo& vp = vp_at(dst.id);
    if (dst_off > vp.size || n > vp.size - dst_off)
        fail(ErrorKind::Validation, "copy of " + std::to_string(n) +
                                        " bytes overruns the allocation of " +
                                        std::to_string(vp.size));
    std::memcpy(vp.mirror.data() + dst_off, src, n);
    ensure_backing(vp, s.device);
}

void Runtime::memcpy_d2h(void* dst, VirtualPointer src, uint64_t src_off, uint64_t n,
                         uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    StreamState& s = stream_at(stream);
    drain(s);
    writeback_device(s.device);
    VpInfo& vp = vp_at(src.id);
    if (src_off > vp.size || n > vp.size - src_off)
        fail(ErrorKind::Validation, "copy of " + std::to_string(n) +
                                        " bytes overruns the allocation of " +
                                        std::to_string(vp.size));
    std::memcpy(dst, vp.mirror.data() + src_off, n);
}

void Runtime::memcpy_d2d(VirtualPointer dst, uint64_t dst_off, VirtualPointer src,
                         uint64_t src_off, uint64_t n, uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    StreamState& s = stream_at(stream);
    drain(s);
    writeback_device(s.device);
    VpInfo& dvp = vp_at(dst.id);
    VpInfo& svp = vp_at(src.id);
    if (dst_off > dvp.size || n > dvp.size - dst_off || src_off > svp.size ||
        n > svp.size - src_off)
        fail(ErrorKind::Validation, "device copy overruns an allocation");
    if (dst.id == src.id) {
        uint64_t lo = std::min(dst_off, src_off), hi = std::max(dst_off, src_off);
        if (lo + n > hi)
            fail(ErrorKind::Validation,
                 "overlapping device-to-device copy within one allocation");
    }
    std::memcpy(dvp.mirror.data() + dst_off, svp.mirror.data() + src_off, n);
    ensure_backing(dvp, s.device);
}

// ---- execution ------------------------------------------------------------------------

lowering::LoweringConfig Runtime::build_config(uint32_t device_id,
                                               const LaunchOptions& opts) const {
    lowering::LoweringConfig cfg;
    cfg.model = descs_[device_id].model;
    if (cfg.model == ir::DeviceModel::MIMD)
        cfg.strategy = opts.strategy.value_or(lowering::MimdStrategy::MULTI_CORE);
    cfg.partition_width = opts.partition_width;
    cfg.segment_interval_x = opts.segment_x.value_or(0);
    cfg.migration_mode = opts.migration_mode;
    return cfg;
}

uint64_t Runtime::resolve_arg_slot(const ir::Param& param, const ArgValue& a) {
    if (a.kind == ArgValue::Kind::VP)
        return ir::canonical_bits(param.reg.type, vp_at(a.vp.id).base);
    return ir::canonical_bits(param.reg.type, a.scalar);
}

RunState Runtime::drain(StreamState& s) {
    if (!s.fly.active) return RunState::COMPLETED;
    device::Device& dev = *devices_[s.device];
    RunState st = dev.state() == RunState::RUNNING ? dev.run_until_quiescent() : dev.state();
    writeback_device(s.device);
    if (st == RunState::COMPLETED) s.fly.active = false;
    return st;
}

void Runtime::require_idle(StreamState& s) {
    if (drain(s) == RunState::PAUSED)
        fail(ErrorKind::Protocol,
             "stream " + std::to_string(s.id) + " holds a paused kernel; checkpoint or "
             "restore it before queueing more work");
}

void Runtime::launch_kernel(const std::string& kernel, std::array<uint32_t, 3> grid,
                            std::array<uint32_t, 3> block, const std::vector<ArgValue>& args,
                            uint32_t stream, const LaunchOptions& opts_in) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    StreamState& s = stream_at(stream);
    require_idle(s);
    LaunchOptions opts = opts_in;
    apply_env_hints(opts);
    const ir::Module* mod = nullptr;
    for (const auto& m : modules_)
        for (const auto& k : m.kernels)
            if (k.name == kernel) mod = &m;
    if (!mod) fail(ErrorKind::Validation, "no loaded module has a kernel named '" + kernel + "'");
    lowering::LoweringConfig cfg = build_config(s.device, opts);
    auto prog = cache_.get(*mod, kernel, descs_[s.device], cfg);

    device::LaunchSpec spec;
    spec.program = prog;
    spec.grid = grid;
    spec.block = block;
    spec.sched_seed = opts.sched_seed;
    if (args.size() != prog->kernel.params.size())
        fail(ErrorKind::Validation,
             "kernel '" + kernel + "' takes " + std::to_string(prog->kernel.params.size()) +
                 " arguments, got " + std::to_string(args.size()));
    s.fly.args.clear();
    for (size_t i = 0; i < args.size(); ++i) {
        spec.args.push_back(resolve_arg_slot(prog->kernel.params[i], args[i]));
        if (args[i].kind == ArgValue::Kind::VP) {
            ensure_backing(vp_at(args[i].vp.id), s.device);
            s.fly.args.push_back({1, args[i].vp.id});
        } else {
            s.fly.args.push_back({0, spec.args.back()});
        }
    }
    devices_[s.device]->launch(spec);
    s.fly.active = true;
    s.fly.kernel = kernel;
    s.fly.module_id = mod->module_id;
    s.fly.grid = grid;
    s.fly.block = block;
    s.fly.program = prog;
    s.fly.sched_seed = opts.sched_seed;
    s.fly.segment_x = cfg.segment_interval_x;
    s.fly.migration_mode = cfg.migration_mode;
}

RunState Runtime::stream_synchronize(uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    return drain(stream_at(stream));
}

void Runtime::device_synchronize() {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    for (auto& s : streams_) drain(s);
}

void Runtime::arm_pause_after_instructions(uint32_t stream, uint64_t n) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    devices_[stream_at(stream).device]->arm_pause_after(n);
}

void Runtime::arm_pause_at_barrier_site(uint32_t stream, uint32_t site) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    devices_[stream_at(stream).device]->arm_pause_at_site(site);
}

// ---- checkpoint / restore / migrate ------------------------------------------------

snapshot::StateBlob Runtime::checkpoint(uint32_t stream) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    return checkpoint_locked(stream_at(stream));
}

snapshot::StateBlob Runtime::checkpoint_locked(StreamState& s) {
    device::Device& dev = *devices_[s.device];
    events_.push_back("checkpoint.phase1.quiesce stream=" + std::to_string(s.id));
    RunState st = RunState::COMPLETED;
    if (s.fly.active) {
        if (dev.state() == RunState::RUNNING) dev.set_pause_flag();
        st = drain(s);
    }
    events_.push_back("checkpoint.phase2.capture stream=" + std::to_string(s.id));
    writeback_device(s.device);

    snapshot::StateBlob blob;
    uint32_t blocks = 1;
    if (s.fly.active || !s.fly.kernel.empty()) {
        blob.module_id = s.fly.module_id;
        blob.kernel = s.fly.kernel;
        blob.grid = s.fly.grid;
        blob.block = s.fly.block;
        blob.args = s.fly.args;
        blob.segment_x = s.fly.segment_x;
        blob.migration_mode = s.fly.migration_mode;
        blob.sched_seed = s.fly.sched_seed;
        blocks = s.fly.grid[0] * s.fly.grid[1] * s.fly.grid[2];
    }
    if (st == RunState::PAUSED && s.fly.active) {
        const auto& prog = *s.fly.program;
        blob.completed = dev.completed_blocks();
        for (auto& d : dev.collect_block_dumps()) {
            snapshot::BlobDump bd;
            bd.block_index = d.block_index;
            bd.resume_point_id = d.resume_point_id;
            bd.thread_count = d.thread_count;
            bd.exited = std::move(d.exited);
            for (const auto& r : prog.liveness.at(d.resume_point_id))
                bd.reg_layout.push_back({r.id, uint8_t(r.type)});
            bd.values = std::move(d.registers);
            bd.shared = std::move(d.shared);
            blob.dumps.push_back(std::move(bd));
        }
    } else if (!s.fly.kernel.empty()) {
        // ran to completion: full bitmap, nothing to dump
        blob.completed.assign((blocks + 7) / 8, 0);
        for (uint32_t b = 0; b < blocks; ++b) device::set_dump_bit(blob.completed, b, true);
    }
    for (const auto& [id, vp] : vps_) {
        snapshot::MemEntry e;
        e.vp_id = id;
        e.bytes = vp.mirror;
        blob.memory.push_back(std::move(e));
    }
    return blob;
}

void Runtime::restore(const snapshot::StateBlob& blob, uint32_t device_id, uint32_t stream,
                      const LaunchOptions& opts) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    if (device_id >= devices_.size())
        fail(ErrorKind::Validation, "restore targets an unregistered device");
    restore_locked(blob, device_id, stream_at(stream), opts);
}

void Runtime::restore_locked(const snapshot::StateBlob& blob, uint32_t device_id,
                             StreamState& s, const LaunchOptions& opts) {
    for (const auto& e : blob.memory) {
        VpInfo& vp = materialize_vp(e.vp_id, e.bytes.size());
        vp.mirror = e.bytes;
        ensure_backing(vp, device_id);
    }
    s.fly.active = false;  // the source copy of the kernel is abandoned
    s.device = device_id;
    if (blob.kernel.empty()) return;

    uint32_t blocks = blob.grid[0] * blob.grid[1] * blob.grid[2];
    uint32_t done = 0;
    for (uint32_t b = 0; b < blocks; ++b)
        if (!blob.completed.empty() && device::dump_bit(blob.completed, b)) done++;
    if (blob.dumps.empty() && done == blocks) {
        events_.push_back("restore.noop stream=" + std::to_string(s.id) +
                          " (blob records full completion)");
        return;
    }

    const ir::Module* mod = module_by_id(blob.module_id);
    if (!mod)
        fail(ErrorKind::State, "no loaded module matches the blob's module id " +
                                   ir::module_id_hex(blob.module_id));
    LaunchOptions ropts = opts;
    apply_env_hints(ropts);
    ropts.segment_x = blob.segment_x;  // resume ids must replay the source lowering
    ropts.migration_mode = true;
    lowering::LoweringConfig cfg = build_config(device_id, ropts);
    auto prog = cache_.get(*mod, blob.kernel, descs_[device_id], cfg);

    std::vector<device::BlockDump> dumps;
    for (const auto& bd : blob.dumps) {
        auto lv = prog->liveness.find(bd.resume_point_id);
        if (lv == prog->liveness.end())
            fail(ErrorKind::State, "blob resume point " + std::to_string(bd.resume_point_id) +
                                       " does not exist in the target lowering");
        if (bd.reg_layout.size() != lv->second.size())
            fail(ErrorKind::State,
                 "blob stores " + std::to_string(bd.reg_layout.size()) +
                     " registers per thread, liveness table expects " +
                     std::to_string(lv->second.size()));
        for (size_t i = 0; i < lv->second.size(); ++i)
            if (bd.reg_layout[i].id != lv->second[i].id ||
                bd.reg_layout[i].type != uint8_t(lv->second[i].type))
                fail(ErrorKind::State,
                     "blob register layout does not match the liveness table at slot " +
                         std::to_string(i));
        device::BlockDump d;
        d.block_index = bd.block_index;
        d.resume_point_id = bd.resume_point_id;
        d.thread_count = bd.thread_count;
        d.exited = bd.exited;
        d.registers = bd.values;
        d.shared = bd.shared;
        dumps.push_back(std::move(d));
    }

    device::LaunchSpec spec;
    spec.program = prog;
    spec.grid = blob.grid;
    spec.block = blob.block;
    spec.sched_seed = blob.sched_seed;
    for (const auto& a : blob.args) {
        if (a.kind == 1) {
            VpInfo& vp = vp_at(a.payload);
            ensure_backing(vp, device_id);
            spec.args.push_back(vp.base);
        } else {
            spec.args.push_back(a.payload);
        }
    }
    // re-canonicalize against the param types of the target program
    for (size_t i = 0; i < spec.args.size() && i < prog->kernel.params.size(); ++i)
        spec.args[i] = ir::canonical_bits(prog->kernel.params[i].reg.type, spec.args[i]);

    devices_[device_id]->resume(spec, dumps, blob.completed);
    events_.push_back("restore.launch stream=" + std::to_string(s.id) + " device=" +
                      std::to_string(device_id) + " blocks=" +
                      std::to_string(blocks - done));
    s.fly.active = true;
    s.fly.kernel = blob.kernel;
    s.fly.module_id = blob.module_id;
    s.fly.grid = blob.grid;
    s.fly.block = blob.block;
    s.fly.args = blob.args;
    s.fly.program = prog;
    s.fly.sched_seed = blob.sched_seed;
    s.fly.segment_x = blob.segment_x;
    s.fly.migration_mode = true;
}

snapshot::MigrationReport Runtime::migrate(uint32_t stream, uint32_t target_device,
                                           const LaunchOptions& opts) {
    std::lock_guard<std::recursive_mutex> lk(mu_);
    StreamState& s = stream_at(stream);
    if (target_device >= devices_.size())
        fail(ErrorKind::Validation, "migration target device is not registered");
    snapshot::MigrationReport rep;
    const char* stage = "checkpoint";
    try {
        snapshot::StateBlob blob = checkpoint_locked(s);
        rep.dumps_captured = uint32_t(blob.dumps.size());
        for (const auto& e : blob.memory) rep.bytes_moved += e.bytes.size();
        stage = "serialize";
        std::vector<uint8_t> bytes = snapshot::serialize(blob);
        rep.blob_bytes = bytes.size();
        stage = "deserialize";
        snapshot::StateBlob replay = snapshot::deserialize(bytes);
        stage = "restore";
        restore_locked(replay, target_device, s, opts);
        rep.blocks_resumed = uint32_t(replay.dumps.size());
        rep.restore_launches = s.fly.active ? 1 : 0;
    } catch (const Error& e) {
        fail(e.kind(), std::string("migration failed at the ") + stage + " stage: " + e.what());
    }
    events_.push_back("migrate.complete stream=" + std::to_string(stream) + " target=" +
                      std::to_string(target_device) + " bytes=" +
                      std::to_string(rep.bytes_moved));
    return rep;
}

}  // namespace hetgpu::rt

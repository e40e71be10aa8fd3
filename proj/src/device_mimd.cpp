// MIMD device: a mesh of scalar/vector cores with scratchpads and a flat
// global memory. Three execution strategies map thread blocks onto cores:
//   single_core        whole block in one core's vector lanes (SIMT-like)
//   multi_core         block split across cores in lock step, divergence
//                      decisions exchanged through rendezvous cells
//   independent_thread scalar thread contexts multiplexed cooperatively
// All three run the same flattened stream the SIMT device runs; only the
// engines differ. Global loads/stores go through a DMA model that coalesces
// contiguous lane accesses; atomics serialize through a spin-lock word table.
#include <algorithm>
#include <cstring>
#include <deque>
#include <optional>
#include <sstream>

#include "grid_util.h"
#include "hetgpu/device.h"
#include "hetgpu/error.h"
#include "isa_eval.h"

namespace hetgpu::device {

namespace {

using lowering::FlatOp;
using lowering::MimdStrategy;
using ir::Opcode;
using ir::SemType;

constexpr uint32_t kLockWords = 64;
constexpr uint32_t kDivCellBytes = 16;
constexpr int kSlice = 32;
constexpr size_t kDmaLogCap = 256;

int popcount(uint64_t m) { return __builtin_popcountll(m); }

bool is_collective(Opcode op) {
    return op == Opcode::VOTE_ANY || op == Opcode::VOTE_ALL || op == Opcode::BALLOT ||
           op == Opcode::SHUFFLE;
}

struct StackEntry {
    bool is_loop = false;
    bool has_else = false;
    bool else_taken = false;
    uint64_t saved = 0;
    uint64_t else_mask = 0;
    uint32_t else_pc = 0;
    uint32_t end_pc = 0;
    uint32_t begin_pc = 0;
};

struct Ctx {
    enum class St : uint8_t { RUN, WAIT, HALT, DONE };
    enum class Wait : uint8_t { NONE, BARRIER, DIV, COLLECTIVE };
    uint32_t core = 0;
    uint32_t block = 0;
    uint32_t part = 0;          // partition index within the block
    uint32_t first_thread = 0;  // linear tid of lane 0
    uint32_t width = 1;         // lanes in this context (1 = scalar)
    uint64_t valid = 0, exited = 0, active = 0;
    uint32_t pc = 0;
    St st = St::RUN;
    Wait wait = Wait::NONE;
    uint64_t div_payload = 0;  // mask contribution parked at a DIV rendezvous
    uint32_t atom_lane = 0;
    uint8_t atom_phase = 0;
    std::vector<StackEntry> stack;
    std::vector<std::vector<uint64_t>> regs;
    std::vector<std::vector<uint8_t>> local;

    uint64_t live() const { return valid & ~exited; }
};

struct MBlock {
    uint32_t index = 0;
    bool resident = false;
    bool completed = false;
    uint32_t slot = UINT32_MAX;   // rendezvous-cell / shared-slab slot
    uint64_t shared_base = 0;     // slab offset in global memory (if slabbed)
    std::vector<uint32_t> ctxs;
    std::vector<uint32_t> cores;
    std::optional<BlockDump> pending;  // restore data for a not-yet-started block
};

struct Core {
    std::vector<uint32_t> ctxs;
    uint32_t rr = 0;  // cooperative multiplex pointer
    std::vector<uint8_t> scratch;
    bool busy = false;
};

class MimdDevice final : public Device {
  public:
    explicit MimdDevice(const ir::DeviceDesc& desc) : Device(desc) {
        if (desc.lane_count > 64)
            fail(ErrorKind::Validation, "simulated cores are limited to 64 vector lanes");
        if (desc.core_count == 0)
            fail(ErrorKind::Validation, "device needs at least one core");
    }

    void launch(const LaunchSpec& spec) override {
        pause_ = PauseControls{};
        setup(spec, nullptr, nullptr);
        state_ = RunState::RUNNING;
    }

    void resume(const LaunchSpec& spec, const std::vector<BlockDump>& dumps,
                const std::vector<uint8_t>& completed) override {
        pause_ = PauseControls{};
        setup(spec, &dumps, &completed);
        state_ = RunState::RUNNING;
    }

    RunState run_until_quiescent() override {
        if (state_ != RunState::RUNNING)
            fail(ErrorKind::Protocol, "run_until_quiescent without an in-flight launch");
        uint64_t round = 0;
        std::vector<uint32_t> order;
        while (true) {
            start_pending_blocks();
            order.clear();
            for (uint32_t c = 0; c < cores_.size(); ++c)
                if (core_runnable(c)) order.push_back(c);
            if (order.empty()) {
                if (classify_quiescence()) return state_;
                continue;
            }
            permute_order(order, spec_.sched_seed, round++);
            for (uint32_t c : order) run_core_slice(cores_[c]);
        }
    }

    RunState state() const override { return state_; }

    std::vector<BlockDump> collect_block_dumps() override {
        if (state_ != RunState::PAUSED && state_ != RunState::COMPLETED)
            fail(ErrorKind::Protocol, "block dumps are only available when paused");
        std::vector<BlockDump> dumps;
        for (auto& b : blocks_) {
            if (b.completed) continue;
            if (b.resident)
                dumps.push_back(dump_block(b));
            else if (b.pending)
                dumps.push_back(*b.pending);  // carried through untouched
            else
                dumps.push_back(synthetic_entry_dump(b.index));
        }
        return dumps;
    }

    std::vector<uint8_t> completed_blocks() const override {
        std::vector<uint8_t> bits((blocks_.size() + 7) / 8, 0);
        for (const auto& b : blocks_)
            if (b.completed) set_dump_bit(bits, b.index, true);
        return bits;
    }

  private:
    LaunchSpec spec_;
    const lowering::DeviceProgram* prog_ = nullptr;
    GridGeom geom_;
    MimdStrategy strat_ = MimdStrategy::SINGLE_CORE;
    uint32_t reg_count_ = 0;
    uint32_t pw_ = 1;         // partition width (lanes per context)
    uint32_t cpb_ = 1;        // cores (= contexts) per block
    bool slabbed_shared_ = false;
    uint64_t control_base_ = 0;  // user global space ends here
    uint64_t lock_base_ = 0;
    uint64_t div_base_ = 0;
    uint64_t slab_base_ = 0;
    uint32_t slots_ = 1;
    std::vector<Ctx> ctxs_;
    std::vector<MBlock> blocks_;
    std::vector<Core> cores_;
    std::vector<uint32_t> free_cores_;  // ascending
    std::vector<uint32_t> free_slots_;
    std::deque<uint32_t> pending_;
    size_t dma_log_lines_ = 0;
    RunState state_ = RunState::IDLE;

    // ---- launch -----------------------------------------------------------

    void setup(const LaunchSpec& spec, const std::vector<BlockDump>* dumps,
               const std::vector<uint8_t>* completed) {
        validate_launch_common(spec, ir::DeviceModel::MIMD);
        spec_ = spec;
        prog_ = spec.program.get();
        strat_ = prog_->strategy;
        geom_ = GridGeom{spec.grid, spec.block};
        reg_count_ = max_register_count(prog_->kernel);
        uint32_t T = geom_.threads_per_block();
        pw_ = prog_->config_used.partition_width;
        switch (strat_) {
            case MimdStrategy::SINGLE_CORE:
                if (T > desc_.lane_count)
                    fail(ErrorKind::Lowering,
                         "block of " + std::to_string(T) + " threads cannot run on one core's " +
                             std::to_string(desc_.lane_count) +
                             " lanes; use the multi_core strategy");
                pw_ = desc_.lane_count;
                cpb_ = 1;
                slabbed_shared_ = false;
                break;
            case MimdStrategy::MULTI_CORE:
                if (T % pw_ != 0)
                    fail(ErrorKind::Lowering,
                         "block size " + std::to_string(T) +
                             " is not divisible by partition width " + std::to_string(pw_));
                cpb_ = T / pw_;
                slabbed_shared_ = true;
                break;
            case MimdStrategy::INDEPENDENT_THREAD:
                cpb_ = (T + pw_ - 1) / pw_;
                slabbed_shared_ = true;
                break;
        }
        if (cpb_ > desc_.core_count)
            fail(ErrorKind::Lowering, "one block needs " + std::to_string(cpb_) +
                                          " cores but the device has " +
                                          std::to_string(desc_.core_count));
        uint32_t blocks = geom_.blocks();
        bool multi_wave = uint64_t(blocks) * cpb_ > desc_.core_count;
        if (multi_wave && program_has_global_barrier())
            fail(ErrorKind::Launch,
                 "kernel uses a device-wide barrier, which needs every block resident: grid "
                 "wants " +
                     std::to_string(uint64_t(blocks) * cpb_) + " cores, device has " +
                     std::to_string(desc_.core_count));

        slots_ = std::min(blocks, desc_.core_count / cpb_);
        carve_control_region();

        cores_.assign(desc_.core_count, {});
        for (auto& c : cores_) c.scratch.assign(desc_.scratchpad_bytes, 0);
        free_cores_.clear();
        for (uint32_t c = 0; c < desc_.core_count; ++c) free_cores_.push_back(c);
        free_slots_.clear();
        for (uint32_t s = 0; s < slots_; ++s) free_slots_.push_back(s);
        ctxs_.clear();
        blocks_.assign(blocks, {});
        pending_.clear();
        div_logs_.assign(desc_.core_count, {});
        dma_log_lines_ = 0;
        for (uint32_t b = 0; b < blocks; ++b) {
            blocks_[b].index = b;
            if (completed && dump_bit(*completed, b)) {
                blocks_[b].completed = true;
                continue;
            }
            pending_.push_back(b);
        }
        if (dumps)
            for (const auto& d : *dumps) {
                if (d.block_index >= blocks)
                    fail(ErrorKind::State, "dump names block " + std::to_string(d.block_index) +
                                               " outside the launch grid");
                check_dump_shape(d);
                blocks_[d.block_index].pending = d;
            }
        start_pending_blocks();
    }

    bool program_has_global_barrier() const {
        for (const auto& op : prog_->flat.ops)
            if (op.k == FlatOp::K::BAR && op.inst.opcode == Opcode::BAR_GLOBAL) return true;
        return false;
    }

    void carve_control_region() {
        uint64_t top = mem_.size();
        uint64_t shared = prog_->kernel.shared_mem_bytes;
        uint64_t slab_total = slabbed_shared_ && shared ? uint64_t(slots_) * shared : 0;
        uint64_t div_total =
            strat_ == MimdStrategy::MULTI_CORE
                ? uint64_t(slots_) * prog_->flat.divergence_sites * kDivCellBytes
                : 0;
        uint64_t lock_total = kLockWords * 4;
        uint64_t total = slab_total + div_total + lock_total;
        if (total >= mem_.size())
            fail(ErrorKind::OOM, "launch control region (" + std::to_string(total) +
                                     " bytes) does not fit in device memory");
        lock_base_ = top - lock_total;
        div_base_ = lock_base_ - div_total;
        slab_base_ = div_base_ - slab_total;
        control_base_ = slab_base_;
        std::memset(mem_.data() + control_base_, 0, size_t(total));
    }

    void check_dump_shape(const BlockDump& d) {
        if (d.thread_count != geom_.threads_per_block())
            fail(ErrorKind::State, "dump thread count does not match the launch geometry");
        auto lv = prog_->liveness.find(d.resume_point_id);
        if (prog_->flat.resume_pc.find(d.resume_point_id) == prog_->flat.resume_pc.end() ||
            lv == prog_->liveness.end())
            fail(ErrorKind::State, "dump resume point " + std::to_string(d.resume_point_id) +
                                       " does not exist in this lowering");
        if (d.registers.size() != size_t(d.thread_count) * lv->second.size())
            fail(ErrorKind::State, "dump register payload does not match the liveness table");
        if (d.shared.size() != prog_->kernel.shared_mem_bytes)
            fail(ErrorKind::State, "dump shared memory size does not match the kernel");
    }

    void start_pending_blocks() {
        while (!pending_.empty() && free_cores_.size() >= cpb_) {
            uint32_t b = pending_.front();
            pending_.pop_front();
            start_block(blocks_[b]);
        }
    }

    void start_block(MBlock& b) {
        uint32_t T = geom_.threads_per_block();
        b.resident = true;
        b.cores.assign(free_cores_.begin(), free_cores_.begin() + cpb_);
        free_cores_.erase(free_cores_.begin(), free_cores_.begin() + cpb_);
        if (!free_slots_.empty()) {
            b.slot = free_slots_.front();
            free_slots_.erase(free_slots_.begin());
        }
        if (slabbed_shared_ && prog_->kernel.shared_mem_bytes) {
            b.shared_base = slab_base_ + uint64_t(b.slot) * prog_->kernel.shared_mem_bytes;
            std::memset(mem_.data() + b.shared_base, 0,
                        size_t(prog_->kernel.shared_mem_bytes));
        }
        if (strat_ == MimdStrategy::MULTI_CORE) {
            // fresh generation counters for this block's rendezvous cells
            uint64_t base = div_cell(b, 0);
            std::memset(mem_.data() + base, 0,
                        size_t(prog_->flat.divergence_sites) * kDivCellBytes);
        }
        b.ctxs.clear();
        bool scalar = strat_ == MimdStrategy::INDEPENDENT_THREAD;
        for (uint32_t p = 0; p < cpb_; ++p) {
            uint32_t core = b.cores[p];
            cores_[core].busy = true;
            cores_[core].ctxs.clear();
            cores_[core].rr = 0;
            cores_[core].scratch.assign(desc_.scratchpad_bytes, 0);
            uint32_t lo = p * pw_;
            uint32_t hi = std::min(T, lo + pw_);
            if (scalar) {
                for (uint32_t t = lo; t < hi; ++t)
                    b.ctxs.push_back(make_ctx(b, core, p, t, 1));
            } else {
                b.ctxs.push_back(make_ctx(b, core, p, lo, hi - lo));
            }
        }
        if (b.pending) {
            apply_dump(b, *b.pending);
            b.pending.reset();
        }
        refresh_completion(b);
    }

    uint32_t make_ctx(MBlock& b, uint32_t core, uint32_t part, uint32_t first, uint32_t width) {
        Ctx c;
        c.core = core;
        c.block = b.index;
        c.part = part;
        c.first_thread = first;
        c.width = width;
        c.valid = width == 64 ? ~0ull : ((1ull << width) - 1);
        c.active = c.valid;
        c.regs.assign(width, std::vector<uint64_t>(reg_count_, 0));
        c.local.resize(width);
        const auto& params = prog_->kernel.params;
        for (uint32_t l = 0; l < width; ++l)
            for (size_t i = 0; i < params.size(); ++i)
                c.regs[l][params[i].reg.id] =
                    ir::canonical_bits(params[i].reg.type, spec_.args[i]);
        uint32_t id = uint32_t(ctxs_.size());
        ctxs_.push_back(std::move(c));
        cores_[core].ctxs.push_back(id);
        return id;
    }

    uint64_t div_cell(const MBlock& b, uint32_t site) const {
        return div_base_ +
               (uint64_t(b.slot) * prog_->flat.divergence_sites + site) * kDivCellBytes;
    }

    // ---- resume -----------------------------------------------------------

    void apply_dump(MBlock& b, const BlockDump& d) {
        uint32_t site = d.resume_point_id;
        uint32_t pc = prog_->flat.resume_pc.at(site);
        const auto& live_regs = prog_->liveness.at(site);
        const auto& frames = prog_->flat.resume_frames.at(site);
        if (prog_->kernel.shared_mem_bytes) {
            if (slabbed_shared_)
                std::memcpy(mem_.data() + b.shared_base, d.shared.data(), d.shared.size());
            else
                std::memcpy(cores_[b.cores[0]].scratch.data(), d.shared.data(),
                            d.shared.size());
        }
        for (uint32_t ci : b.ctxs) {
            Ctx& c = ctxs_[ci];
            for (uint32_t l = 0; l < c.width; ++l) {
                uint32_t t = c.first_thread + l;
                if (dump_bit(d.exited, t)) c.exited |= 1ull << l;
                for (size_t r = 0; r < live_regs.size(); ++r)
                    c.regs[l][live_regs[r].id] = d.registers[size_t(t) * live_regs.size() + r];
            }
            c.pc = pc;
            c.active = c.live();
            c.stack.clear();
            if (strat_ != MimdStrategy::INDEPENDENT_THREAD) {
                for (const auto& f : frames) {
                    StackEntry e;
                    e.is_loop = f.is_loop;
                    e.has_else = f.has_else;
                    e.saved = c.live();
                    e.else_taken = f.in_else;
                    e.else_mask = f.in_else ? c.live() : 0;
                    e.else_pc = f.else_pc;
                    e.end_pc = f.end_pc;
                    e.begin_pc = f.push_pc + 1;
                    c.stack.push_back(e);
                }
                std::ostringstream ev;
                ev << "vmask.restore core=" << c.core << " block=" << b.index
                   << " part=" << c.part << " depth=" << c.stack.size();
                events_.push_back(ev.str());
            }
            c.st = c.active == 0 ? Ctx::St::DONE : Ctx::St::RUN;
        }
        std::ostringstream ev;
        ev << "resume.stage block=" << b.index << " site=" << site
           << " regs_per_thread=" << live_regs.size() << " via=dma";
        events_.push_back(ev.str());
    }

    BlockDump synthetic_entry_dump(uint32_t block_index) const {
        BlockDump d;
        d.block_index = block_index;
        d.resume_point_id = 0;
        d.thread_count = geom_.threads_per_block();
        d.exited.assign((d.thread_count + 7) / 8, 0);
        d.shared.assign(prog_->kernel.shared_mem_bytes, 0);
        const auto& live_regs = prog_->liveness.at(0);
        d.registers.assign(size_t(d.thread_count) * live_regs.size(), 0);
        for (uint32_t t = 0; t < d.thread_count; ++t)
            for (size_t r = 0; r < live_regs.size(); ++r)
                for (size_t i = 0; i < prog_->kernel.params.size(); ++i)
                    if (prog_->kernel.params[i].reg.id == live_regs[r].id)
                        d.registers[size_t(t) * live_regs.size() + r] = ir::canonical_bits(
                            prog_->kernel.params[i].reg.type, spec_.args[i]);
        return d;
    }

    BlockDump dump_block(MBlock& b) {
        BlockDump d;
        d.block_index = b.index;
        d.thread_count = geom_.threads_per_block();
        d.exited.assign((d.thread_count + 7) / 8, 0);
        uint32_t site = UINT32_MAX;
        for (uint32_t ci : b.ctxs)
            if (ctxs_[ci].st == Ctx::St::HALT) site = prog_->flat.ops[ctxs_[ci].pc].site;
        if (site == UINT32_MAX)
            fail(ErrorKind::State, "block " + std::to_string(b.index) +
                                       " is not parked at a suspension check");
        d.resume_point_id = site;
        const auto& live_regs = prog_->liveness.at(site);
        d.registers.assign(size_t(d.thread_count) * live_regs.size(), 0);
        for (uint32_t ci : b.ctxs) {
            const Ctx& c = ctxs_[ci];
            for (uint32_t l = 0; l < c.width; ++l) {
                uint32_t t = c.first_thread + l;
                if (c.exited >> l & 1) {
                    set_dump_bit(d.exited, t, true);
                    continue;
                }
                for (size_t r = 0; r < live_regs.size(); ++r)
                    d.registers[size_t(t) * live_regs.size() + r] = c.regs[l][live_regs[r].id];
            }
        }
        if (prog_->kernel.shared_mem_bytes) {
            d.shared.resize(prog_->kernel.shared_mem_bytes);
            if (slabbed_shared_)
                std::memcpy(d.shared.data(), mem_.data() + b.shared_base, d.shared.size());
            else
                std::memcpy(d.shared.data(), cores_[b.cores[0]].scratch.data(),
                            d.shared.size());
        }
        return d;
    }

    // ---- scheduling -------------------------------------------------------

    bool core_runnable(uint32_t c) const {
        for (uint32_t ci : cores_[c].ctxs)
            if (ctxs_[ci].st == Ctx::St::RUN) return true;
        return false;
    }

    void run_core_slice(Core& core) {
        for (int step = 0; step < kSlice; ++step) {
            Ctx* cur = nullptr;
            for (size_t k = 0; k < core.ctxs.size(); ++k) {
                Ctx& c = ctxs_[core.ctxs[(core.rr + k) % core.ctxs.size()]];
                if (c.st == Ctx::St::RUN) {
                    core.rr = uint32_t((core.rr + k) % core.ctxs.size());
                    cur = &c;
                    break;
                }
            }
            if (!cur) return;
            exec_step(*cur);
            // finishing the block's last context clears core.ctxs under us
            if (core.ctxs.empty()) return;
            if (cur->st != Ctx::St::RUN) core.rr = (core.rr + 1) % uint32_t(core.ctxs.size());
        }
    }

    void refresh_completion(MBlock& b) {
        if (!b.resident || b.completed) return;
        for (uint32_t ci : b.ctxs)
            if (ctxs_[ci].st != Ctx::St::DONE) return;
        b.completed = true;
        for (uint32_t c : b.cores) {
            cores_[c].busy = false;
            cores_[c].ctxs.clear();
        }
        free_cores_.insert(free_cores_.end(), b.cores.begin(), b.cores.end());
        std::sort(free_cores_.begin(), free_cores_.end());
        if (b.slot != UINT32_MAX) {
            free_slots_.push_back(b.slot);
            std::sort(free_slots_.begin(), free_slots_.end());
        }
        b.ctxs.clear();
        b.cores.clear();
    }

    bool classify_quiescence() {
        for (auto& b : blocks_) refresh_completion(b);
        start_pending_blocks();
        for (uint32_t c = 0; c < cores_.size(); ++c)
            if (core_runnable(c)) return false;
        bool all_done = true;
        for (const auto& b : blocks_) all_done = all_done && b.completed;
        if (all_done) {
            state_ = RunState::COMPLETED;
            return true;
        }
        std::vector<uint32_t> waiting, halted;
        for (uint32_t i = 0; i < ctxs_.size(); ++i) {
            const Ctx& c = ctxs_[i];
            if (!blocks_[c.block].resident || blocks_[c.block].completed) continue;
            if (c.st == Ctx::St::WAIT) waiting.push_back(i);
            if (c.st == Ctx::St::HALT) halted.push_back(i);
        }
        if (!waiting.empty()) {
            if (halted.empty()) {
                const Ctx* first = &ctxs_[waiting[0]];
                for (uint32_t i : waiting)
                    if (ctxs_[i].pc < first->pc) first = &ctxs_[i];
                const FlatOp& op = prog_->flat.ops[first->pc];
                if (op.k == FlatOp::K::BAR)
                    fail(ErrorKind::Fault,
                         "rendezvous deadlock: barrier site " + std::to_string(op.site) +
                             " never releases (some threads cannot reach it)");
                fail(ErrorKind::Fault, "rendezvous deadlock: collective at pc " +
                                           std::to_string(first->pc) + " never releases");
            }
            bool grid_wait = false;
            for (uint32_t i : waiting) {
                const FlatOp& op = prog_->flat.ops[ctxs_[i].pc];
                grid_wait = grid_wait || (op.k == FlatOp::K::BAR &&
                                          op.inst.opcode == Opcode::BAR_GLOBAL);
            }
            for (uint32_t i : halted) {
                Ctx& c = ctxs_[i];
                bool block_waits = false;
                for (uint32_t ci : blocks_[c.block].ctxs)
                    block_waits = block_waits || ctxs_[ci].st == Ctx::St::WAIT;
                if (grid_wait || block_waits) {
                    instructions_ += popcount(c.active);
                    c.pc++;
                    c.st = Ctx::St::RUN;
                }
            }
            return false;
        }
        if (!halted.empty()) {
            state_ = RunState::PAUSED;
            return true;
        }
        fail(ErrorKind::Fault, "no runnable contexts and nothing pending");
    }

    // ---- execution dispatch -------------------------------------------------

    void exec_step(Ctx& c) {
        switch (strat_) {
            case MimdStrategy::SINGLE_CORE: exec_masked(c); break;
            case MimdStrategy::MULTI_CORE: exec_lockstep(c); break;
            case MimdStrategy::INDEPENDENT_THREAD: exec_scalar(c); break;
        }
    }

    // single_core: one vector context per block, SIMT-style jumps over dead
    // branches and an unwind for emptied masks
    void exec_masked(Ctx& c) {
        if (c.active == 0) {
            unwind(c);
            return;
        }
        const FlatOp& op = prog_->flat.ops[c.pc];
        switch (op.k) {
            case FlatOp::K::EXEC:
                if (is_collective(op.inst.opcode)) {
                    if (c.active != c.live()) divergent_collective_fault(c);
                    block_collective(blocks_[c.block], c.pc);
                    instructions_ += popcount(c.active);
                    c.pc++;
                } else {
                    exec_inst(c, op.inst);
                }
                break;
            case FlatOp::K::PRED_PUSH: {
                instructions_ += popcount(c.active);
                uint64_t taken = pred_mask(c, op.pred);
                StackEntry e;
                e.saved = c.active;
                e.else_mask = c.active & ~taken;
                e.has_else = op.has_else;
                e.else_pc = op.has_else ? op.t0 : 0;
                e.end_pc = op.t1;
                c.stack.push_back(e);
                c.active = taken;
                c.pc = taken ? c.pc + 1 : op.t0;
                break;
            }
            case FlatOp::K::PRED_ELSE: {
                instructions_ += popcount(c.active);
                StackEntry& e = c.stack.back();
                e.else_taken = true;
                c.active = e.else_mask & ~c.exited;
                c.pc = c.active ? c.pc + 1 : op.t1;
                break;
            }
            case FlatOp::K::PRED_POP: {
                instructions_ += popcount(c.active);
                StackEntry e = c.stack.back();
                c.stack.pop_back();
                c.active = e.saved & ~c.exited;
                c.pc++;
                if (c.active == 0) unwind(c);
                break;
            }
            case FlatOp::K::LOOP_BEGIN: {
                instructions_ += popcount(c.active);
                StackEntry e;
                e.is_loop = true;
                e.saved = c.active;
                e.begin_pc = c.pc + 1;
                e.end_pc = op.t1 - 1;
                c.stack.push_back(e);
                c.pc++;
                break;
            }
            case FlatOp::K::LOOP_END: {
                instructions_ += popcount(c.active);
                uint64_t brk = pred_mask(c, op.pred);
                uint64_t cont = c.active & ~brk & ~c.exited;
                if (cont) {
                    c.active = cont;
                    c.pc = op.t0;
                } else {
                    StackEntry e = c.stack.back();
                    c.stack.pop_back();
                    c.active = e.saved & ~c.exited;
                    c.pc++;
                    if (c.active == 0) unwind(c);
                }
                break;
            }
            case FlatOp::K::BAR:
                arrive_barrier(c, op);
                break;
            case FlatOp::K::PAUSE_CHECK:
                if (pause_flag_now()) {
                    c.st = Ctx::St::HALT;
                } else {
                    instructions_ += popcount(c.active);
                    c.pc++;
                }
                break;
            case FlatOp::K::RET:
                instructions_ += popcount(c.active);
                c.exited |= c.active;
                c.active = 0;
                unwind(c);
                break;
        }
    }

    void unwind(Ctx& c) {
        while (c.active == 0) {
            if (c.stack.empty()) {
                c.st = Ctx::St::DONE;
                on_ctx_done(c.block);
                return;
            }
            StackEntry& e = c.stack.back();
            if (!e.is_loop && e.has_else && !e.else_taken) {
                e.else_taken = true;
                c.active = e.else_mask & ~c.exited;
                c.pc = e.else_pc + 1;
            } else {
                c.active = e.saved & ~c.exited;
                c.pc = e.end_pc + 1;
                c.stack.pop_back();
            }
        }
    }

    // multi_core: the block's contexts walk every op in lock step; divergence
    // sites are rendezvous where the cores agree on the shared outcome
    void exec_lockstep(Ctx& c) {
        if (c.pc >= prog_->flat.ops.size()) {
            c.st = Ctx::St::DONE;
            on_ctx_done(c.block);
            return;
        }
        const FlatOp& op = prog_->flat.ops[c.pc];
        switch (op.k) {
            case FlatOp::K::EXEC:
                if (is_collective(op.inst.opcode)) {
                    // walkers rendezvous here even with no lanes; a partial
                    // mask inside one context can never become uniform
                    if (c.active != 0 && c.active != c.live()) divergent_collective_fault(c);
                    c.st = Ctx::St::WAIT;
                    c.wait = Ctx::Wait::COLLECTIVE;
                    try_release_collective(blocks_[c.block], c.pc);
                } else if (c.active == 0) {
                    c.pc++;  // walker: no lanes here, keep step with the block
                } else {
                    exec_inst(c, op.inst);
                }
                break;
            case FlatOp::K::PRED_PUSH:
            case FlatOp::K::LOOP_END:
                c.st = Ctx::St::WAIT;
                c.wait = Ctx::Wait::DIV;
                c.div_payload = op.k == FlatOp::K::PRED_PUSH
                                    ? pred_mask(c, op.pred)
                                    : (c.active & ~pred_mask(c, op.pred) & ~c.exited);
                try_release_div(blocks_[c.block], c.pc);
                break;
            case FlatOp::K::PRED_ELSE: {
                instructions_ += popcount(c.active);
                StackEntry& e = c.stack.back();
                e.else_taken = true;
                c.active = e.else_mask & ~c.exited;
                c.pc++;
                break;
            }
            case FlatOp::K::PRED_POP: {
                instructions_ += popcount(c.active);
                StackEntry e = c.stack.back();
                c.stack.pop_back();
                c.active = e.saved & ~c.exited;
                c.pc++;
                break;
            }
            case FlatOp::K::LOOP_BEGIN: {
                instructions_ += popcount(c.active);
                StackEntry e;
                e.is_loop = true;
                e.saved = c.active;
                e.begin_pc = c.pc + 1;
                e.end_pc = op.t1 - 1;
                c.stack.push_back(e);
                c.pc++;
                break;
            }
            case FlatOp::K::BAR:
                // walkers arrive with an empty mask when the enclosing branch
                // was uniformly false; release checks the whole block's verdict
                if (c.active != 0 && c.active != c.live())
                    fail(ErrorKind::Fault,
                         "divergence deadlock at barrier site " + std::to_string(op.site) +
                             ": a surviving thread is masked off and can never arrive");
                if (c.active != 0 && pause_.at_site == op.site) pause_.flag = true;
                c.st = Ctx::St::WAIT;
                c.wait = Ctx::Wait::BARRIER;
                try_release_barrier(c);
                break;
            case FlatOp::K::PAUSE_CHECK:
                if (c.active != 0 && pause_flag_now()) {
                    c.st = Ctx::St::HALT;
                } else {
                    instructions_ += popcount(c.active);
                    c.pc++;
                }
                break;
            case FlatOp::K::RET:
                instructions_ += popcount(c.active);
                c.exited |= c.active;
                c.active = 0;
                c.pc++;
                if (c.pc >= prog_->flat.ops.size()) {
                    c.st = Ctx::St::DONE;
                    on_ctx_done(c.block);
                }
                break;
        }
    }

    // independent_thread: plain scalar control flow, no masks
    void exec_scalar(Ctx& c) {
        const FlatOp& op = prog_->flat.ops[c.pc];
        switch (op.k) {
            case FlatOp::K::EXEC:
                if (is_collective(op.inst.opcode)) {
                    c.st = Ctx::St::WAIT;
                    c.wait = Ctx::Wait::COLLECTIVE;
                    try_release_collective(blocks_[c.block], c.pc);
                } else {
                    exec_inst(c, op.inst);
                }
                break;
            case FlatOp::K::PRED_PUSH:
                instructions_ += 1;
                if (c.regs[0][op.pred.id])
                    c.pc++;
                else
                    c.pc = op.has_else ? op.t0 + 1 : op.t1;
                break;
            case FlatOp::K::PRED_ELSE:
                instructions_ += 1;
                c.pc = op.t1;  // fell out of the then branch, skip the else
                break;
            case FlatOp::K::PRED_POP:
            case FlatOp::K::LOOP_BEGIN:
                instructions_ += 1;
                c.pc++;
                break;
            case FlatOp::K::LOOP_END:
                instructions_ += 1;
                c.pc = c.regs[0][op.pred.id] ? c.pc + 1 : op.t0;
                break;
            case FlatOp::K::BAR:
                arrive_barrier(c, op);
                break;
            case FlatOp::K::PAUSE_CHECK:
                if (pause_flag_now()) {
                    c.st = Ctx::St::HALT;
                } else {
                    instructions_ += 1;
                    c.pc++;
                }
                break;
            case FlatOp::K::RET:
                instructions_ += 1;
                c.exited = c.valid;
                c.active = 0;
                c.st = Ctx::St::DONE;
                on_ctx_done(c.block);
                break;
        }
    }

    uint64_t pred_mask(const Ctx& c, const ir::RegisterRef& pred) {
        uint64_t m = 0;
        for (uint32_t l = 0; l < c.width; ++l)
            if (c.active >> l & 1)
                if (c.regs[l][pred.id]) m |= 1ull << l;
        return m;
    }

    [[noreturn]] void divergent_collective_fault(const Ctx& c) {
        const FlatOp& op = prog_->flat.ops[c.pc];
        fail(ErrorKind::Fault,
             std::string("divergent collective ") + ir::to_string(op.inst.opcode) + " at pc " +
                 std::to_string(c.pc) +
                 ": a surviving thread is masked off and can never arrive");
    }

    // ---- rendezvous -------------------------------------------------------

    void arrive_barrier(Ctx& c, const FlatOp& op) {
        if (c.active != c.live())
            fail(ErrorKind::Fault,
                 "divergence deadlock at barrier site " + std::to_string(op.site) +
                     ": a surviving thread is masked off and can never arrive");
        if (pause_.at_site == op.site) pause_.flag = true;
        c.st = Ctx::St::WAIT;
        c.wait = Ctx::Wait::BARRIER;
        try_release_barrier(c);
    }

    void try_release_barrier(const Ctx& at) {
        uint32_t pc = at.pc;
        bool global = prog_->flat.ops[pc].inst.opcode == Opcode::BAR_GLOBAL;
        for (auto& b : blocks_) refresh_completion(b);
        std::vector<uint32_t> scope;
        auto add = [&](const MBlock& b) {
            if (!b.resident || b.completed) return;
            for (uint32_t ci : b.ctxs)
                if (ctxs_[ci].st != Ctx::St::DONE) scope.push_back(ci);
        };
        if (global) {
            if (!pending_.empty())
                fail(ErrorKind::Fault,
                     "device-wide barrier reached while blocks are still queued");
            for (auto& b : blocks_) add(b);
        } else {
            add(blocks_[at.block]);
        }
        bool occupied = false, empty_live = false;
        for (uint32_t ci : scope) {
            const Ctx& o = ctxs_[ci];
            if (o.st != Ctx::St::WAIT || o.wait != Ctx::Wait::BARRIER || o.pc != pc) return;
            if (o.active != 0)
                occupied = true;
            else if (o.live() != 0)
                empty_live = true;
        }
        // every context walked here, but the branch verdict differed between
        // contexts: some lanes can never arrive while others hold the barrier
        if (occupied && empty_live)
            fail(ErrorKind::Fault,
                 "divergence deadlock at barrier site " +
                     std::to_string(prog_->flat.ops[pc].site) +
                     ": a surviving thread is masked off and can never arrive");
        for (uint32_t ci : scope) {
            Ctx& o = ctxs_[ci];
            barrier_visits_ += popcount(o.active);
            instructions_ += popcount(o.active);
            o.pc++;
            o.st = Ctx::St::RUN;
            o.wait = Ctx::Wait::NONE;
        }
    }

    // A context that exits can be the last arrival a rendezvous was waiting
    // on; called whenever a context transitions to DONE.
    void on_ctx_done(uint32_t block_index) {
        refresh_completion(blocks_[block_index]);
        for (uint32_t ci : blocks_[block_index].ctxs) {
            Ctx& o = ctxs_[ci];
            if (o.st != Ctx::St::WAIT) continue;
            // release needs every non-exited context at one pc, so checking
            // the first waiting context covers the block
            if (o.wait == Ctx::Wait::BARRIER)
                try_release_barrier(o);
            else if (o.wait == Ctx::Wait::DIV)
                try_release_div(blocks_[block_index], o.pc);
            else if (o.wait == Ctx::Wait::COLLECTIVE)
                try_release_collective(blocks_[block_index], o.pc);
            break;
        }
        // a fully completed block can be what a device-wide barrier waits for
        for (auto& b : blocks_) {
            for (uint32_t ci : b.ctxs) {
                Ctx& o = ctxs_[ci];
                if (o.st == Ctx::St::WAIT && o.wait == Ctx::Wait::BARRIER &&
                    prog_->flat.ops[o.pc].inst.opcode == Opcode::BAR_GLOBAL) {
                    try_release_barrier(o);
                    return;
                }
            }
        }
    }

    void try_release_div(MBlock& b, uint32_t pc) {
        for (uint32_t ci : b.ctxs) {
            const Ctx& o = ctxs_[ci];
            if (o.st == Ctx::St::DONE) continue;
            if (o.st != Ctx::St::WAIT || o.wait != Ctx::Wait::DIV || o.pc != pc) return;
        }
        const FlatOp& op = prog_->flat.ops[pc];
        uint64_t cell = div_cell(b, op.site);
        uint32_t gen = 0;
        std::memcpy(&gen, mem_.data() + cell, 4);
        bool any = false;
        uint32_t arrivals = 0;
        for (uint32_t ci : b.ctxs) {
            const Ctx& o = ctxs_[ci];
            if (o.st == Ctx::St::DONE) continue;
            any = any || o.div_payload != 0;
            arrivals++;
        }
        gen++;
        uint32_t flags = any ? 1 : 0;
        std::memcpy(mem_.data() + cell, &gen, 4);
        std::memcpy(mem_.data() + cell + 4, &arrivals, 4);
        std::memcpy(mem_.data() + cell + 8, &flags, 4);
        std::ostringstream line;
        line << (op.k == FlatOp::K::PRED_PUSH ? "pred" : "loop") << " site=" << op.site
             << " gen=" << gen << " any=" << (any ? 1 : 0) << " arrivals=" << arrivals;
        for (uint32_t ci : b.ctxs) {
            Ctx& o = ctxs_[ci];
            if (o.st == Ctx::St::DONE) continue;
            div_logs_[o.core].push_back(line.str());
            instructions_ += popcount(o.active);
            if (op.k == FlatOp::K::PRED_PUSH) {
                StackEntry e;
                e.saved = o.active;
                e.else_mask = o.active & ~o.div_payload;
                e.has_else = op.has_else;
                e.else_pc = op.has_else ? op.t0 : 0;
                e.end_pc = op.t1;
                o.stack.push_back(e);
                o.active = o.div_payload;
                o.pc++;
            } else {  // LOOP_END: payload is this context's continue mask
                if (any) {
                    o.active = o.div_payload;
                    o.pc = op.t0;
                } else {
                    StackEntry e = o.stack.back();
                    o.stack.pop_back();
                    o.active = e.saved & ~o.exited;
                    o.pc++;
                }
            }
            o.st = Ctx::St::RUN;
            o.wait = Ctx::Wait::NONE;
        }
    }

    void try_release_collective(MBlock& b, uint32_t pc) {
        bool occupied = false, empty_live = false;
        for (uint32_t ci : b.ctxs) {
            const Ctx& o = ctxs_[ci];
            if (o.st == Ctx::St::DONE) continue;
            if (o.st != Ctx::St::WAIT || o.wait != Ctx::Wait::COLLECTIVE || o.pc != pc) return;
            if (o.active != 0)
                occupied = true;
            else if (o.live() != 0)
                empty_live = true;
        }
        if (occupied && empty_live)
            for (uint32_t ci : b.ctxs)
                if (ctxs_[ci].st != Ctx::St::DONE) divergent_collective_fault(ctxs_[ci]);
        if (occupied) block_collective(b, pc);  // all empty: dead this pass
        for (uint32_t ci : b.ctxs) {
            Ctx& o = ctxs_[ci];
            if (o.st == Ctx::St::DONE) continue;
            instructions_ += popcount(o.active);
            o.pc++;
            o.st = Ctx::St::RUN;
            o.wait = Ctx::Wait::NONE;
        }
    }

    // computes a block-wide collective assuming every live thread is parked
    // at the op (single_core calls it inline, the others after rendezvous)
    void block_collective(MBlock& b, uint32_t pc) {
        const ir::Instruction& in = prog_->flat.ops[pc].inst;
        uint32_t T = geom_.threads_per_block();
        struct Slot { Ctx* c; uint32_t lane; };
        std::vector<Slot> slots(T, {nullptr, 0});
        for (uint32_t ci : b.ctxs) {
            Ctx& c = ctxs_[ci];
            for (uint32_t l = 0; l < c.width; ++l) slots[c.first_thread + l] = {&c, l};
        }
        auto live_t = [&](uint32_t t) {
            return slots[t].c && !(slots[t].c->exited >> slots[t].lane & 1);
        };
        auto regs_t = [&](uint32_t t) { return slots[t].c->regs[slots[t].lane].data(); };

        if (in.opcode == Opcode::VOTE_ANY || in.opcode == Opcode::VOTE_ALL) {
            bool any = false, all = true;
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                bool v = eval::read_operand(in.srcs[0], regs_t(t)) != 0;
                any = any || v;
                all = all && v;
            }
            uint64_t r = in.opcode == Opcode::VOTE_ANY ? (any ? 1 : 0) : (all ? 1 : 0);
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t)) regs_t(t)[in.dst->id] = r;
        } else if (in.opcode == Opcode::BALLOT) {
            uint64_t bits = 0;
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t) && eval::read_operand(in.srcs[0], regs_t(t)) != 0)
                    bits |= 1ull << t;
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t)) regs_t(t)[in.dst->id] = bits;
        } else {  // SHUFFLE
            std::vector<uint64_t> vals(T, 0), idx(T, 0);
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                idx[t] = uint32_t(eval::read_operand(in.srcs[0], regs_t(t)));
                vals[t] = eval::read_operand(in.srcs[1], regs_t(t));
            }
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                uint64_t s = idx[t];
                uint64_t v = (s < T && live_t(uint32_t(s))) ? vals[size_t(s)] : vals[t];
                regs_t(t)[in.dst->id] = ir::canonical_bits(in.sem_type, v);
            }
        }
    }

    // ---- instruction execution ---------------------------------------------

    // EXEC dispatch for compute, memory and atomics. Atomics run a per-lane
    // two-phase lock protocol so the scheduler can interleave cores mid-op;
    // everything else completes in one step.
    void exec_inst(Ctx& c, const ir::Instruction& in) {
        if (in.opcode == Opcode::ATOM_ADD || in.opcode == Opcode::ATOM_CAS) {
            atomic_step(c, in);
            return;
        }
        if (in.opcode == Opcode::LD || in.opcode == Opcode::ST) {
            memory_op(c, in);
            instructions_ += popcount(c.active);
            c.pc++;
            return;
        }
        eval::ThreadIds ids;
        auto bc = geom_.block_coords(c.block);
        ids.block[0] = bc[0]; ids.block[1] = bc[1]; ids.block[2] = bc[2];
        for (int i = 0; i < 3; ++i) {
            ids.block_dim[i] = geom_.block[i];
            ids.grid_dim[i] = geom_.grid[i];
        }
        for (uint32_t l = 0; l < c.width; ++l) {
            if (!(c.active >> l & 1)) continue;
            auto tc = geom_.thread_coords(c.first_thread + l);
            ids.local[0] = tc[0]; ids.local[1] = tc[1]; ids.local[2] = tc[2];
            if (!eval::eval_compute(in, c.regs[l].data(), ids))
                fail(ErrorKind::Fault,
                     std::string("unhandled instruction ") + ir::to_string(in.opcode));
        }
        instructions_ += popcount(c.active);
        c.pc++;
    }

    // ---- memory -------------------------------------------------------------

    void check_user_global(uint64_t addr, uint32_t n) {
        if (addr > control_base_ || n > control_base_ - addr)
            fail(ErrorKind::Fault, "global access out of bounds at offset " +
                                       std::to_string(addr) + " size " + std::to_string(n));
    }

    uint64_t global_load(uint64_t addr, SemType t) {
        uint32_t n = ir::element_size(t);
        check_user_global(addr, n);
        uint64_t raw = 0;
        std::memcpy(&raw, mem_.data() + addr, n);
        return ir::canonical_bits(t, raw);
    }

    void global_store(uint64_t addr, SemType t, uint64_t slot) {
        uint32_t n = ir::element_size(t);
        check_user_global(addr, n);
        std::memcpy(mem_.data() + addr, &slot, n);
    }

    void log_dma(bool read, uint64_t base, uint64_t bytes, uint32_t bursts) {
        if (dma_log_lines_ >= kDmaLogCap) return;
        dma_log_lines_++;
        std::ostringstream os;
        os << (read ? "dma.read" : "dma.write") << " base=" << base << " bytes=" << bytes
           << " bursts=" << bursts;
        events_.push_back(os.str());
    }

    void memory_op(Ctx& c, const ir::Instruction& in) {
        bool is_ld = in.opcode == Opcode::LD;
        uint32_t esz = ir::element_size(in.sem_type);
        switch (*in.space) {
            case ir::MemSpace::GLOBAL: {
                // coalescing: dense ascending addresses across active lanes
                // collapse into one burst, otherwise one burst per lane
                uint64_t prev = 0, base = 0;
                bool first = true, dense = true;
                uint32_t lanes = 0;
                for (uint32_t l = 0; l < c.width; ++l) {
                    if (!(c.active >> l & 1)) continue;
                    uint64_t a =
                        eval::read_operand(in.srcs[0], c.regs[l].data()) + in.mem_offset;
                    if (first) {
                        base = a;
                        first = false;
                    } else if (a != prev + esz) {
                        dense = false;
                    }
                    prev = a;
                    lanes++;
                    if (is_ld)
                        c.regs[l][in.dst->id] = global_load(a, in.sem_type);
                    else
                        global_store(a, in.sem_type,
                                     eval::read_operand(in.srcs[1], c.regs[l].data()));
                }
                if (lanes == 0) return;
                uint64_t bytes = uint64_t(lanes) * esz;
                uint32_t bursts = dense ? 1 : lanes;
                if (is_ld)
                    dma_read_ += bytes;
                else
                    dma_write_ += bytes;
                log_dma(is_ld, base, bytes, bursts);
                return;
            }
            case ir::MemSpace::SHARED: {
                uint64_t limit = prog_->kernel.shared_mem_bytes;
                for (uint32_t l = 0; l < c.width; ++l) {
                    if (!(c.active >> l & 1)) continue;
                    uint64_t a =
                        eval::read_operand(in.srcs[0], c.regs[l].data()) + in.mem_offset;
                    if (a > limit || esz > limit - a)
                        fail(ErrorKind::Fault, "shared access out of bounds at offset " +
                                                   std::to_string(a));
                    uint8_t* sp = slabbed_shared_
                                      ? mem_.data() + blocks_[c.block].shared_base + a
                                      : cores_[blocks_[c.block].cores[0]].scratch.data() + a;
                    if (is_ld) {
                        uint64_t raw = 0;
                        std::memcpy(&raw, sp, esz);
                        c.regs[l][in.dst->id] = ir::canonical_bits(in.sem_type, raw);
                    } else {
                        uint64_t slot = eval::read_operand(in.srcs[1], c.regs[l].data());
                        std::memcpy(sp, &slot, esz);
                    }
                }
                return;
            }
            case ir::MemSpace::LOCAL: {
                for (uint32_t l = 0; l < c.width; ++l) {
                    if (!(c.active >> l & 1)) continue;
                    uint64_t a =
                        eval::read_operand(in.srcs[0], c.regs[l].data()) + in.mem_offset;
                    if (a + esz > kLocalMemCap)
                        fail(ErrorKind::Fault, "local access beyond the private space limit");
                    auto& loc = c.local[l];
                    if (a + esz > loc.size()) loc.resize(size_t(a + esz), 0);
                    if (is_ld) {
                        uint64_t raw = 0;
                        std::memcpy(&raw, loc.data() + a, esz);
                        c.regs[l][in.dst->id] = ir::canonical_bits(in.sem_type, raw);
                    } else {
                        uint64_t slot = eval::read_operand(in.srcs[1], c.regs[l].data());
                        std::memcpy(loc.data() + a, &slot, esz);
                    }
                }
                return;
            }
        }
    }

    // ---- atomics ------------------------------------------------------------

    uint64_t lock_word_addr(uint64_t addr) const {
        return lock_base_ + ((addr >> 3) % kLockWords) * 4;
    }

    void atomic_step(Ctx& c, const ir::Instruction& in) {
        // advance atom_lane to the next active lane
        while (c.atom_lane < c.width && !(c.active >> c.atom_lane & 1)) c.atom_lane++;
        if (c.atom_lane >= c.width) {
            instructions_ += popcount(c.active);
            c.atom_lane = 0;
            c.atom_phase = 0;
            c.pc++;
            return;
        }
        uint32_t l = c.atom_lane;
        uint64_t* regs = c.regs[l].data();
        uint64_t addr = eval::read_operand(in.srcs[0], regs) + in.mem_offset;
        check_user_global(addr, ir::element_size(in.sem_type));
        uint64_t lock = lock_word_addr(addr);
        uint32_t word = 0;
        std::memcpy(&word, mem_.data() + lock, 4);
        if (c.atom_phase == 0) {
            if (word != 0) return;  // spin: retry on the next visit
            word = c.core + 1;
            std::memcpy(mem_.data() + lock, &word, 4);
            c.atom_phase = 1;
            return;
        }
        // owned: read-modify-write, then release
        uint32_t esz = ir::element_size(in.sem_type);
        uint64_t raw = 0;
        std::memcpy(&raw, mem_.data() + addr, esz);
        uint64_t old = ir::canonical_bits(in.sem_type, raw);
        if (in.opcode == Opcode::ATOM_ADD) {
            uint64_t val = eval::read_operand(in.srcs[1], regs);
            uint64_t next = eval::apply_op(Opcode::ADD, in.sem_type, old, val, 0);
            std::memcpy(mem_.data() + addr, &next, esz);
        } else {
            uint64_t cmp = eval::read_operand(in.srcs[1], regs);
            uint64_t val = eval::read_operand(in.srcs[2], regs);
            if (old == cmp) std::memcpy(mem_.data() + addr, &val, esz);
        }
        regs[in.dst->id] = old;
        word = 0;
        std::memcpy(mem_.data() + lock, &word, 4);
        c.atom_phase = 0;
        c.atom_lane++;
        while (c.atom_lane < c.width && !(c.active >> c.atom_lane & 1)) c.atom_lane++;
        if (c.atom_lane >= c.width) {
            instructions_ += popcount(c.active);
            c.atom_lane = 0;
            c.pc++;
        }
    }
};

}  // namespace

std::unique_ptr<Device> make_mimd_device(const ir::DeviceDesc& desc) {
    return std::make_unique<MimdDevice>(desc);
}

}  // namespace hetgpu::device

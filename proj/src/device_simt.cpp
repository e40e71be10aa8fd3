// SIMT device: warps execute the flat stream in lock step under an active
// mask with an explicit divergence stack. Barriers and block collectives are
// rendezvous points; a pause flag makes every block stop at the suspension
// check that follows a barrier, where its state is dumpable.
#include <cstring>
#include <sstream>

#include "grid_util.h"
#include "hetgpu/device.h"
#include "hetgpu/error.h"
#include "isa_eval.h"

namespace hetgpu::device {

namespace {

using lowering::FlatOp;
using ir::Opcode;
using ir::SemType;

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

struct Warp {
    enum class St : uint8_t { RUN, WAIT, HALT, DONE };
    uint32_t block = 0;
    uint32_t first_thread = 0;  // linear thread id of lane 0
    uint64_t valid = 0, exited = 0, active = 0;
    uint32_t pc = 0;
    St st = St::RUN;
    std::vector<StackEntry> stack;
    std::vector<std::vector<uint64_t>> regs;   // [lane][reg id]
    std::vector<std::vector<uint8_t>> local;   // per-lane private space

    uint64_t live() const { return valid & ~exited; }
};

struct Block {
    uint32_t index = 0;
    std::vector<uint32_t> warps;  // indices into the device warp table
    std::vector<uint8_t> shared;
    bool completed = false;
};

class SimtDevice final : public Device {
  public:
    explicit SimtDevice(const ir::DeviceDesc& desc) : Device(desc) {
        if (desc.warp_width > 64)
            fail(ErrorKind::Validation, "simulated warps are limited to 64 lanes");
    }

    void launch(const LaunchSpec& spec) override {
        pause_ = PauseControls{};
        setup(spec);
        for (auto& w : warps_) seed_params(w);
        state_ = RunState::RUNNING;
    }

    void resume(const LaunchSpec& spec, const std::vector<BlockDump>& dumps,
                const std::vector<uint8_t>& completed) override {
        pause_ = PauseControls{};
        setup(spec);
        for (auto& w : warps_) seed_params(w);
        for (auto& b : blocks_)
            if (dump_bit(completed, b.index)) retire_block(b);
        for (const auto& d : dumps) apply_dump(d);
        state_ = RunState::RUNNING;
    }

    RunState run_until_quiescent() override {
        if (state_ != RunState::RUNNING)
            fail(ErrorKind::Protocol, "run_until_quiescent without an in-flight launch");
        uint64_t round = 0;
        std::vector<uint32_t> order;
        while (true) {
            order.clear();
            for (uint32_t i = 0; i < warps_.size(); ++i)
                if (warps_[i].st == Warp::St::RUN && !blocks_[warps_[i].block].completed)
                    order.push_back(i);
            if (order.empty()) {
                if (classify_quiescence()) return state_;
                continue;
            }
            permute_order(order, spec_.sched_seed, round++);
            for (uint32_t i : order)
                if (warps_[i].st == Warp::St::RUN) exec_slice(warps_[i]);
        }
    }

    RunState state() const override { return state_; }

    std::vector<BlockDump> collect_block_dumps() override {
        if (state_ != RunState::PAUSED && state_ != RunState::COMPLETED)
            fail(ErrorKind::Protocol, "block dumps are only available when paused");
        std::vector<BlockDump> dumps;
        for (auto& b : blocks_)
            if (!b.completed) dumps.push_back(dump_block(b));
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
    uint32_t reg_count_ = 0;
    std::vector<Warp> warps_;
    std::vector<Block> blocks_;
    RunState state_ = RunState::IDLE;

    void setup(const LaunchSpec& spec) {
        validate_launch_common(spec, ir::DeviceModel::SIMT);
        geom_ = GridGeom{spec.grid, spec.block};
        if (geom_.threads_per_block() > lowering::kSimtMaxThreadsPerBlock)
            fail(ErrorKind::Lowering,
                 "block of " + std::to_string(geom_.threads_per_block()) +
                     " threads exceeds the device limit of " +
                     std::to_string(lowering::kSimtMaxThreadsPerBlock));
        spec_ = spec;
        prog_ = spec.program.get();
        reg_count_ = max_register_count(prog_->kernel);
        uint32_t W = desc_.warp_width;
        uint32_t T = geom_.threads_per_block();
        uint32_t warps_per_block = (T + W - 1) / W;
        warps_.clear();
        blocks_.assign(geom_.blocks(), {});
        for (uint32_t b = 0; b < geom_.blocks(); ++b) {
            blocks_[b].index = b;
            blocks_[b].shared.assign(prog_->kernel.shared_mem_bytes, 0);
            for (uint32_t wi = 0; wi < warps_per_block; ++wi) {
                Warp w;
                w.block = b;
                w.first_thread = wi * W;
                uint32_t lanes = std::min(W, T - wi * W);
                w.valid = lanes == 64 ? ~0ull : ((1ull << lanes) - 1);
                w.active = w.valid;
                w.regs.assign(W, std::vector<uint64_t>(reg_count_, 0));
                w.local.resize(W);
                blocks_[b].warps.push_back(uint32_t(warps_.size()));
                warps_.push_back(std::move(w));
            }
        }
    }

    void seed_params(Warp& w) {
        const auto& params = prog_->kernel.params;
        for (uint32_t l = 0; l < desc_.warp_width; ++l)
            for (size_t i = 0; i < params.size(); ++i)
                w.regs[l][params[i].reg.id] =
                    ir::canonical_bits(params[i].reg.type, spec_.args[i]);
    }

    void retire_block(Block& b) {
        b.completed = true;
        for (uint32_t wi : b.warps) {
            warps_[wi].st = Warp::St::DONE;
            warps_[wi].exited = warps_[wi].valid;
            warps_[wi].active = 0;
        }
    }

    // ---- resume -----------------------------------------------------------

    void apply_dump(const BlockDump& d) {
        if (d.block_index >= blocks_.size())
            fail(ErrorKind::State, "dump names block " + std::to_string(d.block_index) +
                                       " outside the launch grid");
        if (d.thread_count != geom_.threads_per_block())
            fail(ErrorKind::State, "dump thread count does not match the launch geometry");
        auto it = prog_->flat.resume_pc.find(d.resume_point_id);
        auto lv = prog_->liveness.find(d.resume_point_id);
        auto fr = prog_->flat.resume_frames.find(d.resume_point_id);
        if (it == prog_->flat.resume_pc.end() || lv == prog_->liveness.end() ||
            fr == prog_->flat.resume_frames.end())
            fail(ErrorKind::State, "dump resume point " + std::to_string(d.resume_point_id) +
                                       " does not exist in this lowering");
        const auto& live_regs = lv->second;
        if (d.registers.size() != size_t(d.thread_count) * live_regs.size())
            fail(ErrorKind::State, "dump register payload does not match the liveness table");
        Block& b = blocks_[d.block_index];
        if (d.shared.size() != b.shared.size())
            fail(ErrorKind::State, "dump shared memory size does not match the kernel");
        b.shared = d.shared;

        for (uint32_t wi : b.warps) {
            Warp& w = warps_[wi];
            seed_params(w);
            for (uint32_t l = 0; l < desc_.warp_width; ++l) {
                uint32_t t = w.first_thread + l;
                if (t >= d.thread_count) break;
                if (dump_bit(d.exited, t)) w.exited |= 1ull << l;
                for (size_t r = 0; r < live_regs.size(); ++r)
                    w.regs[l][live_regs[r].id] = d.registers[size_t(t) * live_regs.size() + r];
            }
            w.pc = it->second;
            w.active = w.live();
            w.stack.clear();
            for (const auto& f : fr->second) {
                StackEntry e;
                e.is_loop = f.is_loop;
                e.has_else = f.has_else;
                // every surviving thread sits at the resume site, so the
                // frame masks collapse to the live set
                e.saved = w.live();
                e.else_taken = f.in_else;
                e.else_mask = f.in_else ? w.live() : 0;
                e.else_pc = f.else_pc;
                e.end_pc = f.end_pc;
                e.begin_pc = f.push_pc + 1;
                w.stack.push_back(e);
            }
            if (w.active == 0)
                w.st = Warp::St::DONE;
            else
                w.st = Warp::St::RUN;
        }
        bool any = false;
        for (uint32_t wi : b.warps) any = any || warps_[wi].st != Warp::St::DONE;
        if (!any) b.completed = true;
        std::ostringstream ev;
        ev << "resume.stage block=" << d.block_index << " site=" << d.resume_point_id
           << " regs_per_thread=" << live_regs.size() << " chunks="
           << (d.registers.size() * 8 + 4095) / 4096 << " via=shared_window";
        events_.push_back(ev.str());
    }

    BlockDump dump_block(Block& b) {
        BlockDump d;
        d.block_index = b.index;
        d.thread_count = geom_.threads_per_block();
        d.exited.assign((d.thread_count + 7) / 8, 0);
        d.shared = b.shared;
        uint32_t site = UINT32_MAX;
        for (uint32_t wi : b.warps) {
            const Warp& w = warps_[wi];
            if (w.st == Warp::St::HALT) site = prog_->flat.ops[w.pc].site;
        }
        if (site == UINT32_MAX)
            fail(ErrorKind::State, "block " + std::to_string(b.index) +
                                       " is not parked at a suspension check");
        d.resume_point_id = site;
        const auto& live_regs = prog_->liveness.at(site);
        d.registers.assign(size_t(d.thread_count) * live_regs.size(), 0);
        for (uint32_t wi : b.warps) {
            const Warp& w = warps_[wi];
            for (uint32_t l = 0; l < desc_.warp_width; ++l) {
                uint32_t t = w.first_thread + l;
                if (t >= d.thread_count) break;
                if (!(w.valid >> l & 1)) continue;
                if (w.exited >> l & 1) {
                    set_dump_bit(d.exited, t, true);
                    continue;
                }
                for (size_t r = 0; r < live_regs.size(); ++r)
                    d.registers[size_t(t) * live_regs.size() + r] = w.regs[l][live_regs[r].id];
            }
        }
        return d;
    }

    // ---- scheduling -------------------------------------------------------

    static constexpr int kSlice = 32;

    void exec_slice(Warp& w) {
        for (int i = 0; i < kSlice && w.st == Warp::St::RUN; ++i) exec_op(w);
    }

    void refresh_completion(Block& b) {
        for (uint32_t wi : b.warps)
            if (warps_[wi].st != Warp::St::DONE) return;
        b.completed = true;
    }

    // Returns true when run_until_quiescent should stop (state_ set).
    bool classify_quiescence() {
        for (auto& b : blocks_) refresh_completion(b);
        bool all_done = true;
        for (const auto& b : blocks_) all_done = all_done && b.completed;
        if (all_done) {
            state_ = RunState::COMPLETED;
            return true;
        }
        std::vector<uint32_t> waiting, halted;
        for (uint32_t i = 0; i < warps_.size(); ++i) {
            if (blocks_[warps_[i].block].completed) continue;
            if (warps_[i].st == Warp::St::WAIT) waiting.push_back(i);
            if (warps_[i].st == Warp::St::HALT) halted.push_back(i);
        }
        if (!waiting.empty()) {
            if (halted.empty()) {
                const Warp* first = &warps_[waiting[0]];
                for (uint32_t i : waiting)
                    if (warps_[i].pc < first->pc) first = &warps_[i];
                const FlatOp& op = prog_->flat.ops[first->pc];
                if (op.k == FlatOp::K::BAR)
                    fail(ErrorKind::Fault,
                         "rendezvous deadlock: barrier site " + std::to_string(op.site) +
                             " never releases (some threads cannot reach it)");
                fail(ErrorKind::Fault, "rendezvous deadlock: collective at pc " +
                                           std::to_string(first->pc) + " never releases");
            }
            // progress over pausing: blocks parked at a check must move again
            // so pending rendezvous can complete
            bool grid_wait = false;
            for (uint32_t i : waiting) {
                const FlatOp& op = prog_->flat.ops[warps_[i].pc];
                grid_wait = grid_wait || (op.k == FlatOp::K::BAR &&
                                          op.inst.opcode == Opcode::BAR_GLOBAL);
            }
            for (uint32_t i : halted) {
                Warp& w = warps_[i];
                bool block_waits = false;
                for (uint32_t wi : blocks_[w.block].warps)
                    block_waits = block_waits || warps_[wi].st == Warp::St::WAIT;
                if (grid_wait || block_waits) {
                    instructions_ += popcount(w.active);
                    w.pc++;
                    w.st = Warp::St::RUN;
                }
            }
            return false;
        }
        if (!halted.empty()) {
            state_ = RunState::PAUSED;
            return true;
        }
        fail(ErrorKind::Fault, "no runnable warps and nothing pending");
    }

    // ---- execution --------------------------------------------------------

    void exec_op(Warp& w) {
        if (w.active == 0) {
            unwind(w);
            return;
        }
        const FlatOp& op = prog_->flat.ops[w.pc];
        switch (op.k) {
            case FlatOp::K::EXEC:
                if (is_collective(op.inst.opcode)) {
                    arrive_collective(w);
                } else {
                    instructions_ += popcount(w.active);
                    exec_lanes(w, op.inst);
                    w.pc++;
                }
                break;
            case FlatOp::K::PRED_PUSH: {
                instructions_ += popcount(w.active);
                uint64_t taken = 0;
                for (uint32_t l = 0; l < desc_.warp_width; ++l)
                    if (w.active >> l & 1)
                        if (w.regs[l][op.pred.id]) taken |= 1ull << l;
                StackEntry e;
                e.saved = w.active;
                e.else_mask = w.active & ~taken;
                e.has_else = op.has_else;
                e.else_pc = op.has_else ? op.t0 : 0;
                e.end_pc = op.t1;
                w.stack.push_back(e);
                w.active = taken;
                w.pc = taken ? w.pc + 1 : op.t0;
                break;
            }
            case FlatOp::K::PRED_ELSE: {
                instructions_ += popcount(w.active);
                StackEntry& e = w.stack.back();
                e.else_taken = true;
                w.active = e.else_mask & ~w.exited;
                w.pc = w.active ? w.pc + 1 : op.t1;
                break;
            }
            case FlatOp::K::PRED_POP: {
                instructions_ += popcount(w.active);
                StackEntry e = w.stack.back();
                w.stack.pop_back();
                w.active = e.saved & ~w.exited;
                w.pc++;
                if (w.active == 0) unwind(w);
                break;
            }
            case FlatOp::K::LOOP_BEGIN: {
                instructions_ += popcount(w.active);
                StackEntry e;
                e.is_loop = true;
                e.saved = w.active;
                e.begin_pc = w.pc + 1;
                e.end_pc = op.t1 - 1;
                w.stack.push_back(e);
                w.pc++;
                break;
            }
            case FlatOp::K::LOOP_END: {
                instructions_ += popcount(w.active);
                uint64_t brk = 0;
                for (uint32_t l = 0; l < desc_.warp_width; ++l)
                    if (w.active >> l & 1)
                        if (w.regs[l][op.pred.id]) brk |= 1ull << l;
                uint64_t cont = w.active & ~brk & ~w.exited;
                if (cont) {
                    w.active = cont;
                    w.pc = op.t0;
                } else {
                    StackEntry e = w.stack.back();
                    w.stack.pop_back();
                    w.active = e.saved & ~w.exited;
                    w.pc++;
                    if (w.active == 0) unwind(w);
                }
                break;
            }
            case FlatOp::K::BAR: {
                if (w.active != w.live())
                    fail(ErrorKind::Fault,
                         "divergence deadlock at barrier site " + std::to_string(op.site) +
                             ": a surviving thread is masked off and can never arrive");
                if (pause_.at_site == op.site) pause_.flag = true;
                w.st = Warp::St::WAIT;
                try_release_barrier(w.block, w.pc, op);
                break;
            }
            case FlatOp::K::PAUSE_CHECK:
                if (pause_flag_now()) {
                    w.st = Warp::St::HALT;
                } else {
                    instructions_ += popcount(w.active);
                    w.pc++;
                }
                break;
            case FlatOp::K::RET:
                instructions_ += popcount(w.active);
                w.exited |= w.active;
                w.active = 0;
                unwind(w);
                break;
        }
    }

    void unwind(Warp& w) {
        while (w.active == 0) {
            if (w.stack.empty()) {
                w.st = Warp::St::DONE;
                on_warp_done(w.block);
                return;
            }
            StackEntry& e = w.stack.back();
            if (!e.is_loop && e.has_else && !e.else_taken) {
                e.else_taken = true;
                w.active = e.else_mask & ~w.exited;
                w.pc = e.else_pc + 1;
            } else {
                w.active = e.saved & ~w.exited;
                w.pc = e.end_pc + 1;
                w.stack.pop_back();
            }
        }
    }

    // ---- rendezvous -------------------------------------------------------

    std::vector<uint32_t> barrier_scope(uint32_t block, bool global) {
        std::vector<uint32_t> scope;
        auto add_block = [&](const Block& b) {
            if (b.completed) return;
            for (uint32_t wi : b.warps)
                if (warps_[wi].live() != 0) scope.push_back(wi);
        };
        if (global)
            for (const auto& b : blocks_) add_block(b);
        else
            add_block(blocks_[block]);
        return scope;
    }

    void try_release_barrier(uint32_t block, uint32_t pc, const FlatOp& op) {
        bool global = op.inst.opcode == Opcode::BAR_GLOBAL;
        // block completion can lag; refresh so finished blocks don't gate a
        // device-wide barrier
        for (auto& b : blocks_) refresh_completion(b);
        auto scope = barrier_scope(block, global);
        for (uint32_t wi : scope)
            if (warps_[wi].st != Warp::St::WAIT || warps_[wi].pc != pc) return;
        for (uint32_t wi : scope) {
            Warp& w = warps_[wi];
            barrier_visits_ += popcount(w.active);
            instructions_ += popcount(w.active);
            w.pc++;
            w.st = Warp::St::RUN;
        }
    }

    void arrive_collective(Warp& w) {
        if (w.active != w.live()) {
            const FlatOp& op = prog_->flat.ops[w.pc];
            fail(ErrorKind::Fault,
                 std::string("divergent collective ") + ir::to_string(op.inst.opcode) +
                     " at pc " + std::to_string(w.pc) +
                     ": a surviving thread is masked off and can never arrive");
        }
        w.st = Warp::St::WAIT;
        try_release_collective(blocks_[w.block], w.pc);
    }

    void try_release_collective(Block& b, uint32_t pc) {
        // release when every live warp of the block waits here
        for (uint32_t wi : b.warps) {
            Warp& o = warps_[wi];
            if (o.live() == 0) continue;
            if (o.st != Warp::St::WAIT || o.pc != pc) return;
        }
        release_collective(b, pc);
    }

    // A warp whose last survivors exit can be the arrival a rendezvous was
    // waiting on; called whenever a warp transitions to DONE.
    void on_warp_done(uint32_t block_index) {
        for (auto& b : blocks_) refresh_completion(b);
        for (uint32_t wi : blocks_[block_index].warps) {
            Warp& o = warps_[wi];
            if (o.st != Warp::St::WAIT) continue;
            const FlatOp& op = prog_->flat.ops[o.pc];
            if (op.k == FlatOp::K::BAR)
                try_release_barrier(block_index, o.pc, op);
            else
                try_release_collective(blocks_[block_index], o.pc);
            break;
        }
        // a fully completed block can be what a device-wide barrier waits for
        for (auto& b : blocks_) {
            for (uint32_t wi : b.warps) {
                Warp& o = warps_[wi];
                if (o.st == Warp::St::WAIT &&
                    prog_->flat.ops[o.pc].inst.opcode == Opcode::BAR_GLOBAL) {
                    try_release_barrier(o.block, o.pc, prog_->flat.ops[o.pc]);
                    return;
                }
            }
        }
    }

    void release_collective(Block& b, uint32_t pc) {
        const FlatOp& op = prog_->flat.ops[pc];
        const ir::Instruction& in = op.inst;
        uint32_t T = geom_.threads_per_block();
        uint32_t W = desc_.warp_width;
        auto warp_of = [&](uint32_t t) -> Warp& { return warps_[b.warps[t / W]]; };
        auto live_t = [&](uint32_t t) {
            Warp& w = warp_of(t);
            return (w.valid >> (t % W) & 1) && !(w.exited >> (t % W) & 1);
        };
        auto regs_t = [&](uint32_t t) -> std::vector<uint64_t>& {
            return warp_of(t).regs[t % W];
        };

        uint64_t lanes = 0;
        for (uint32_t t = 0; t < T; ++t)
            if (live_t(t)) lanes++;

        if (in.opcode == Opcode::VOTE_ANY || in.opcode == Opcode::VOTE_ALL) {
            bool any = false, all = true;
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                bool v = eval::read_operand(in.srcs[0], regs_t(t).data()) != 0;
                any = any || v;
                all = all && v;
            }
            uint64_t r = in.opcode == Opcode::VOTE_ANY ? (any ? 1 : 0) : (all ? 1 : 0);
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t)) regs_t(t)[in.dst->id] = r;
        } else if (in.opcode == Opcode::BALLOT) {
            uint64_t bits = 0;
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t) && eval::read_operand(in.srcs[0], regs_t(t).data()) != 0)
                    bits |= 1ull << t;
            for (uint32_t t = 0; t < T; ++t)
                if (live_t(t)) regs_t(t)[in.dst->id] = bits;
        } else {  // SHUFFLE
            std::vector<uint64_t> vals(T, 0), idx(T, 0);
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                idx[t] = uint32_t(eval::read_operand(in.srcs[0], regs_t(t).data()));
                vals[t] = eval::read_operand(in.srcs[1], regs_t(t).data());
            }
            for (uint32_t t = 0; t < T; ++t) {
                if (!live_t(t)) continue;
                uint64_t s = idx[t];
                uint64_t v = (s < T && live_t(uint32_t(s))) ? vals[size_t(s)] : vals[t];
                regs_t(t)[in.dst->id] = ir::canonical_bits(in.sem_type, v);
            }
        }

        instructions_ += lanes;
        for (uint32_t wi : b.warps) {
            Warp& o = warps_[wi];
            if (o.live() == 0) continue;
            o.pc++;
            o.st = Warp::St::RUN;
        }
    }

    // ---- lane execution ---------------------------------------------------

    void exec_lanes(Warp& w, const ir::Instruction& in) {
        uint32_t W = desc_.warp_width;
        eval::ThreadIds ids;
        auto bc = geom_.block_coords(w.block);
        ids.block[0] = bc[0]; ids.block[1] = bc[1]; ids.block[2] = bc[2];
        for (int i = 0; i < 3; ++i) {
            ids.block_dim[i] = geom_.block[i];
            ids.grid_dim[i] = geom_.grid[i];
        }
        for (uint32_t l = 0; l < W; ++l) {
            if (!(w.active >> l & 1)) continue;
            uint32_t t = w.first_thread + l;
            auto tc = geom_.thread_coords(t);
            ids.local[0] = tc[0]; ids.local[1] = tc[1]; ids.local[2] = tc[2];
            uint64_t* regs = w.regs[l].data();
            if (eval::eval_compute(in, regs, ids)) continue;
            switch (in.opcode) {
                case Opcode::LD: load(w, l, in); break;
                case Opcode::ST: store(w, l, in); break;
                case Opcode::ATOM_ADD: {
                    uint64_t addr = eval::read_operand(in.srcs[0], regs) + in.mem_offset;
                    uint64_t old = mem_load(addr, in.sem_type);
                    uint64_t val = eval::read_operand(in.srcs[1], regs);
                    mem_store(addr, in.sem_type,
                              eval::apply_op(Opcode::ADD, in.sem_type, old, val, 0));
                    regs[in.dst->id] = old;
                    break;
                }
                case Opcode::ATOM_CAS: {
                    uint64_t addr = eval::read_operand(in.srcs[0], regs) + in.mem_offset;
                    uint64_t old = mem_load(addr, in.sem_type);
                    uint64_t cmp = eval::read_operand(in.srcs[1], regs);
                    uint64_t val = eval::read_operand(in.srcs[2], regs);
                    if (old == cmp) mem_store(addr, in.sem_type, val);
                    regs[in.dst->id] = old;
                    break;
                }
                default:
                    fail(ErrorKind::Fault, std::string("unhandled instruction ") +
                                               ir::to_string(in.opcode));
            }
        }
    }

    uint64_t mem_load(uint64_t addr, SemType t) {
        uint32_t n = ir::element_size(t);
        if (addr > mem_.size() || n > mem_.size() - addr)
            fail(ErrorKind::Fault, "global access out of bounds at offset " +
                                       std::to_string(addr) + " size " + std::to_string(n));
        uint64_t raw = 0;
        std::memcpy(&raw, mem_.data() + addr, n);
        return ir::canonical_bits(t, raw);
    }

    void mem_store(uint64_t addr, SemType t, uint64_t slot) {
        uint32_t n = ir::element_size(t);
        if (addr > mem_.size() || n > mem_.size() - addr)
            fail(ErrorKind::Fault, "global access out of bounds at offset " +
                                       std::to_string(addr) + " size " + std::to_string(n));
        std::memcpy(mem_.data() + addr, &slot, n);
    }

    void load(Warp& w, uint32_t l, const ir::Instruction& in) {
        uint64_t* regs = w.regs[l].data();
        uint64_t addr = eval::read_operand(in.srcs[0], regs) + in.mem_offset;
        uint32_t n = ir::element_size(in.sem_type);
        uint64_t raw = 0;
        switch (*in.space) {
            case ir::MemSpace::GLOBAL:
                regs[in.dst->id] = mem_load(addr, in.sem_type);
                return;
            case ir::MemSpace::SHARED: {
                auto& sh = blocks_[w.block].shared;
                if (addr > sh.size() || n > sh.size() - addr)
                    fail(ErrorKind::Fault, "shared access out of bounds at offset " +
                                               std::to_string(addr));
                std::memcpy(&raw, sh.data() + addr, n);
                break;
            }
            case ir::MemSpace::LOCAL: {
                auto& loc = w.local[l];
                if (addr + n > kLocalMemCap)
                    fail(ErrorKind::Fault, "local access beyond the private space limit");
                if (addr + n > loc.size()) loc.resize(size_t(addr + n), 0);
                std::memcpy(&raw, loc.data() + addr, n);
                break;
            }
        }
        regs[in.dst->id] = ir::canonical_bits(in.sem_type, raw);
    }

    void store(Warp& w, uint32_t l, const ir::Instruction& in) {
        uint64_t* regs = w.regs[l].data();
        uint64_t addr = eval::read_operand(in.srcs[0], regs) + in.mem_offset;
        uint64_t slot = eval::read_operand(in.srcs[1], regs);
        uint32_t n = ir::element_size(in.sem_type);
        switch (*in.space) {
            case ir::MemSpace::GLOBAL:
                mem_store(addr, in.sem_type, slot);
                return;
            case ir::MemSpace::SHARED: {
                auto& sh = blocks_[w.block].shared;
                if (addr > sh.size() || n > sh.size() - addr)
                    fail(ErrorKind::Fault, "shared access out of bounds at offset " +
                                               std::to_string(addr));
                std::memcpy(sh.data() + addr, &slot, n);
                return;
            }
            case ir::MemSpace::LOCAL: {
                auto& loc = w.local[l];
                if (addr + n > kLocalMemCap)
                    fail(ErrorKind::Fault, "local access beyond the private space limit");
                if (addr + n > loc.size()) loc.resize(size_t(addr + n), 0);
                std::memcpy(loc.data() + addr, &slot, n);
                return;
            }
        }
    }
};

}  // namespace

std::unique_ptr<Device> make_simt_device(const ir::DeviceDesc& desc) {
    return std::make_unique<SimtDevice>(desc);
}

}  // namespace hetgpu::device

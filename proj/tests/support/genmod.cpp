#include "genmod.h"

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "corpus.h"
#include "hetgpu/text.h"

using namespace hetgpu;
using ir::Opcode;
using ir::SemType;

namespace testsup {

namespace {

const SemType kValueTypes[] = {SemType::U32, SemType::S32, SemType::U64,
                               SemType::F32, SemType::F64};

struct Gen {
    Rng rng;
    ir::Kernel k;
    std::vector<ir::RegisterRef> regs;          // every declared register
    std::set<uint32_t> defined;                 // defined-before-here ids
    uint32_t budget = 0;                        // instructions left to emit

    explicit Gen(uint64_t seed) : rng(seed) {}

    std::vector<ir::RegisterRef> of_type(SemType t, bool must_be_defined) const {
        std::vector<ir::RegisterRef> v;
        for (const auto& r : regs)
            if (r.type == t && (!must_be_defined || defined.count(r.id))) v.push_back(r);
        return v;
    }

    bool pick_reg(SemType t, bool need_defined, ir::RegisterRef* out) {
        auto v = of_type(t, need_defined);
        if (v.empty()) return false;
        *out = v[rng.below(v.size())];
        return true;
    }

    ir::Immediate imm_for(SemType t) {
        uint64_t raw = rng.next();
        if (rng.below(3) == 0) raw &= 0xff;  // mix in small values
        return {ir::canonical_bits(t, raw)};
    }

    // Fills srcs/dst per the signature; returns false when no suitable
    // defined register exists for some slot.
    bool build_instruction(Opcode op, ir::Instruction* out) {
        const ir::Signature& sig = ir::signature_of(op);
        std::vector<SemType> allowed;
        for (SemType t : {SemType::U32, SemType::S32, SemType::U64, SemType::F32,
                          SemType::F64, SemType::PRED})
            if (sig.allowed_types & ir::type_bit(t)) allowed.push_back(t);
        if (allowed.empty()) allowed.push_back(SemType::U32);
        ir::Instruction in;
        in.opcode = op;
        in.sem_type = allowed[rng.below(allowed.size())];
        if (sig.needs_space) {
            // SHARED only when the kernel actually allocates shared memory
            ir::MemSpace pool[3] = {ir::MemSpace::GLOBAL, ir::MemSpace::LOCAL,
                                    ir::MemSpace::SHARED};
            in.space = pool[rng.below(k.shared_mem_bytes ? 3 : 2)];
            in.mem_offset = int64_t(rng.below(5)) * 4;
        }
        for (uint8_t i = 0; i < sig.arity; ++i) {
            ir::RegisterRef r;
            switch (sig.slots[i]) {
                case ir::SlotRule::SAME:
                    if (in.sem_type != SemType::PRED && rng.below(3) == 0) {
                        in.srcs.push_back(imm_for(in.sem_type));
                    } else {
                        if (!pick_reg(in.sem_type, true, &r)) return false;
                        in.srcs.push_back(r);
                    }
                    break;
                case ir::SlotRule::PRED:
                    if (!pick_reg(SemType::PRED, true, &r)) return false;
                    in.srcs.push_back(r);
                    break;
                case ir::SlotRule::U32:
                    if (rng.below(2) == 0) {
                        in.srcs.push_back(ir::Immediate{rng.below(33)});
                    } else {
                        if (!pick_reg(SemType::U32, true, &r)) return false;
                        in.srcs.push_back(r);
                    }
                    break;
                case ir::SlotRule::ADDR:
                    if (!pick_reg(SemType::U64, true, &r)) return false;
                    in.srcs.push_back(r);
                    break;
                case ir::SlotRule::DIM_IMM:
                    in.srcs.push_back(ir::Immediate{rng.below(3)});
                    break;
                case ir::SlotRule::REG_SRC: {
                    SemType t = kValueTypes[rng.below(5)];
                    if (!pick_reg(t, true, &r)) return false;
                    in.srcs.push_back(r);
                    break;
                }
            }
        }
        SemType dst_t;
        switch (sig.result) {
            case ir::ResultRule::NONE: *out = std::move(in); return true;
            case ir::ResultRule::SAME: dst_t = in.sem_type; break;
            case ir::ResultRule::PRED: dst_t = SemType::PRED; break;
            case ir::ResultRule::U32: dst_t = SemType::U32; break;
            case ir::ResultRule::U64: dst_t = SemType::U64; break;
            default: return false;
        }
        ir::RegisterRef d;
        if (!pick_reg(dst_t, false, &d)) return false;
        in.dst = d;
        *out = std::move(in);
        return true;
    }

    // Emits one random instruction into `r`, updating `defined`.
    void emit_instruction(ir::Region& r) {
        static const Opcode menu[] = {
            Opcode::ADD, Opcode::SUB, Opcode::MUL, Opcode::DIV, Opcode::REM,
            Opcode::FMA, Opcode::MIN, Opcode::MAX, Opcode::AND, Opcode::OR,
            Opcode::XOR, Opcode::NOT, Opcode::SHL, Opcode::SHR, Opcode::SETP_EQ,
            Opcode::SETP_NE, Opcode::SETP_LT, Opcode::SETP_LE, Opcode::SETP_GT,
            Opcode::SETP_GE, Opcode::MOV, Opcode::CVT, Opcode::GET_GLOBAL_ID,
            Opcode::GET_LOCAL_ID, Opcode::GET_BLOCK_ID, Opcode::GET_BLOCK_DIM,
            Opcode::GET_GRID_DIM, Opcode::LD, Opcode::ST, Opcode::ATOM_ADD,
            Opcode::ATOM_CAS, Opcode::BAR_SHARED, Opcode::BAR_GLOBAL,
            Opcode::VOTE_ANY, Opcode::VOTE_ALL, Opcode::BALLOT, Opcode::SHUFFLE,
            Opcode::SET_PREDICATE,
        };
        for (int attempt = 0; attempt < 8; ++attempt) {
            Opcode op = menu[rng.below(std::size(menu))];
            ir::Instruction in;
            if (!build_instruction(op, &in)) continue;
            if (in.dst) defined.insert(in.dst->id);
            r.items.emplace_back(std::move(in));
            return;
        }
        // always-feasible fallback: load an immediate into some register
        ir::Instruction in;
        in.opcode = Opcode::MOV;
        ir::RegisterRef d = regs[rng.below(regs.size())];
        while (d.type == SemType::PRED) d = regs[rng.below(regs.size())];
        in.sem_type = d.type;
        in.dst = d;
        in.srcs.push_back(imm_for(d.type));
        defined.insert(d.id);
        r.items.emplace_back(std::move(in));
    }

    // Definitions made inside a then-only branch do not survive it; with an
    // else, the intersection of both branches' definitions does.
    void emit_pred_block(ir::Region& r, uint32_t depth) {
        ir::RegisterRef p;
        if (!pick_reg(SemType::PRED, true, &p)) return;
        ir::PredBlock pb;
        pb.predicate = p;
        std::set<uint32_t> before = defined;
        gen_region(pb.then_region, depth + 1, 1 + rng.below(4));
        if (rng.below(6) == 0) {
            ir::Instruction ret;
            ret.opcode = Opcode::RETURN;
            pb.then_region.items.emplace_back(std::move(ret));
        }
        std::set<uint32_t> after_then = defined;
        defined = before;
        if (rng.below(2) == 0) {
            pb.else_region.emplace();
            gen_region(*pb.else_region, depth + 1, 1 + rng.below(4));
            std::set<uint32_t> after_else = defined;
            defined = before;
            for (uint32_t id : after_then)
                if (after_else.count(id)) defined.insert(id);
        }
        r.items.emplace_back(std::move(pb));
    }

    void emit_loop_block(ir::Region& r, uint32_t depth) {
        auto preds = of_type(SemType::PRED, false);
        if (preds.empty()) return;
        ir::LoopBlock lb;
        lb.break_predicate = preds[rng.below(preds.size())];
        gen_region(lb.body, depth + 1, 1 + rng.below(4));
        // the break predicate must be defined when the body bottom is reached
        ir::Instruction setp;
        setp.opcode = Opcode::SETP_NE;
        setp.sem_type = SemType::U32;
        setp.dst = lb.break_predicate;
        ir::RegisterRef u;
        if (pick_reg(SemType::U32, true, &u))
            setp.srcs.push_back(u);
        else
            setp.srcs.push_back(ir::Immediate{1});
        setp.srcs.push_back(ir::Immediate{0});
        lb.body.items.emplace_back(std::move(setp));
        defined.insert(lb.break_predicate.id);
        if (rng.below(2) == 0) lb.trip_annotation = int64_t(1 + rng.below(128));
        r.items.emplace_back(std::move(lb));
    }

    void gen_region(ir::Region& r, uint32_t depth, uint32_t max_items) {
        for (uint32_t i = 0; i < max_items && budget > 0; ++i) {
            budget--;
            uint64_t roll = rng.below(10);
            if (depth < 3 && roll == 0)
                emit_pred_block(r, depth);
            else if (depth < 3 && roll == 1)
                emit_loop_block(r, depth);
            else
                emit_instruction(r);
        }
    }

    ir::Kernel generate(const std::string& name) {
        k = ir::Kernel{};
        k.name = name;
        k.shared_mem_bytes = rng.below(2) ? 0 : 64 + rng.below(16) * 64;
        uint32_t next_id = 0;
        uint32_t nparams = 1 + uint32_t(rng.below(4));
        for (uint32_t i = 0; i < nparams; ++i) {
            SemType t = kValueTypes[rng.below(5)];
            ir::RegisterDecl d{next_id, t, uint8_t(t == SemType::U64 && rng.below(2) ? 1 : 0)};
            k.registers.push_back(d);
            k.params.push_back({text::register_name(next_id, t), {next_id, t}});
            regs.push_back({next_id, t});
            defined.insert(next_id);
            next_id++;
        }
        struct Pool { SemType t; uint32_t n; };
        Pool pools[] = {{SemType::U32, 3}, {SemType::S32, 1}, {SemType::U64, 2},
                        {SemType::F32, 2}, {SemType::F64, 1}, {SemType::PRED, 2}};
        for (const auto& p : pools)
            for (uint32_t i = 0; i < p.n + rng.below(2); ++i) {
                k.registers.push_back({next_id, p.t, 0});
                regs.push_back({next_id, p.t});
                next_id++;
            }
        budget = 5 + uint32_t(rng.below(36));
        gen_region(k.body, 0, budget);
        if (rng.below(2) == 0) {
            ir::Instruction ret;
            ret.opcode = Opcode::RETURN;
            k.body.items.emplace_back(std::move(ret));
        }
        return std::move(k);
    }
};

}  // namespace

ir::Module random_module(uint64_t seed) {
    Rng rng(seed ^ 0xabcdef12345ull);
    ir::Module m;
    uint32_t nk = 1 + uint32_t(rng.below(3));
    for (uint32_t i = 0; i < nk; ++i) {
        Gen g(seed * 1000003 + i);
        m.kernels.push_back(g.generate("gen_" + std::to_string(seed % 100000) + "_k" +
                                       std::to_string(i)));
    }
    auto rep = ir::finalize(m);
    if (!rep.ok())
        throw std::runtime_error("random_module(" + std::to_string(seed) +
                                 ") failed validation:\n" + rep.to_string());
    return m;
}

snapshot::StateBlob random_blob(uint64_t seed) {
    Rng rng(seed ^ 0x5151515151ull);
    snapshot::StateBlob b;
    for (auto& x : b.module_id) x = uint8_t(rng.next());
    uint32_t name_len = uint32_t(rng.below(13));
    for (uint32_t i = 0; i < name_len; ++i)
        b.kernel.push_back(char('!' + rng.below(94)));  // any printable byte
    for (int i = 0; i < 3; ++i) b.grid[i] = uint32_t(rng.below(64)) + 1;
    for (int i = 0; i < 3; ++i) b.block[i] = uint32_t(rng.below(64)) + 1;
    uint32_t nargs = uint32_t(rng.below(6));
    for (uint32_t i = 0; i < nargs; ++i)
        b.args.push_back({uint8_t(rng.below(2)), rng.next()});
    b.completed.resize(rng.below(9));
    for (auto& x : b.completed) x = uint8_t(rng.next());
    uint32_t ndumps = uint32_t(rng.below(4));
    for (uint32_t i = 0; i < ndumps; ++i) {
        snapshot::BlobDump d;
        d.block_index = uint32_t(rng.below(1000));
        d.resume_point_id = uint32_t(rng.below(50));
        d.thread_count = uint32_t(rng.below(65));
        d.exited.resize((d.thread_count + 7) / 8);
        for (auto& x : d.exited) x = uint8_t(rng.next());
        uint32_t nregs = uint32_t(rng.below(7));
        for (uint32_t r = 0; r < nregs; ++r)
            d.reg_layout.push_back({uint32_t(rng.below(64)), uint8_t(rng.below(6))});
        d.values.resize(size_t(d.thread_count) * nregs);
        for (auto& v : d.values) v = rng.next();
        d.shared.resize(rng.below(65));
        for (auto& x : d.shared) x = uint8_t(rng.next());
        b.dumps.push_back(std::move(d));
    }
    uint32_t nmem = uint32_t(rng.below(4));
    uint64_t vp = 1;
    for (uint32_t i = 0; i < nmem; ++i) {
        snapshot::MemEntry e;
        vp += 1 + rng.below(10);
        e.vp_id = vp;
        e.bytes.resize(rng.below(129));
        for (auto& x : e.bytes) x = uint8_t(rng.next());
        b.memory.push_back(std::move(e));
    }
    b.segment_x = uint32_t(rng.below(100));
    b.migration_mode = rng.below(2) != 0;
    b.sched_seed = rng.next();
    return b;
}

}  // namespace testsup

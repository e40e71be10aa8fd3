#include "hetgpu/lowering.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "hetgpu/error.h"
#include "hetgpu/text.h"

namespace hetgpu::lowering {

using ir::Instruction;
using ir::InstructionPath;
using ir::LoopBlock;
using ir::Opcode;
using ir::PredBlock;
using ir::Region;
using ir::RegionItem;
using ir::RegisterRef;
using ir::SemType;

const char* to_string(MimdStrategy s) {
    switch (s) {
        case MimdStrategy::SINGLE_CORE: return "single_core";
        case MimdStrategy::MULTI_CORE: return "multi_core";
        case MimdStrategy::INDEPENDENT_THREAD: return "independent_thread";
    }
    return "?";
}

bool strategy_from_string(const std::string& s, MimdStrategy* out) {
    if (s == "single_core") *out = MimdStrategy::SINGLE_CORE;
    else if (s == "multi_core") *out = MimdStrategy::MULTI_CORE;
    else if (s == "independent_thread" || s == "independent") *out = MimdStrategy::INDEPENDENT_THREAD;
    else return false;
    return true;
}

std::string LoweringConfig::fingerprint() const {
    std::ostringstream os;
    if (model == ir::DeviceModel::SIMT) {
        os << "simt";
    } else {
        os << "mimd:" << to_string(strategy) << ":pw=" << partition_width;
    }
    os << ":segx=" << segment_interval_x << ":mig=" << (migration_mode ? 1 : 0);
    return os.str();
}

uint32_t ResumeTable::id_for(const InstructionPath& p) const {
    for (const auto& [id, path] : entries)
        if (path == p) return id;
    return UINT32_MAX;
}

// ---------------------------------------------------------------------------
// Segment barriers

static uint32_t max_register_id(const ir::Kernel& k) {
    uint32_t m = 0;
    for (const auto& d : k.registers) m = std::max(m, d.id);
    return m;
}

static bool is_loop(const RegionItem& item) {
    return std::holds_alternative<LoopBlock>(item);
}

ir::Kernel insert_segment_barriers(const ir::Kernel& k, uint32_t x) {
    if (x == 0) return k;
    ir::Kernel out = k;
    bool any = false;
    for (const auto& item : out.body.items)
        if (is_loop(item)) { any = true; break; }
    if (!any) return out;

    uint32_t base = max_register_id(out) + 1;
    RegisterRef ctr{base + 0, SemType::U32};
    RegisterRef tmp{base + 1, SemType::U32};
    RegisterRef at_interval{base + 2, SemType::PRED};
    RegisterRef past_first{base + 3, SemType::PRED};
    RegisterRef fire{base + 4, SemType::PRED};
    out.registers.push_back({ctr.id, ctr.type, 0});
    out.registers.push_back({tmp.id, tmp.type, 0});
    out.registers.push_back({at_interval.id, at_interval.type, 0});
    out.registers.push_back({past_first.id, past_first.type, 0});
    out.registers.push_back({fire.id, fire.type, 0});

    auto inst = [](Opcode op, SemType t, std::optional<RegisterRef> dst,
                   std::vector<ir::Operand> srcs) {
        Instruction in;
        in.opcode = op;
        in.sem_type = t;
        in.dst = dst;
        in.srcs = std::move(srcs);
        return in;
    };

    std::vector<RegionItem> rebuilt;
    for (auto& item : out.body.items) {
        if (!is_loop(item)) {
            rebuilt.push_back(std::move(item));
            continue;
        }
        auto& loop = std::get<LoopBlock>(item);
        // counter resets before each top-level loop, so one set of scratch
        // registers serves them all
        rebuilt.push_back(inst(Opcode::MOV, SemType::U32, ctr, {ir::Immediate{0}}));

        std::vector<RegionItem> body;
        body.push_back(inst(Opcode::REM, SemType::U32, tmp,
                            {ctr, ir::Immediate{x}}));
        body.push_back(inst(Opcode::SETP_EQ, SemType::U32, at_interval,
                            {tmp, ir::Immediate{0}}));
        body.push_back(inst(Opcode::SETP_GT, SemType::U32, past_first,
                            {ctr, ir::Immediate{0}}));
        body.push_back(inst(Opcode::AND, SemType::PRED, fire,
                            {at_interval, past_first}));
        PredBlock gate;
        gate.predicate = fire;
        gate.then_region.items.push_back(
            inst(Opcode::BAR_GLOBAL, SemType::U32, std::nullopt, {}));
        body.push_back(std::move(gate));
        for (auto& bi : loop.body.items) body.push_back(std::move(bi));
        body.push_back(inst(Opcode::ADD, SemType::U32, ctr,
                            {ctr, ir::Immediate{1}}));
        loop.body.items = std::move(body);
        rebuilt.push_back(std::move(item));
    }
    out.body.items = std::move(rebuilt);
    ir::refresh_meta(out);
    return out;
}

// ---------------------------------------------------------------------------
// Resume points

ResumeTable assign_resume_points(const ir::Kernel& k) {
    ResumeTable rt;
    rt.entries[0] = InstructionPath{};
    uint32_t next = 1;
    ir::for_each_instruction(k.body, [&](const Instruction& in, const InstructionPath& p) {
        if (in.opcode == Opcode::BAR_SHARED || in.opcode == Opcode::BAR_GLOBAL)
            rt.entries[next++] = p;
    });
    return rt;
}

// ---------------------------------------------------------------------------
// Liveness

namespace {

struct RegSet {
    std::set<uint32_t> ids;
    std::map<uint32_t, SemType> types;

    void add(const RegisterRef& r) {
        ids.insert(r.id);
        types[r.id] = r.type;
    }
    void remove(uint32_t id) { ids.erase(id); }
    void merge(const RegSet& o) {
        for (uint32_t id : o.ids) {
            ids.insert(id);
            types[id] = o.types.at(id);
        }
    }
    bool operator==(const RegSet& o) const { return ids == o.ids; }

    std::vector<RegisterRef> sorted() const {
        std::vector<RegisterRef> v;
        for (uint32_t id : ids) v.push_back({id, types.at(id)});
        return v;
    }
};

struct LivenessPass {
    const ResumeTable& rt;
    LivenessTable table;
    InstructionPath path;

    void record(const RegSet& live) {
        uint32_t id = rt.id_for(path);
        if (id != UINT32_MAX) table[id] = live.sorted();
    }

    // live-out -> live-in over one region, visiting items in reverse
    RegSet backward(const Region& r, RegSet live, bool rec) {
        for (size_t i = r.items.size(); i-- > 0;) {
            path.push_back(uint32_t(i));
            const RegionItem& item = r.items[i];
            if (const auto* in = std::get_if<Instruction>(&item)) {
                if (rec && (in->opcode == Opcode::BAR_SHARED ||
                            in->opcode == Opcode::BAR_GLOBAL))
                    record(live);  // barriers define/use nothing: after == before
                if (in->opcode == Opcode::RETURN) {
                    // a returning lane needs nothing downstream, but other
                    // lanes continue; keep the set (conservative and simple)
                } else {
                    if (in->dst) live.remove(in->dst->id);
                    for (const auto& src : in->srcs)
                        if (const auto* reg = std::get_if<RegisterRef>(&src)) live.add(*reg);
                }
            } else if (const auto* pb = std::get_if<PredBlock>(&item)) {
                RegSet out = live;
                path.push_back(0);
                RegSet t = backward(pb->then_region, out, rec);
                path.back() = 1;
                RegSet e = pb->else_region ? backward(*pb->else_region, out, rec) : out;
                path.pop_back();
                t.merge(e);
                t.add(pb->predicate);
                live = std::move(t);
            } else {
                const auto& lb = std::get<LoopBlock>(item);
                RegSet exit_live = live;
                RegSet in;
                path.push_back(0);
                while (true) {
                    RegSet bottom = exit_live;
                    bottom.add(lb.break_predicate);
                    bottom.merge(in);
                    RegSet next = backward(lb.body, bottom, false);
                    if (next == in) break;
                    in = std::move(next);
                }
                if (rec) {
                    RegSet bottom = exit_live;
                    bottom.add(lb.break_predicate);
                    bottom.merge(in);
                    backward(lb.body, bottom, true);
                }
                path.pop_back();
                live = in;
            }
            path.pop_back();
        }
        return live;
    }
};

}  // namespace

LivenessTable compute_liveness(const ir::Kernel& k, const ResumeTable& rt) {
    LivenessPass pass{rt, {}, {}};
    RegSet entry = pass.backward(k.body, RegSet{}, true);
    pass.table[0] = entry.sorted();
    return pass.table;
}

// ---------------------------------------------------------------------------
// Flattening

namespace {

struct Flattener {
    const ResumeTable& rt;
    bool migration_mode;
    FlatProgram prog;
    InstructionPath path;
    uint32_t next_div_site = 0;

    uint32_t emit(FlatOp op) {
        prog.ops.push_back(std::move(op));
        return uint32_t(prog.ops.size() - 1);
    }

    void region(const Region& r) {
        for (size_t i = 0; i < r.items.size(); ++i) {
            path.push_back(uint32_t(i));
            const RegionItem& item = r.items[i];
            if (const auto* in = std::get_if<Instruction>(&item)) {
                instruction(*in);
            } else if (const auto* pb = std::get_if<PredBlock>(&item)) {
                pred_block(*pb);
            } else {
                loop_block(std::get<LoopBlock>(item));
            }
            path.pop_back();
        }
    }

    void instruction(const Instruction& in) {
        FlatOp op;
        op.inst = in;
        if (in.opcode == Opcode::BAR_SHARED || in.opcode == Opcode::BAR_GLOBAL) {
            op.k = FlatOp::K::BAR;
            uint32_t site = rt.id_for(path);
            op.site = site;
            emit(std::move(op));
            if (migration_mode) {
                FlatOp pc;
                pc.k = FlatOp::K::PAUSE_CHECK;
                pc.site = site;
                prog.resume_pc[site] = emit(std::move(pc));
            } else {
                prog.resume_pc[site] = uint32_t(prog.ops.size());
            }
        } else if (in.opcode == Opcode::RETURN) {
            op.k = FlatOp::K::RET;
            emit(std::move(op));
        } else {
            op.k = FlatOp::K::EXEC;
            emit(std::move(op));
        }
    }

    void pred_block(const PredBlock& pb) {
        FlatOp push;
        push.k = FlatOp::K::PRED_PUSH;
        push.pred = pb.predicate;
        push.has_else = pb.else_region.has_value();
        push.site = next_div_site++;
        uint32_t push_pc = emit(std::move(push));

        path.push_back(0);
        region(pb.then_region);
        path.pop_back();

        uint32_t else_pc = 0;
        if (pb.else_region) {
            FlatOp el;
            el.k = FlatOp::K::PRED_ELSE;
            else_pc = emit(std::move(el));
            path.push_back(1);
            region(*pb.else_region);
            path.pop_back();
        }

        FlatOp pop;
        pop.k = FlatOp::K::PRED_POP;
        uint32_t pop_pc = emit(std::move(pop));

        prog.ops[push_pc].t0 = pb.else_region ? else_pc : pop_pc;
        prog.ops[push_pc].t1 = pop_pc;
        if (pb.else_region) prog.ops[else_pc].t1 = pop_pc;
    }

    void loop_block(const LoopBlock& lb) {
        FlatOp begin;
        begin.k = FlatOp::K::LOOP_BEGIN;
        uint32_t begin_pc = emit(std::move(begin));

        path.push_back(0);
        region(lb.body);
        path.pop_back();

        FlatOp end;
        end.k = FlatOp::K::LOOP_END;
        end.pred = lb.break_predicate;
        end.t0 = begin_pc + 1;
        end.site = next_div_site++;
        uint32_t end_pc = emit(std::move(end));
        prog.ops[begin_pc].t1 = end_pc + 1;
    }

    FlatProgram run(const ir::Kernel& k) {
        prog.resume_pc[0] = 0;
        region(k.body);
        FlatOp ret;
        ret.k = FlatOp::K::RET;
        ret.inst.opcode = Opcode::RETURN;
        emit(std::move(ret));
        prog.divergence_sites = next_div_site;
        rebuild_frames();
        return std::move(prog);
    }

    // Linear rescan with backpatched targets: the construct stack at each
    // suspension op is exactly what resume must rebuild.
    void rebuild_frames() {
        std::vector<ResumeFrame> stack;
        for (uint32_t pc = 0; pc < prog.ops.size(); ++pc) {
            const FlatOp& op = prog.ops[pc];
            switch (op.k) {
                case FlatOp::K::PRED_PUSH: {
                    ResumeFrame f;
                    f.push_pc = pc;
                    f.has_else = op.has_else;
                    f.else_pc = op.has_else ? op.t0 : 0;
                    f.end_pc = op.t1;
                    stack.push_back(f);
                    break;
                }
                case FlatOp::K::PRED_ELSE:
                    stack.back().in_else = true;
                    break;
                case FlatOp::K::PRED_POP:
                    stack.pop_back();
                    break;
                case FlatOp::K::LOOP_BEGIN: {
                    ResumeFrame f;
                    f.is_loop = true;
                    f.push_pc = pc;
                    f.end_pc = op.t1 - 1;
                    stack.push_back(f);
                    break;
                }
                case FlatOp::K::LOOP_END:
                    stack.pop_back();
                    break;
                case FlatOp::K::BAR:
                    if (!migration_mode) prog.resume_frames[op.site] = stack;
                    break;
                case FlatOp::K::PAUSE_CHECK:
                    prog.resume_frames[op.site] = stack;
                    break;
                default:
                    break;
            }
        }
        prog.resume_frames[0] = {};
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Entry points

static DeviceProgram lower_common(const ir::Kernel& k, const std::array<uint8_t, 8>& module_id,
                                  LoweringConfig cfg) {
    DeviceProgram p;
    p.model = cfg.model;
    p.strategy = cfg.strategy;
    p.config_used = cfg;
    p.kernel_name = k.name;
    p.module_id = module_id;
    p.kernel = cfg.segment_interval_x ? insert_segment_barriers(k, cfg.segment_interval_x) : k;
    p.resume_table = assign_resume_points(p.kernel);
    p.liveness = compute_liveness(p.kernel, p.resume_table);
    Flattener fl{p.resume_table, cfg.migration_mode, {}, {}, 0};
    p.flat = fl.run(p.kernel);
    p.uses_ballot = ir::kernel_uses_ballot(p.kernel);
    return p;
}

DeviceProgram lower_for_simt(const ir::Kernel& k, const std::array<uint8_t, 8>& module_id,
                             const ir::DeviceDesc& desc, LoweringConfig cfg) {
    std::string why;
    if (!ir::desc_valid(desc, &why)) fail(ErrorKind::Lowering, "bad device description: " + why);
    if (desc.model != ir::DeviceModel::SIMT)
        fail(ErrorKind::Lowering, "lower_for_simt called with a non-SIMT device");
    cfg.model = ir::DeviceModel::SIMT;
    cfg.partition_width = 0;
    return lower_common(k, module_id, cfg);
}

DeviceProgram lower_for_mimd(const ir::Kernel& k, const std::array<uint8_t, 8>& module_id,
                             const ir::DeviceDesc& desc, LoweringConfig cfg) {
    std::string why;
    if (!ir::desc_valid(desc, &why)) fail(ErrorKind::Lowering, "bad device description: " + why);
    if (desc.model != ir::DeviceModel::MIMD)
        fail(ErrorKind::Lowering, "lower_for_mimd called with a non-MIMD device");
    cfg.model = ir::DeviceModel::MIMD;
    switch (cfg.strategy) {
        case MimdStrategy::SINGLE_CORE:
            cfg.partition_width = desc.lane_count;
            if (k.shared_mem_bytes > desc.scratchpad_bytes)
                fail(ErrorKind::Lowering,
                     "kernel '" + k.name + "' declares " + std::to_string(k.shared_mem_bytes) +
                         " shared bytes but the scratchpad holds " +
                         std::to_string(desc.scratchpad_bytes) +
                         "; use the multi_core strategy, which places shared memory in global "
                         "memory");
            break;
        case MimdStrategy::MULTI_CORE:
            if (cfg.partition_width == 0) cfg.partition_width = desc.lane_count;
            break;
        case MimdStrategy::INDEPENDENT_THREAD:
            if (cfg.partition_width == 0) cfg.partition_width = 1;
            break;
    }
    if (cfg.partition_width > desc.lane_count)
        fail(ErrorKind::Lowering, "partition width " + std::to_string(cfg.partition_width) +
                                      " exceeds the device's " +
                                      std::to_string(desc.lane_count) + " lanes per core");
    return lower_common(k, module_id, cfg);
}

// ---------------------------------------------------------------------------
// Listing

static std::string mimd_exec_text(const Instruction& in, MimdStrategy strat) {
    // vector-unit spelling for the lanes-in-a-core strategies, scalar for the
    // one-thread-per-context strategy
    std::string base = text::instruction_text(in);
    std::string prefix;
    bool vec = strat != MimdStrategy::INDEPENDENT_THREAD;
    switch (in.opcode) {
        case Opcode::LD: prefix = vec ? "dma.read   " : "ld.scalar  "; break;
        case Opcode::ST: prefix = vec ? "dma.write  " : "st.scalar  "; break;
        case Opcode::ATOM_ADD:
        case Opcode::ATOM_CAS: prefix = "lock.rmw   "; break;
        default: prefix = vec ? "v.exec     " : "s.exec     "; break;
    }
    return prefix + base;
}

std::string dump_text(const DeviceProgram& p) {
    std::ostringstream os;
    os << "; kernel " << p.kernel_name << " module " << ir::module_id_hex(p.module_id) << "\n";
    os << "; target " << (p.model == ir::DeviceModel::SIMT ? "simt" : "mimd");
    if (p.model == ir::DeviceModel::MIMD)
        os << " strategy " << to_string(p.strategy) << " partition_width "
           << p.config_used.partition_width;
    os << "\n";
    os << "; config " << p.config_used.fingerprint() << "\n";
    bool simt = p.model == ir::DeviceModel::SIMT;
    const char* bar_word = simt ? "warp.bar"
                          : p.strategy == MimdStrategy::SINGLE_CORE ? "core.bar"
                                                                    : "mesh.bar";
    for (uint32_t pc = 0; pc < p.flat.ops.size(); ++pc) {
        const FlatOp& op = p.flat.ops[pc];
        char buf[16];
        std::snprintf(buf, sizeof buf, "%4u: ", pc);
        os << buf;
        switch (op.k) {
            case FlatOp::K::EXEC:
                os << (simt ? text::instruction_text(op.inst)
                            : mimd_exec_text(op.inst, p.strategy));
                break;
            case FlatOp::K::PRED_PUSH:
                os << (simt ? "mask.push " : "vmask.push ")
                   << text::register_name(op.pred.id, op.pred.type) << " else->" << op.t0
                   << " end->" << op.t1 << " site=" << op.site;
                break;
            case FlatOp::K::PRED_ELSE:
                os << (simt ? "mask.else " : "vmask.else ") << "end->" << op.t1;
                break;
            case FlatOp::K::PRED_POP:
                os << (simt ? "mask.pop" : "vmask.pop");
                break;
            case FlatOp::K::LOOP_BEGIN:
                os << "loop.begin exit->" << op.t1;
                break;
            case FlatOp::K::LOOP_END:
                os << "loop.end "
                   << text::register_name(op.pred.id, op.pred.type) << " back->" << op.t0
                   << " site=" << op.site;
                break;
            case FlatOp::K::BAR:
                os << bar_word
                   << (op.inst.opcode == Opcode::BAR_GLOBAL ? ".device" : ".block")
                   << " site=" << op.site;
                break;
            case FlatOp::K::PAUSE_CHECK:
                os << "pause.check site=" << op.site;
                break;
            case FlatOp::K::RET:
                os << "ret";
                break;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace hetgpu::lowering

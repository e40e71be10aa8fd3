#include "hetgpu/ir.h"

#include <algorithm>
#include <cassert>
#include <set>
#include <sstream>

#include "hetgpu/text.h"

namespace hetgpu::ir {

const char* to_string(SemType t) {
    switch (t) {
        case SemType::U32: return "u32";
        case SemType::S32: return "s32";
        case SemType::U64: return "u64";
        case SemType::F32: return "f32";
        case SemType::F64: return "f64";
        case SemType::PRED: return "pred";
    }
    return "?";
}

const char* to_string(MemSpace s) {
    switch (s) {
        case MemSpace::GLOBAL: return "GLOBAL";
        case MemSpace::SHARED: return "SHARED";
        case MemSpace::LOCAL: return "LOCAL";
    }
    return "?";
}

const char* to_string(Opcode op) {
    switch (op) {
        case Opcode::ADD: return "ADD";
        case Opcode::SUB: return "SUB";
        case Opcode::MUL: return "MUL";
        case Opcode::DIV: return "DIV";
        case Opcode::REM: return "REM";
        case Opcode::FMA: return "FMA";
        case Opcode::MIN: return "MIN";
        case Opcode::MAX: return "MAX";
        case Opcode::AND: return "AND";
        case Opcode::OR: return "OR";
        case Opcode::XOR: return "XOR";
        case Opcode::NOT: return "NOT";
        case Opcode::SHL: return "SHL";
        case Opcode::SHR: return "SHR";
        case Opcode::SETP_EQ: return "SETP.EQ";
        case Opcode::SETP_NE: return "SETP.NE";
        case Opcode::SETP_LT: return "SETP.LT";
        case Opcode::SETP_LE: return "SETP.LE";
        case Opcode::SETP_GT: return "SETP.GT";
        case Opcode::SETP_GE: return "SETP.GE";
        case Opcode::MOV: return "MOV";
        case Opcode::CVT: return "CVT";
        case Opcode::GET_GLOBAL_ID: return "GET_GLOBAL_ID";
        case Opcode::GET_LOCAL_ID: return "GET_LOCAL_ID";
        case Opcode::GET_BLOCK_ID: return "GET_BLOCK_ID";
        case Opcode::GET_BLOCK_DIM: return "GET_BLOCK_DIM";
        case Opcode::GET_GRID_DIM: return "GET_GRID_DIM";
        case Opcode::LD: return "LD";
        case Opcode::ST: return "ST";
        case Opcode::ATOM_ADD: return "ATOM_ADD";
        case Opcode::ATOM_CAS: return "ATOM_CAS";
        case Opcode::BAR_SHARED: return "BAR_SHARED";
        case Opcode::BAR_GLOBAL: return "BAR_GLOBAL";
        case Opcode::VOTE_ANY: return "VOTE_ANY";
        case Opcode::VOTE_ALL: return "VOTE_ALL";
        case Opcode::BALLOT: return "BALLOT";
        case Opcode::SHUFFLE: return "SHUFFLE";
        case Opcode::SET_PREDICATE: return "SET_PREDICATE";
        case Opcode::RETURN: return "RETURN";
    }
    return "?";
}

bool is_integer(SemType t) {
    return t == SemType::U32 || t == SemType::S32 || t == SemType::U64;
}

bool is_float(SemType t) { return t == SemType::F32 || t == SemType::F64; }

uint64_t canonical_bits(SemType t, uint64_t raw) {
    switch (t) {
        case SemType::U32:
        case SemType::F32: return raw & 0xFFFFFFFFull;
        case SemType::S32: return uint64_t(int64_t(int32_t(uint32_t(raw))));
        case SemType::U64:
        case SemType::F64: return raw;
        case SemType::PRED: return raw ? 1 : 0;
    }
    return raw;
}

uint32_t element_size(SemType t) {
    switch (t) {
        case SemType::U32:
        case SemType::S32:
        case SemType::F32: return 4;
        case SemType::U64:
        case SemType::F64: return 8;
        case SemType::PRED: return 1;
    }
    return 4;
}

bool operand_eq(const Operand& a, const Operand& b) { return a == b; }

std::string path_to_string(const InstructionPath& p) {
    std::string s = "[";
    for (size_t i = 0; i < p.size(); ++i) {
        if (i) s += '.';
        s += std::to_string(p[i]);
    }
    return s + "]";
}

const RegisterDecl* Kernel::find_register(uint32_t id) const {
    for (const auto& r : registers)
        if (r.id == id) return &r;
    return nullptr;
}

const Kernel* Module::find_kernel(const std::string& name) const {
    for (const auto& k : kernels)
        if (k.name == name) return &k;
    return nullptr;
}

std::string module_id_hex(const std::array<uint8_t, 8>& id) {
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (uint8_t b : id) {
        s += hex[b >> 4];
        s += hex[b & 0xF];
    }
    return s;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

constexpr uint8_t kNumeric = type_bit(SemType::U32) | type_bit(SemType::S32) |
                             type_bit(SemType::U64) | type_bit(SemType::F32) |
                             type_bit(SemType::F64);
constexpr uint8_t kInteger =
    type_bit(SemType::U32) | type_bit(SemType::S32) | type_bit(SemType::U64);
constexpr uint8_t kBitwise = kInteger | type_bit(SemType::PRED);
constexpr uint8_t kAll = kNumeric | type_bit(SemType::PRED);
constexpr uint8_t kPredOnly = type_bit(SemType::PRED);
constexpr uint8_t kU32Only = type_bit(SemType::U32);
constexpr uint8_t kU64Only = type_bit(SemType::U64);

Signature sig(uint8_t arity, std::array<SlotRule, 3> slots, ResultRule res, uint8_t types,
              bool space = false) {
    Signature s;
    s.arity = arity;
    s.slots = slots;
    s.result = res;
    s.allowed_types = types;
    s.needs_space = space;
    return s;
}

}  // namespace

// Untyped opcodes still carry a conventional sem_type so the table stays
// total: BAR/RETURN use U32, VOTE_* use PRED, BALLOT uses U64, GET_* use U32.
const Signature& signature_of(Opcode op) {
    using S = SlotRule;
    using R = ResultRule;
    static const Signature table[] = {
        /* ADD  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* SUB  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* MUL  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* DIV  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* REM  */ sig(2, {S::SAME, S::SAME}, R::SAME, kInteger),
        /* FMA  */ sig(3, {S::SAME, S::SAME, S::SAME}, R::SAME, kNumeric),
        /* MIN  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* MAX  */ sig(2, {S::SAME, S::SAME}, R::SAME, kNumeric),
        /* AND  */ sig(2, {S::SAME, S::SAME}, R::SAME, kBitwise),
        /* OR   */ sig(2, {S::SAME, S::SAME}, R::SAME, kBitwise),
        /* XOR  */ sig(2, {S::SAME, S::SAME}, R::SAME, kBitwise),
        /* NOT  */ sig(1, {S::SAME}, R::SAME, kBitwise),
        /* SHL  */ sig(2, {S::SAME, S::U32}, R::SAME, kInteger),
        /* SHR  */ sig(2, {S::SAME, S::U32}, R::SAME, kInteger),
        /* SETP_EQ */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* SETP_NE */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* SETP_LT */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* SETP_LE */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* SETP_GT */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* SETP_GE */ sig(2, {S::SAME, S::SAME}, R::PRED, kNumeric),
        /* MOV  */ sig(1, {S::SAME}, R::SAME, kAll),
        /* CVT  */ sig(1, {S::REG_SRC}, R::SAME, kNumeric),
        /* GET_GLOBAL_ID */ sig(1, {S::DIM_IMM}, R::U32, kU32Only),
        /* GET_LOCAL_ID  */ sig(1, {S::DIM_IMM}, R::U32, kU32Only),
        /* GET_BLOCK_ID  */ sig(1, {S::DIM_IMM}, R::U32, kU32Only),
        /* GET_BLOCK_DIM */ sig(1, {S::DIM_IMM}, R::U32, kU32Only),
        /* GET_GRID_DIM  */ sig(1, {S::DIM_IMM}, R::U32, kU32Only),
        /* LD   */ sig(1, {S::ADDR}, R::SAME, kNumeric, true),
        /* ST   */ sig(2, {S::ADDR, S::SAME}, R::NONE, kNumeric, true),
        /* ATOM_ADD */ sig(2, {S::ADDR, S::SAME}, R::SAME, kNumeric),
        /* ATOM_CAS */ sig(3, {S::ADDR, S::SAME, S::SAME}, R::SAME, kInteger),
        /* BAR_SHARED */ sig(0, {}, R::NONE, kU32Only),
        /* BAR_GLOBAL */ sig(0, {}, R::NONE, kU32Only),
        /* VOTE_ANY */ sig(1, {S::PRED}, R::PRED, kPredOnly),
        /* VOTE_ALL */ sig(1, {S::PRED}, R::PRED, kPredOnly),
        /* BALLOT   */ sig(1, {S::PRED}, R::U64, kU64Only),
        /* SHUFFLE  */ sig(2, {S::U32, S::SAME}, R::SAME, kNumeric),
        /* SET_PREDICATE */ sig(1, {S::SAME}, R::PRED, kInteger),
        /* RETURN */ sig(0, {}, R::NONE, kU32Only),
    };
    return table[size_t(op)];
}

bool desc_valid(const DeviceDesc& d, std::string* why) {
    auto pow2 = [](uint32_t v) { return v != 0 && (v & (v - 1)) == 0; };
    auto fail = [&](const char* msg) {
        if (why) *why = msg;
        return false;
    };
    if (d.model == DeviceModel::SIMT && !pow2(d.warp_width))
        return fail("warp_width must be a power of two");
    if (d.model == DeviceModel::MIMD) {
        if (!pow2(d.lane_count)) return fail("lane_count must be a power of two");
        if (d.core_count == 0) return fail("core_count must be positive");
    }
    if (d.global_mem_bytes == 0) return fail("global_mem_bytes must be positive");
    return true;
}

namespace {

void walk_const(const Region& r, InstructionPath& path,
                const std::function<void(const Instruction&, const InstructionPath&)>& fn) {
    for (uint32_t i = 0; i < r.items.size(); ++i) {
        path.push_back(i);
        const RegionItem& item = r.items[i];
        if (auto* inst = std::get_if<Instruction>(&item)) {
            fn(*inst, path);
        } else if (auto* pb = std::get_if<PredBlock>(&item)) {
            path.push_back(0);
            walk_const(pb->then_region, path, fn);
            path.back() = 1;
            if (pb->else_region) walk_const(*pb->else_region, path, fn);
            path.pop_back();
        } else if (auto* lb = std::get_if<LoopBlock>(&item)) {
            path.push_back(0);
            walk_const(lb->body, path, fn);
            path.pop_back();
        }
        path.pop_back();
    }
}

void walk_mut(Region& r, InstructionPath& path,
              const std::function<void(Instruction&, const InstructionPath&)>& fn) {
    for (uint32_t i = 0; i < r.items.size(); ++i) {
        path.push_back(i);
        RegionItem& item = r.items[i];
        if (auto* inst = std::get_if<Instruction>(&item)) {
            fn(*inst, path);
        } else if (auto* pb = std::get_if<PredBlock>(&item)) {
            path.push_back(0);
            walk_mut(pb->then_region, path, fn);
            path.back() = 1;
            if (pb->else_region) walk_mut(*pb->else_region, path, fn);
            path.pop_back();
        } else if (auto* lb = std::get_if<LoopBlock>(&item)) {
            path.push_back(0);
            walk_mut(lb->body, path, fn);
            path.pop_back();
        }
        path.pop_back();
    }
}

}  // namespace

void for_each_instruction(const Region& r,
                          const std::function<void(const Instruction&, const InstructionPath&)>& fn) {
    InstructionPath path;
    walk_const(r, path, fn);
}

void for_each_instruction(Region& r,
                          const std::function<void(Instruction&, const InstructionPath&)>& fn) {
    InstructionPath path;
    walk_mut(r, path, fn);
}

bool kernel_uses_ballot(const Kernel& k) {
    bool found = false;
    for_each_instruction(k.body, [&](const Instruction& in, const InstructionPath&) {
        if (in.opcode == Opcode::BALLOT) found = true;
    });
    return found;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& d : diagnostics) {
        os << d.kernel;
        if (!d.path.empty()) os << " " << path_to_string(d.path);
        os << ": " << d.message << "\n";
    }
    return os.str();
}

const InstructionPath kKernelExitPath{0xFFFFFFFFu};

namespace {

std::vector<InstructionPath> compute_suspension_points(const Kernel& k) {
    std::vector<InstructionPath> pts;
    for_each_instruction(k.body, [&](const Instruction& in, const InstructionPath& p) {
        if (in.opcode == Opcode::BAR_SHARED || in.opcode == Opcode::BAR_GLOBAL)
            pts.push_back(p);
    });
    pts.push_back(kKernelExitPath);
    return pts;
}

struct Checker {
    const Kernel& k;
    ValidationReport& rep;

    void diag(const InstructionPath& p, std::string msg) {
        rep.diagnostics.push_back({k.name, p, std::move(msg)});
    }

    bool reg_declared(const RegisterRef& r, const InstructionPath& p, const char* what) {
        const RegisterDecl* d = k.find_register(r.id);
        if (!d) {
            diag(p, std::string(what) + ": register %" + std::to_string(r.id) +
                        " is not declared");
            return false;
        }
        if (d->type != r.type) {
            diag(p, std::string(what) + ": register %" + std::to_string(r.id) +
                        " declared ." + to_string(d->type) + " but referenced as ." +
                        to_string(r.type));
            return false;
        }
        return true;
    }

    void check_instruction(const Instruction& in, const InstructionPath& p) {
        const Signature& s = signature_of(in.opcode);
        if (!(s.allowed_types & type_bit(in.sem_type))) {
            diag(p, std::string(to_string(in.opcode)) + " does not operate on ." +
                        to_string(in.sem_type));
            return;
        }
        if (in.srcs.size() != s.arity) {
            diag(p, std::string(to_string(in.opcode)) + " expects " +
                        std::to_string(s.arity) + " operands, got " +
                        std::to_string(in.srcs.size()));
            return;
        }
        if (s.needs_space != in.space.has_value()) {
            diag(p, std::string(to_string(in.opcode)) +
                        (s.needs_space ? " requires a memory space"
                                       : " does not take a memory space"));
        }
        bool has_addr = false;
        for (uint8_t i = 0; i < s.arity; ++i) {
            const Operand& op = in.srcs[i];
            const RegisterRef* reg = std::get_if<RegisterRef>(&op);
            const Immediate* imm = std::get_if<Immediate>(&op);
            switch (s.slots[i]) {
                case SlotRule::SAME:
                    if (reg) {
                        if (reg_declared(*reg, p, "operand") && reg->type != in.sem_type)
                            diag(p, "operand " + std::to_string(i) + " must be ." +
                                        to_string(in.sem_type));
                    }
                    break;
                case SlotRule::PRED:
                    if (reg && reg_declared(*reg, p, "operand") &&
                        reg->type != SemType::PRED)
                        diag(p, "operand " + std::to_string(i) + " must be .pred");
                    break;
                case SlotRule::U32:
                    if (reg && reg_declared(*reg, p, "operand") &&
                        reg->type != SemType::U32)
                        diag(p, "operand " + std::to_string(i) + " must be .u32");
                    break;
                case SlotRule::ADDR:
                    has_addr = true;
                    if (!reg) {
                        diag(p, "address operand must be a .u64 register");
                    } else if (reg_declared(*reg, p, "address") &&
                               reg->type != SemType::U64) {
                        diag(p, "address operand must be a .u64 register");
                    }
                    break;
                case SlotRule::DIM_IMM:
                    if (!imm || imm->bits > 2)
                        diag(p, "dimension operand must be an immediate 0..2");
                    break;
                case SlotRule::REG_SRC:
                    if (!reg) {
                        diag(p, "CVT source must be a register");
                    } else if (reg_declared(*reg, p, "operand") &&
                               reg->type == SemType::PRED) {
                        diag(p, "CVT does not convert predicates");
                    }
                    break;
            }
        }
        if (!has_addr && in.mem_offset != 0)
            diag(p, "memory offset on a non-memory instruction");
        if (in.space && in.opcode != Opcode::LD && in.opcode != Opcode::ST)
            diag(p, "only LD/ST carry a memory space");
        if (in.space == MemSpace::SHARED && k.shared_mem_bytes == 0)
            diag(p, in.opcode == Opcode::ST ? "shared store without shared allocation"
                                            : "shared load without shared allocation");
        SemType want;
        bool want_dst = true;
        switch (s.result) {
            case ResultRule::NONE: want_dst = false; want = SemType::U32; break;
            case ResultRule::SAME: want = in.sem_type; break;
            case ResultRule::PRED: want = SemType::PRED; break;
            case ResultRule::U32: want = SemType::U32; break;
            case ResultRule::U64: want = SemType::U64; break;
            default: want_dst = false; want = SemType::U32; break;
        }
        if (want_dst) {
            if (!in.dst) {
                diag(p, std::string(to_string(in.opcode)) + " needs a destination");
            } else if (reg_declared(*in.dst, p, "destination") && in.dst->type != want) {
                diag(p, std::string("destination must be .") + to_string(want));
            }
        } else if (in.dst) {
            diag(p, std::string(to_string(in.opcode)) + " takes no destination");
        }
    }

    // Forward must-define analysis; returns the set defined after the region.
    std::set<uint32_t> check_defs(const Region& r, std::set<uint32_t> defined,
                                  InstructionPath& path) {
        for (uint32_t i = 0; i < r.items.size(); ++i) {
            path.push_back(i);
            const RegionItem& item = r.items[i];
            if (auto* inst = std::get_if<Instruction>(&item)) {
                for (const Operand& op : inst->srcs) {
                    if (auto* reg = std::get_if<RegisterRef>(&op)) {
                        if (k.find_register(reg->id) && !defined.count(reg->id))
                            diag(path, "use before definition of register %" +
                                           std::to_string(reg->id));
                    }
                }
                if (inst->dst) defined.insert(inst->dst->id);
            } else if (auto* pb = std::get_if<PredBlock>(&item)) {
                if (!defined.count(pb->predicate.id) && k.find_register(pb->predicate.id))
                    diag(path, "use before definition of predicate %" +
                                   std::to_string(pb->predicate.id));
                path.push_back(0);
                std::set<uint32_t> t = check_defs(pb->then_region, defined, path);
                if (pb->else_region) {
                    path.back() = 1;
                    std::set<uint32_t> e = check_defs(*pb->else_region, defined, path);
                    std::set<uint32_t> both;
                    std::set_intersection(t.begin(), t.end(), e.begin(), e.end(),
                                          std::inserter(both, both.begin()));
                    defined = std::move(both);
                }
                path.pop_back();
            } else if (auto* lb = std::get_if<LoopBlock>(&item)) {
                path.push_back(0);
                defined = check_defs(lb->body, std::move(defined), path);
                path.pop_back();
                if (!defined.count(lb->break_predicate.id) &&
                    k.find_register(lb->break_predicate.id))
                    diag(path, "loop break predicate %" +
                                   std::to_string(lb->break_predicate.id) +
                                   " not defined at body end");
            }
            path.pop_back();
        }
        return defined;
    }

    void check_blocks(const Region& r, InstructionPath& path) {
        for (uint32_t i = 0; i < r.items.size(); ++i) {
            path.push_back(i);
            const RegionItem& item = r.items[i];
            if (auto* pb = std::get_if<PredBlock>(&item)) {
                if (pb->predicate.type != SemType::PRED)
                    diag(path, "@PRED predicate must be .pred");
                else
                    reg_declared(pb->predicate, path, "@PRED predicate");
                path.push_back(0);
                check_blocks(pb->then_region, path);
                if (pb->else_region) {
                    path.back() = 1;
                    check_blocks(*pb->else_region, path);
                }
                path.pop_back();
            } else if (auto* lb = std::get_if<LoopBlock>(&item)) {
                if (lb->break_predicate.type != SemType::PRED)
                    diag(path, "@LOOP break predicate must be .pred");
                else
                    reg_declared(lb->break_predicate, path, "@LOOP break predicate");
                path.push_back(0);
                check_blocks(lb->body, path);
                path.pop_back();
            }
            path.pop_back();
        }
    }
};

}  // namespace

ValidationReport validate(const Module& m) {
    ValidationReport rep;
    std::set<std::string> names;
    for (const Kernel& k : m.kernels) {
        if (k.name.empty())
            rep.diagnostics.push_back({k.name, {}, "kernel has no name"});
        if (!names.insert(k.name).second)
            rep.diagnostics.push_back({k.name, {}, "duplicate kernel name"});

        Checker c{k, rep};
        std::set<uint32_t> ids;
        for (const RegisterDecl& d : k.registers) {
            if (!ids.insert(d.id).second)
                rep.diagnostics.push_back(
                    {k.name, {}, "register %" + std::to_string(d.id) + " declared twice"});
            if (d.addr_space != 0 && d.addr_space != 1 && d.addr_space != 3 &&
                d.addr_space != 5)
                rep.diagnostics.push_back(
                    {k.name, {}, "register %" + std::to_string(d.id) +
                                     " has an unknown address-space tag"});
        }
        std::set<uint32_t> defined;
        for (const Param& p : k.params) {
            const RegisterDecl* d = k.find_register(p.reg.id);
            if (!d) {
                rep.diagnostics.push_back(
                    {k.name, {}, "param " + p.name + " has no register declaration"});
                continue;
            }
            if (d->type != p.reg.type)
                rep.diagnostics.push_back(
                    {k.name, {}, "param " + p.name + " type mismatch"});
            if (!defined.insert(p.reg.id).second)
                rep.diagnostics.push_back(
                    {k.name, {}, "param " + p.name + " repeats a register"});
        }

        InstructionPath path;
        c.check_blocks(k.body, path);
        for_each_instruction(
            k.body, [&](const Instruction& in, const InstructionPath& p) {
                c.check_instruction(in, p);
            });
        path.clear();
        c.check_defs(k.body, defined, path);

        if (!k.meta.suspension_points.empty() &&
            k.meta.suspension_points != compute_suspension_points(k))
            rep.diagnostics.push_back(
                {k.name, {}, "suspension_points out of date (run finalize)"});
    }
    return rep;
}

void refresh_meta(Kernel& k) { k.meta.suspension_points = compute_suspension_points(k); }

ValidationReport finalize(Module& m) {
    for (Kernel& k : m.kernels) k.meta.suspension_points = compute_suspension_points(k);
    ValidationReport rep = validate(m);
    if (rep.ok()) {
        std::string canon = text::print(m);
        uint64_t h = fnv1a64(canon.data(), canon.size());
        for (int i = 0; i < 8; ++i) m.module_id[i] = uint8_t(h >> (8 * i));
    }
    return rep;
}

}  // namespace hetgpu::ir

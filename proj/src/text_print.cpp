#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <sstream>
#include <vector>

#include "hetgpu/text.h"

namespace hetgpu::text {

using namespace hetgpu::ir;

std::string register_name(uint32_t id, SemType t) {
    const char* prefix = "%r";
    switch (t) {
        case SemType::PRED: prefix = "%p"; break;
        case SemType::U64:
        case SemType::F64: prefix = "%rd"; break;
        default: break;  // 32-bit scalars
    }
    return prefix + std::to_string(id);
}

namespace {

const char* type_suffix(SemType t) {
    switch (t) {
        case SemType::U32: return "U32";
        case SemType::S32: return "S32";
        case SemType::U64: return "U64";
        case SemType::F32: return "F32";
        case SemType::F64: return "F64";
        case SemType::PRED: return "PRED";
    }
    return "?";
}

// Effective operand slot type, for immediate rendering.
SemType slot_type(SlotRule rule, SemType sem) {
    switch (rule) {
        case SlotRule::SAME: return sem;
        case SlotRule::PRED: return SemType::PRED;
        case SlotRule::U32:
        case SlotRule::DIM_IMM: return SemType::U32;
        case SlotRule::ADDR:
        case SlotRule::REG_SRC: return SemType::U64;
    }
    return sem;
}

std::string operand_text(const Operand& op, SemType slot) {
    if (auto* reg = std::get_if<RegisterRef>(&op)) return register_name(reg->id, reg->type);
    return immediate_text(std::get<Immediate>(op), slot);
}

std::string memory_operand_text(const Operand& op, int64_t offset) {
    std::string s = "[";
    if (auto* reg = std::get_if<RegisterRef>(&op))
        s += register_name(reg->id, reg->type);
    else
        s += immediate_text(std::get<Immediate>(op), SemType::U64);
    if (offset > 0) s += "+" + std::to_string(offset);
    if (offset < 0) s += std::to_string(offset);
    return s + "]";
}

std::string mnemonic(const Instruction& in) {
    std::string m;
    bool typed = true;
    switch (in.opcode) {
        case Opcode::LD:
        case Opcode::ST:
            m = std::string(to_string(in.opcode)) + "_" + to_string(*in.space);
            break;
        case Opcode::GET_GLOBAL_ID:
        case Opcode::GET_LOCAL_ID:
        case Opcode::GET_BLOCK_ID:
        case Opcode::GET_BLOCK_DIM:
        case Opcode::GET_GRID_DIM:
        case Opcode::BAR_SHARED:
        case Opcode::BAR_GLOBAL:
        case Opcode::VOTE_ANY:
        case Opcode::VOTE_ALL:
        case Opcode::BALLOT:
        case Opcode::RETURN:
            m = to_string(in.opcode);
            typed = false;
            break;
        default:
            m = to_string(in.opcode);
            break;
    }
    if (typed) m += std::string(".") + type_suffix(in.sem_type);
    return m;
}

}  // namespace

std::string instruction_text(const Instruction& in) {
    const Signature& sig = signature_of(in.opcode);
    std::string s = mnemonic(in);
    std::vector<std::string> ops;
    if (in.dst) ops.push_back(register_name(in.dst->id, in.dst->type));
    for (uint8_t i = 0; i < sig.arity; ++i) {
        if (sig.slots[i] == SlotRule::ADDR)
            ops.push_back(memory_operand_text(in.srcs[i], in.mem_offset));
        else
            ops.push_back(operand_text(in.srcs[i], slot_type(sig.slots[i], in.sem_type)));
    }
    // ST writes memory: canonical order is [addr], value (no dst to lead).
    for (size_t i = 0; i < ops.size(); ++i) s += (i ? ", " : " ") + ops[i];
    return s + ";";
}

namespace {

void print_region(std::ostringstream& os, const Region& r, int depth) {
    std::string ind(size_t(depth) * 4, ' ');
    for (const RegionItem& item : r.items) {
        if (auto* inst = std::get_if<Instruction>(&item)) {
            os << ind << instruction_text(*inst) << "\n";
        } else if (auto* pb = std::get_if<PredBlock>(&item)) {
            os << ind << "@PRED(" << register_name(pb->predicate.id, pb->predicate.type)
               << ") {\n";
            print_region(os, pb->then_region, depth + 1);
            os << ind << "}\n";
            if (pb->else_region) {
                os << ind << "@ELSE {\n";
                print_region(os, *pb->else_region, depth + 1);
                os << ind << "}\n";
            }
        } else if (auto* lb = std::get_if<LoopBlock>(&item)) {
            os << ind << "@LOOP("
               << register_name(lb->break_predicate.id, lb->break_predicate.type);
            if (lb->trip_annotation) os << ", trip=" << *lb->trip_annotation;
            os << ") {\n";
            print_region(os, lb->body, depth + 1);
            os << ind << "}\n";
        }
    }
}

std::string tag_text(uint8_t addr_space) {
    if (addr_space == 0) return "";
    return "<" + std::to_string(addr_space) + ">";
}

}  // namespace

std::string immediate_text(const Immediate& imm, SemType slot) {
    char buf[32];
    switch (slot) {
        case SemType::U32:
            snprintf(buf, sizeof buf, "%" PRIu32, uint32_t(imm.bits));
            break;
        case SemType::S32:
            snprintf(buf, sizeof buf, "%" PRId32, int32_t(uint32_t(imm.bits)));
            break;
        case SemType::U64:
            snprintf(buf, sizeof buf, "%" PRIu64, imm.bits);
            break;
        case SemType::F32:
            snprintf(buf, sizeof buf, "0f%08X", uint32_t(imm.bits));
            break;
        case SemType::F64:
            snprintf(buf, sizeof buf, "0d%016" PRIX64, imm.bits);
            break;
        case SemType::PRED:
            snprintf(buf, sizeof buf, "%u", imm.bits ? 1u : 0u);
            break;
    }
    return buf;
}

std::string print(const Kernel& k) {
    std::ostringstream os;
    os << ".func " << k.name << "(";
    for (size_t i = 0; i < k.params.size(); ++i) {
        const Param& p = k.params[i];
        const RegisterDecl* d = k.find_register(p.reg.id);
        os << (i ? ", " : "") << ".param ." << to_string(p.reg.type) << " "
           << register_name(p.reg.id, p.reg.type) << tag_text(d ? d->addr_space : 0);
    }
    os << ")\n{\n";

    bool decls = false;
    for (SemType t : {SemType::U32, SemType::S32, SemType::U64, SemType::F32,
                      SemType::F64, SemType::PRED}) {
        std::vector<const RegisterDecl*> group;
        for (const RegisterDecl& d : k.registers) {
            bool is_param = false;
            for (const Param& p : k.params)
                if (p.reg.id == d.id) is_param = true;
            if (!is_param && d.type == t) group.push_back(&d);
        }
        if (group.empty()) continue;
        std::sort(group.begin(), group.end(),
                  [](auto* a, auto* b) { return a->id < b->id; });
        os << "    .reg ." << to_string(t) << " ";
        for (size_t i = 0; i < group.size(); ++i)
            os << (i ? ", " : "") << register_name(group[i]->id, t)
               << tag_text(group[i]->addr_space);
        os << ";\n";
        decls = true;
    }
    if (k.shared_mem_bytes > 0) {
        os << "    .shared " << k.shared_mem_bytes << ";\n";
        decls = true;
    }
    if (decls && !k.body.items.empty()) os << "\n";
    print_region(os, k.body, 1);
    os << "}\n";
    return os.str();
}

std::string print(const Module& m) {
    std::ostringstream os;
    for (size_t i = 0; i < m.kernels.size(); ++i) {
        if (i) os << "\n";
        os << print(m.kernels[i]);
    }
    return os.str();
}

}  // namespace hetgpu::text

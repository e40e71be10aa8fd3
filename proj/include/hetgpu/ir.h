// hetIR: a small structured SPMD IR shared by every backend in this tree.
// Modules hold kernels; kernels hold a region tree (instructions, predicated
// blocks, do-while loops) over typed virtual registers. There is no
// unstructured branching, so every analysis walks the tree.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hetgpu::ir {

enum class SemType : uint8_t { U32, S32, U64, F32, F64, PRED };

enum class MemSpace : uint8_t { GLOBAL, SHARED, LOCAL };

enum class Opcode : uint8_t {
    // arithmetic
    ADD, SUB, MUL, DIV, REM, FMA, MIN, MAX,
    // bitwise / shifts
    AND, OR, XOR, NOT, SHL, SHR,
    // comparisons, result is PRED; sem_type names the compared type
    SETP_EQ, SETP_NE, SETP_LT, SETP_LE, SETP_GT, SETP_GE,
    // data movement
    MOV, CVT,
    // thread identity, one dimension immediate 0..2
    GET_GLOBAL_ID, GET_LOCAL_ID, GET_BLOCK_ID, GET_BLOCK_DIM, GET_GRID_DIM,
    // memory, tagged with exactly one MemSpace
    LD, ST,
    // atomics, GLOBAL space only
    ATOM_ADD, ATOM_CAS,
    // synchronization
    BAR_SHARED, BAR_GLOBAL,
    // block-wide collectives
    VOTE_ANY, VOTE_ALL, BALLOT, SHUFFLE,
    // predicate manipulation
    SET_PREDICATE,
    RETURN,
};

const char* to_string(SemType t);
const char* to_string(Opcode op);
const char* to_string(MemSpace s);
bool is_integer(SemType t);
bool is_float(SemType t);
uint64_t canonical_bits(SemType t, uint64_t raw);  // zero/sign-extend into the 64-bit slot
uint32_t element_size(SemType t);                  // bytes moved by LD/ST of this type

struct RegisterRef {
    uint32_t id = 0;
    SemType type = SemType::U32;
    bool operator==(const RegisterRef&) const = default;
};

struct Immediate {
    uint64_t bits = 0;  // canonical slot encoding for the operand's type
    bool operator==(const Immediate&) const = default;
};

using Operand = std::variant<RegisterRef, Immediate>;

bool operand_eq(const Operand& a, const Operand& b);

struct Instruction {
    Opcode opcode = Opcode::RETURN;
    SemType sem_type = SemType::U32;  // operating type; result type for CVT
    std::optional<RegisterRef> dst;
    std::vector<Operand> srcs;
    std::optional<MemSpace> space;  // LD/ST only; atomics are implicitly GLOBAL
    int64_t mem_offset = 0;         // constant byte offset in [%rd+off] operands
};

struct PredBlock;
struct LoopBlock;
using RegionItem = std::variant<Instruction, PredBlock, LoopBlock>;

struct Region {
    std::vector<RegionItem> items;
};

struct PredBlock {
    RegisterRef predicate;  // PRED register
    Region then_region;
    std::optional<Region> else_region;
};

struct LoopBlock {
    Region body;                  // executes at least once (do-while)
    RegisterRef break_predicate;  // evaluated at body end; true -> thread leaves the loop
    std::optional<int64_t> trip_annotation;
};

// Path into the region tree: item index, then (for nested blocks) a selector
// (0 = then/body, 1 = else), alternating down to the instruction.
using InstructionPath = std::vector<uint32_t>;

std::string path_to_string(const InstructionPath& p);

struct SourceLoc {
    std::string file;
    uint32_t line = 0;
};

struct KernelMeta {
    // Every BAR_SHARED/BAR_GLOBAL site plus the kernel exit, pre-order.
    std::vector<InstructionPath> suspension_points;
    std::map<InstructionPath, SourceLoc> source_lines;
};

struct Param {
    std::string name;  // canonical register spelling, kept for diagnostics
    RegisterRef reg;
};

struct RegisterDecl {
    uint32_t id = 0;
    SemType type = SemType::U32;
    uint8_t addr_space = 0;  // print-only tag: 0 none, 1 global, 3 shared, 5 local
};

struct Kernel {
    std::string name;
    std::vector<Param> params;
    uint64_t shared_mem_bytes = 0;
    std::vector<RegisterDecl> registers;  // every declared register incl. params
    Region body;
    KernelMeta meta;

    const RegisterDecl* find_register(uint32_t id) const;
};

struct Module {
    uint32_t version = 1;
    std::vector<Kernel> kernels;
    std::array<uint8_t, 8> module_id{};  // content hash of the canonical print

    const Kernel* find_kernel(const std::string& name) const;
};

std::string module_id_hex(const std::array<uint8_t, 8>& id);

// Total signature table. Slot rules are functions of the instruction sem_type.
enum class SlotRule : uint8_t {
    SAME,     // the instruction's sem_type
    PRED,     // predicate register/immediate
    U32,      // fixed U32 (shift amounts, shuffle index)
    ADDR,     // U64 register, memory address (register required)
    DIM_IMM,  // immediate 0..2 (register not allowed)
    REG_SRC,  // register of any type (CVT source)
};

enum class ResultRule : uint8_t { NONE, SAME, PRED, U32, U64 };

struct Signature {
    uint8_t arity = 0;
    std::array<SlotRule, 3> slots{};
    ResultRule result = ResultRule::NONE;
    // bitmask over SemType values the instruction sem_type may take
    uint8_t allowed_types = 0;
    bool needs_space = false;  // LD/ST carry exactly one MemSpace
};

constexpr uint8_t type_bit(SemType t) { return uint8_t(1u << uint8_t(t)); }

const Signature& signature_of(Opcode op);

struct Diagnostic {
    std::string kernel;
    InstructionPath path;  // empty for kernel-level problems
    std::string message;
};

struct ValidationReport {
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return diagnostics.empty(); }
    std::string to_string() const;
};

// Structural and type checks; diagnostics as data, never throws.
ValidationReport validate(const Module& m);

// Recomputes meta.suspension_points for each kernel and, when validation
// passes, stamps module_id with the hash of the canonical print.
ValidationReport finalize(Module& m);

// Recomputes suspension points for one kernel (barrier sites pre-order, then
// the exit sentinel path {0xFFFFFFFF}).
void refresh_meta(Kernel& k);
extern const InstructionPath kKernelExitPath;

// True if any instruction in the kernel is BALLOT (launch-geometry check).
bool kernel_uses_ballot(const Kernel& k);

// Pre-order walk helpers shared by passes, printers and devices.
void for_each_instruction(const Region& r,
                          const std::function<void(const Instruction&, const InstructionPath&)>& fn);
void for_each_instruction(Region& r,
                          const std::function<void(Instruction&, const InstructionPath&)>& fn);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

enum class DeviceModel : uint8_t { SIMT, MIMD };

struct DeviceDesc {
    DeviceModel model = DeviceModel::SIMT;
    uint32_t warp_width = 32;        // SIMT
    uint32_t core_count = 120;       // MIMD
    uint32_t lane_count = 32;        // MIMD vector lanes per core
    uint64_t scratchpad_bytes = 64 * 1024;
    uint64_t global_mem_bytes = 256ull * 1024 * 1024;
    std::string name;
};

// warp_width/lane_count must be powers of two (spec invariant).
bool desc_valid(const DeviceDesc& d, std::string* why = nullptr);

}  // namespace hetgpu::ir

// Lowering: hetIR kernels -> executable device programs.
// All models share one flattened stream (structured control realized as
// mask/branch ops); the per-device engines give the ops SIMT-mask, vector
// vmask, lock-step multi-core or scalar semantics. Migration support adds
// resume bookkeeping (resume points, liveness tables, pause checks).
#pragma once

#include <map>
#include <string>
#include <vector>

#include "hetgpu/ir.h"

namespace hetgpu::lowering {

enum class MimdStrategy : uint8_t { SINGLE_CORE, MULTI_CORE, INDEPENDENT_THREAD };

const char* to_string(MimdStrategy s);
bool strategy_from_string(const std::string& s, MimdStrategy* out);

struct LoweringConfig {
    ir::DeviceModel model = ir::DeviceModel::SIMT;
    MimdStrategy strategy = MimdStrategy::SINGLE_CORE;  // MIMD only
    uint32_t partition_width = 0;   // 0 -> lane_count (MULTI_CORE) or 1 (INDEPENDENT)
    uint32_t segment_interval_x = 0;  // 0 = no segment barriers; default when enabled is 64
    bool migration_mode = false;

    std::string fingerprint() const;
};

constexpr uint32_t kDefaultSegmentInterval = 64;
constexpr uint32_t kSimtMaxThreadsPerBlock = 1024;

// resume_point_id -> pre-segmentation... resume ids number the suspension
// points of the (possibly segmented) kernel: 0 = kernel entry, barriers 1..n
// in pre-order. The kernel exit needs no resume entry.
struct ResumeTable {
    std::map<uint32_t, ir::InstructionPath> entries;
    uint32_t id_for(const ir::InstructionPath& p) const;  // UINT32_MAX if absent
};

// Registers live immediately after each resume point, ascending register id.
using LivenessTable = std::map<uint32_t, std::vector<ir::RegisterRef>>;

// One flattened op. EXEC covers every plain IR instruction (arithmetic,
// memory, atomics, collectives); control ops realize the region tree.
struct FlatOp {
    enum class K : uint8_t {
        EXEC,
        PRED_PUSH,  // pred, t0 = else pc (or end), t1 = end pc (PRED_POP)
        PRED_ELSE,  // t1 = end pc
        PRED_POP,
        LOOP_BEGIN,  // t1 = pc after LOOP_END
        LOOP_END,    // pred = break predicate, t0 = first body pc
        BAR,         // inst.opcode is BAR_SHARED or BAR_GLOBAL; site = resume id
        PAUSE_CHECK,  // site = resume id (emitted only in migration mode)
        RET,
    };
    K k = K::EXEC;
    ir::Instruction inst;
    ir::RegisterRef pred;
    uint32_t t0 = 0, t1 = 0;
    bool has_else = false;
    uint32_t site = 0;  // resume id (BAR/PAUSE_CHECK) or divergence/loop site id
};

// Static nesting context of a resume site, for rebuilding mask stacks.
struct ResumeFrame {
    bool is_loop = false;
    bool in_else = false;   // resume site sits in the else branch
    bool has_else = false;
    uint32_t push_pc = 0;   // PRED_PUSH / LOOP_BEGIN
    uint32_t else_pc = 0;   // PRED_ELSE (valid when has_else)
    uint32_t end_pc = 0;    // PRED_POP / LOOP_END
};

struct FlatProgram {
    std::vector<FlatOp> ops;
    std::map<uint32_t, uint32_t> resume_pc;  // resume id -> pc to continue at
    std::map<uint32_t, std::vector<ResumeFrame>> resume_frames;
    uint32_t divergence_sites = 0;  // static PRED_PUSH/LOOP_END site count
};

struct DeviceProgram {
    ir::DeviceModel model = ir::DeviceModel::SIMT;
    MimdStrategy strategy = MimdStrategy::SINGLE_CORE;
    LoweringConfig config_used;
    std::string kernel_name;
    std::array<uint8_t, 8> module_id{};
    ir::Kernel kernel;  // post-segmentation kernel (register decls, shared size)
    ResumeTable resume_table;
    LivenessTable liveness;
    FlatProgram flat;
    bool uses_ballot = false;
};

// Wraps each top-level loop so a BAR_GLOBAL runs when iteration > 0 and
// iteration % x == 0 (a bounded-latency suspension point inside long loops).
ir::Kernel insert_segment_barriers(const ir::Kernel& k, uint32_t x);

ResumeTable assign_resume_points(const ir::Kernel& k);

LivenessTable compute_liveness(const ir::Kernel& k, const ResumeTable& rt);

DeviceProgram lower_for_simt(const ir::Kernel& k, const std::array<uint8_t, 8>& module_id,
                             const ir::DeviceDesc& desc, LoweringConfig cfg);

DeviceProgram lower_for_mimd(const ir::Kernel& k, const std::array<uint8_t, 8>& module_id,
                             const ir::DeviceDesc& desc, LoweringConfig cfg);

// Annotated listing of the lowered stream (debugging aid, also used to check
// translation-cache transparency: equal text == structurally identical).
std::string dump_text(const DeviceProgram& p);

}  // namespace hetgpu::lowering

// Scalar evaluation of pure compute instructions, shared by the simulated
// devices. Memory, atomics, barriers and collectives stay device-specific.
// The sequential reference interpreter deliberately does not use this file.
#pragma once

#include <cstdint>

#include "hetgpu/ir.h"

namespace hetgpu::eval {

struct ThreadIds {
    uint32_t local[3] = {0, 0, 0};
    uint32_t block[3] = {0, 0, 0};
    uint32_t block_dim[3] = {1, 1, 1};
    uint32_t grid_dim[3] = {1, 1, 1};
};

uint64_t read_operand(const ir::Operand& op, const uint64_t* regs);

// Binary/unary arithmetic on canonical 64-bit slots. Defined edge cases:
// integer x/0 = all ones, x%0 = x; shift counts >= width give 0 (arithmetic
// right shifts give the sign fill); float MIN/MAX follow fmin/fmax; FMA is
// fused. Results come back in canonical slot form.
uint64_t apply_op(ir::Opcode op, ir::SemType t, uint64_t a, uint64_t b, uint64_t c);

bool compare(ir::Opcode setp, ir::SemType t, uint64_t a, uint64_t b);

// Conversions saturate float->int (NaN becomes 0) and round to nearest for
// int->float per the usual static_cast semantics.
uint64_t convert(ir::SemType to, ir::SemType from, uint64_t bits);

// Executes one instruction if it is pure compute (arithmetic, bitwise,
// comparisons, MOV/CVT, GET_*, SET_PREDICATE). Returns false untouched for
// everything else (memory, atomics, barriers, collectives, RETURN).
bool eval_compute(const ir::Instruction& in, uint64_t* regs, const ThreadIds& ids);

}  // namespace hetgpu::eval

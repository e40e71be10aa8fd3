// Sequential reference interpreter. Walks the kernel's region tree directly,
// one thread at a time, parking threads at barriers and collectives until the
// whole scope arrives. It shares no execution code with the device engines so
// the two sides can check each other.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hetgpu/ir.h"

namespace hetgpu::oracle {

struct Launch {
    std::array<uint32_t, 3> grid{1, 1, 1};
    std::array<uint32_t, 3> block{1, 1, 1};
    std::vector<uint64_t> args;  // canonical register slots, one per kernel param
};

struct Result {
    uint64_t instructions = 0;  // IR instructions retired across all threads
};

// Runs the kernel to completion against `mem`, a flat byte image of global
// memory addressed the same way device global memory is. Throws hetgpu::Error
// on validation problems or faults.
Result run(const ir::Kernel& kernel, const Launch& launch, std::vector<uint8_t>& mem);

}  // namespace hetgpu::oracle

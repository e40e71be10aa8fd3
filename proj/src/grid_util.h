// Internal helpers shared by the device engines: launch geometry math and the
// launch checks every device performs before touching hardware state.
#pragma once

#include <array>
#include <cstdint>

#include "hetgpu/device.h"
#include "hetgpu/error.h"

namespace hetgpu::device {

struct GridGeom {
    std::array<uint32_t, 3> grid{1, 1, 1};
    std::array<uint32_t, 3> block{1, 1, 1};

    uint32_t blocks() const { return grid[0] * grid[1] * grid[2]; }
    uint32_t threads_per_block() const { return block[0] * block[1] * block[2]; }

    std::array<uint32_t, 3> block_coords(uint32_t b) const {
        return {b % grid[0], (b / grid[0]) % grid[1], b / (grid[0] * grid[1])};
    }
    std::array<uint32_t, 3> thread_coords(uint32_t t) const {
        return {t % block[0], (t / block[0]) % block[1], t / (block[0] * block[1])};
    }
};

inline void validate_launch_common(const LaunchSpec& spec, ir::DeviceModel expect) {
    if (!spec.program) fail(ErrorKind::Protocol, "launch without a lowered program");
    const auto& p = *spec.program;
    if (p.model != expect)
        fail(ErrorKind::Protocol, "program lowered for a different device model");
    for (int i = 0; i < 3; ++i)
        if (spec.grid[i] == 0 || spec.block[i] == 0)
            fail(ErrorKind::Validation, "grid and block dimensions must be nonzero");
    if (spec.args.size() != p.kernel.params.size())
        fail(ErrorKind::Validation,
             "kernel '" + p.kernel_name + "' takes " + std::to_string(p.kernel.params.size()) +
                 " arguments, got " + std::to_string(spec.args.size()));
    GridGeom g{spec.grid, spec.block};
    if (p.uses_ballot && g.threads_per_block() > 64)
        fail(ErrorKind::Validation,
             "kernel uses BALLOT, which limits blocks to 64 threads (got " +
                 std::to_string(g.threads_per_block()) + ")");
}

inline uint32_t max_register_count(const ir::Kernel& k) {
    uint32_t m = 0;
    for (const auto& d : k.registers) m = std::max(m, d.id + 1);
    return m;
}

constexpr uint64_t kLocalMemCap = 1u << 20;  // per-thread private space limit

}  // namespace hetgpu::device

// Simulated device interface. Both devices execute lowered programs against
// their own flat global memory; the runtime talks to them only through this
// surface, and checkpoint/restore moves BlockDump + memory bytes between them.
#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "hetgpu/ir.h"
#include "hetgpu/lowering.h"

namespace hetgpu::device {

struct LaunchSpec {
    std::shared_ptr<const lowering::DeviceProgram> program;
    std::array<uint32_t, 3> grid{1, 1, 1};
    std::array<uint32_t, 3> block{1, 1, 1};
    std::vector<uint64_t> args;  // canonical slot value per kernel param
    uint64_t sched_seed = 0;
};

enum class RunState : uint8_t { IDLE, RUNNING, COMPLETED, PAUSED };

// Architecture-neutral snapshot of one thread block at a suspension point.
// Registers are thread-major in liveness-table order for the resume point;
// exited thread slots carry zeros and one set bit in the exited bitmap.
struct BlockDump {
    uint32_t block_index = 0;
    uint32_t resume_point_id = 0;
    uint32_t thread_count = 0;
    std::vector<uint8_t> exited;       // ceil(thread_count/8) bytes, bit = thread exited
    std::vector<uint64_t> registers;   // thread_count * live_regs entries
    std::vector<uint8_t> shared;       // block shared memory image
};

bool dump_bit(const std::vector<uint8_t>& bits, uint32_t i);
void set_dump_bit(std::vector<uint8_t>& bits, uint32_t i, bool v);

struct PauseControls {
    bool flag = false;                  // pause at next suspension check
    uint64_t after_instructions = 0;    // arm flag once executed lanes reach N
    bool after_armed = false;
    uint32_t at_site = UINT32_MAX;      // arm flag at first arrival at this barrier site
};

class Device {
  public:
    explicit Device(const ir::DeviceDesc& desc);
    virtual ~Device() = default;

    const ir::DeviceDesc& desc() const { return desc_; }

    // Fresh launch. Validates geometry against the program and device, then
    // leaves the grid ready to run. One grid in flight at a time.
    virtual void launch(const LaunchSpec& spec) = 0;

    // Restore: same validation as launch, then every non-completed block is
    // rebuilt from its dump and continues from its resume point.
    virtual void resume(const LaunchSpec& spec, const std::vector<BlockDump>& dumps,
                        const std::vector<uint8_t>& completed_blocks) = 0;

    // Runs the in-flight grid until it completes or pauses. Faults throw.
    virtual RunState run_until_quiescent() = 0;

    virtual RunState state() const = 0;

    // Valid when PAUSED (or COMPLETED, then empty): one dump per
    // non-completed block plus the completed-block bitmap.
    virtual std::vector<BlockDump> collect_block_dumps() = 0;
    virtual std::vector<uint8_t> completed_blocks() const = 0;

    void arm_pause_after(uint64_t executed_instructions);
    void arm_pause_at_site(uint32_t site);
    void set_pause_flag();

    void write_global(uint64_t offset, const void* src, uint64_t n);
    void read_global(uint64_t offset, void* dst, uint64_t n) const;
    uint64_t global_mem_bytes() const { return mem_.size(); }

    uint64_t instructions_executed() const { return instructions_; }
    uint64_t barrier_visits() const { return barrier_visits_; }
    uint64_t dma_read_bytes() const { return dma_read_; }
    uint64_t dma_write_bytes() const { return dma_write_; }

    // Chronological notes about structural events (resume staging, checkpoint
    // phases, wave scheduling); tests assert on these.
    std::vector<std::string>& events() { return events_; }
    // Per-core divergence protocol log (MIMD multi-core strategy).
    const std::vector<std::vector<std::string>>& divergence_logs() const { return div_logs_; }

  protected:
    ir::DeviceDesc desc_;
    std::vector<uint8_t> mem_;
    PauseControls pause_;
    uint64_t instructions_ = 0;
    uint64_t barrier_visits_ = 0;
    uint64_t dma_read_ = 0;
    uint64_t dma_write_ = 0;
    std::vector<std::string> events_;
    std::vector<std::vector<std::string>> div_logs_;

    // true once the pause flag should be considered set (evaluates the
    // instruction-count trigger lazily, at suspension checks)
    bool pause_flag_now();
};

std::unique_ptr<Device> make_simt_device(const ir::DeviceDesc& desc);
std::unique_ptr<Device> make_mimd_device(const ir::DeviceDesc& desc);

// Deterministic visit-order permutation: seed 0 keeps identity, anything else
// Fisher-Yates shuffles with a splitmix64 stream.
void permute_order(std::vector<uint32_t>& order, uint64_t seed, uint64_t round);

}  // namespace hetgpu::device

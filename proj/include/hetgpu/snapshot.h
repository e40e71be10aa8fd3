// Architecture-neutral state capture: the blob layout, its wire format, and
// the migration report. Capture/restore orchestration lives on the runtime;
// this header only owns the data and its serialization.
//
// Wire format (all integers little-endian, fixed width):
//   "HGPB"  u32 version=1  module_id[8]
//   kernel name (u32 length + bytes)
//   grid u32[3]  block u32[3]
//   args (u32 count; per arg u8 kind [0 scalar slot, 1 vp id] + u64 payload)
//   completed-block bitmap (u32 length + bytes)
//   dumps (u32 count; per dump: u32 block, u32 resume id, u32 threads,
//          exited bitmap (u32 length + bytes), u32 regs-per-thread,
//          then per thread, per register: u32 reg id, u8 type tag, u64 value,
//          shared memory (u64 length + bytes))
//   memory section (u32 count; per entry u64 vp id, u64 size, bytes)
//   u32 segment interval X, u8 migration mode, u64 scheduler seed
//   u64 FNV-1a checksum of every preceding byte
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hetgpu/ir.h"

namespace hetgpu::snapshot {

struct BlobRegSlot {
    uint32_t id = 0;
    uint8_t type = 0;  // SemType as u8
    bool operator==(const BlobRegSlot&) const = default;
};

struct BlobDump {
    uint32_t block_index = 0;
    uint32_t resume_point_id = 0;
    uint32_t thread_count = 0;
    std::vector<uint8_t> exited;
    std::vector<BlobRegSlot> reg_layout;  // identical for every thread of the dump
    std::vector<uint64_t> values;         // thread-major, thread_count * reg_layout.size()
    std::vector<uint8_t> shared;
    bool operator==(const BlobDump&) const = default;
};

struct BlobArg {
    uint8_t kind = 0;  // 0 = scalar slot, 1 = virtual pointer id
    uint64_t payload = 0;
    bool operator==(const BlobArg&) const = default;
};

struct MemEntry {
    uint64_t vp_id = 0;
    std::vector<uint8_t> bytes;
    bool operator==(const MemEntry&) const = default;
};

struct StateBlob {
    std::array<uint8_t, 8> module_id{};
    std::string kernel;
    std::array<uint32_t, 3> grid{1, 1, 1};
    std::array<uint32_t, 3> block{1, 1, 1};
    std::vector<BlobArg> args;
    std::vector<uint8_t> completed;  // bit per block
    std::vector<BlobDump> dumps;
    std::vector<MemEntry> memory;    // ascending vp id
    uint32_t segment_x = 0;          // lowering the source ran with
    bool migration_mode = false;
    uint64_t sched_seed = 0;
    bool operator==(const StateBlob&) const = default;
};

std::vector<uint8_t> serialize(const StateBlob& blob);

// Throws Error(State) on bad magic, version, structure, or checksum.
StateBlob deserialize(const std::vector<uint8_t>& bytes);

// Human-readable summary for the CLI's blob inspection.
std::string inspect(const StateBlob& blob);

struct MigrationReport {
    uint64_t bytes_moved = 0;      // memory-section payload carried across
    uint64_t blob_bytes = 0;       // size of the serialized blob
    uint32_t dumps_captured = 0;   // block dumps taken on the source
    uint32_t blocks_resumed = 0;   // non-completed blocks restarted on the target
    uint32_t restore_launches = 0;
};

}  // namespace hetgpu::snapshot

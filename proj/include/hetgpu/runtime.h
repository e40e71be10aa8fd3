// Runtime layer: device registry, virtual-pointer memory with a host mirror,
// translation cache, stream-ordered execution, checkpoint/restore/migration.
// Virtual pointers resolve to the same byte offset on every device, so
// pointer values (including derived addresses captured in registers) stay
// valid across migration without rewriting.
#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hetgpu/device.h"
#include "hetgpu/ir.h"
#include "hetgpu/lowering.h"
#include "hetgpu/snapshot.h"

namespace hetgpu::rt {

struct VirtualPointer {
    uint64_t id = 0;
};

struct ArgValue {
    enum class Kind : uint8_t { SCALAR, VP } kind = Kind::SCALAR;
    uint64_t scalar = 0;  // canonical register slot
    VirtualPointer vp;

    static ArgValue make_scalar(uint64_t slot) { return {Kind::SCALAR, slot, {}}; }
    static ArgValue make_vp(VirtualPointer p) { return {Kind::VP, 0, p}; }
};

struct LaunchOptions {
    std::optional<lowering::MimdStrategy> strategy;  // MIMD only; env hint fills it
    uint32_t partition_width = 0;
    std::optional<uint32_t> segment_x;
    bool migration_mode = false;
    uint64_t sched_seed = 0;
};

class TranslationCache {
  public:
    std::shared_ptr<const lowering::DeviceProgram> get(const ir::Module& mod,
                                                       const std::string& kernel,
                                                       const ir::DeviceDesc& desc,
                                                       const lowering::LoweringConfig& cfg);
    uint64_t hits() const { return hits_; }
    uint64_t misses() const { return misses_; }
    size_t size() const { return entries_.size(); }

  private:
    std::map<std::string, std::shared_ptr<const lowering::DeviceProgram>> entries_;
    uint64_t hits_ = 0;
    uint64_t misses_ = 0;
};

class Runtime {
  public:
    Runtime() = default;

    // -- registry ------------------------------------------------------------
    uint32_t register_device(const ir::DeviceDesc& desc);
    size_t device_count() const;
    const ir::DeviceDesc& device_desc(uint32_t id) const;
    device::Device& device(uint32_t id);  // test and tooling access
    void load_module(const ir::Module& mod);

    // -- streams ---------------------------------------------------------------
    uint32_t create_stream(uint32_t device_id);
    uint32_t stream_device(uint32_t stream) const;

    // -- memory ----------------------------------------------------------------
    VirtualPointer het_malloc(uint64_t size, uint32_t stream);
    uint64_t vp_size(VirtualPointer p) const;
    uint64_t vp_offset(VirtualPointer p) const;  // device byte offset (same everywhere)
    void memcpy_h2d(VirtualPointer dst, uint64_t dst_off, const void* src, uint64_t n,
                    uint32_t stream);
    void memcpy_d2h(void* dst, VirtualPointer src, uint64_t src_off, uint64_t n,
                    uint32_t stream);
    void memcpy_d2d(VirtualPointer dst, uint64_t dst_off, VirtualPointer src,
                    uint64_t src_off, uint64_t n, uint32_t stream);

    // -- execution ---------------------------------------------------------------
    void launch_kernel(const std::string& kernel, std::array<uint32_t, 3> grid,
                       std::array<uint32_t, 3> block, const std::vector<ArgValue>& args,
                       uint32_t stream, const LaunchOptions& opts = {});
    // Drains the stream; returns COMPLETED, or PAUSED when a pause trigger hit.
    device::RunState stream_synchronize(uint32_t stream);
    void device_synchronize();  // every stream

    // -- checkpoint / migration ---------------------------------------------------
    void arm_pause_after_instructions(uint32_t stream, uint64_t n);
    void arm_pause_at_barrier_site(uint32_t stream, uint32_t site);
    snapshot::StateBlob checkpoint(uint32_t stream);
    void restore(const snapshot::StateBlob& blob, uint32_t device_id, uint32_t stream,
                 const LaunchOptions& opts = {});
    snapshot::MigrationReport migrate(uint32_t stream, uint32_t target_device,
                                      const LaunchOptions& opts = {});

    // -- introspection ----------------------------------------------------------
    const TranslationCache& cache() const { return cache_; }
    const std::vector<std::string>& events() const { return events_; }

  private:
    struct VpInfo {
        uint64_t id = 0;
        uint64_t size = 0;
        uint64_t base = 0;                 // byte offset inside device global memory
        std::vector<uint8_t> mirror;       // host copy, authoritative at sync points
        std::vector<uint8_t> backed;       // bit per device id
    };

    struct InFlight {
        bool active = false;
        std::string kernel;
        std::array<uint8_t, 8> module_id{};
        std::array<uint32_t, 3> grid{1, 1, 1};
        std::array<uint32_t, 3> block{1, 1, 1};
        std::vector<snapshot::BlobArg> args;  // resolved: scalar slots or vp ids
        std::shared_ptr<const lowering::DeviceProgram> program;
        uint64_t sched_seed = 0;
        uint32_t segment_x = 0;
        bool migration_mode = false;
    };

    struct StreamState {
        uint32_t id = 0;
        uint32_t device = 0;
        InFlight fly;
    };

    mutable std::recursive_mutex mu_;
    std::vector<std::unique_ptr<device::Device>> devices_;
    std::vector<ir::DeviceDesc> descs_;
    std::vector<ir::Module> modules_;
    std::vector<StreamState> streams_;
    std::map<uint64_t, VpInfo> vps_;
    uint64_t next_vp_ = 1;
    uint64_t heap_next_ = 4096;  // offset 0 stays unmapped to catch null derefs
    TranslationCache cache_;
    std::vector<std::string> events_;

    StreamState& stream_at(uint32_t id);
    VpInfo& vp_at(uint64_t id);
    const VpInfo& vp_at(uint64_t id) const;
    const ir::Module* module_by_id(const std::array<uint8_t, 8>& id) const;
    VpInfo& materialize_vp(uint64_t id, uint64_t size);  // allocate or verify
    void ensure_backing(VpInfo& vp, uint32_t device_id);
    void writeback_device(uint32_t device_id);  // device bytes -> mirrors
    device::RunState drain(StreamState& s);     // run the in-flight kernel out
    void require_idle(StreamState& s);          // drain and insist on completion
    lowering::LoweringConfig build_config(uint32_t device_id, const LaunchOptions& opts) const;
    uint64_t resolve_arg_slot(const ir::Param& param, const ArgValue& a);
    snapshot::StateBlob checkpoint_locked(StreamState& s);
    void restore_locked(const snapshot::StateBlob& blob, uint32_t device_id, StreamState& s,
                        const LaunchOptions& opts);
};

// Reads HETGPU_STRATEGY ("single_core", "multi_core", "independent_thread",
// or the short form "independent") and HETGPU_SEGMENT_X into opts when the
// caller did not set them explicitly.
void apply_env_hints(LaunchOptions& opts);

}  // namespace hetgpu::rt

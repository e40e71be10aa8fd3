#include "hetgpu/device.h"

#include <cstring>

#include "hetgpu/error.h"

namespace hetgpu::device {

bool dump_bit(const std::vector<uint8_t>& bits, uint32_t i) {
    if (i / 8 >= bits.size()) return false;
    return (bits[i / 8] >> (i % 8)) & 1;
}

void set_dump_bit(std::vector<uint8_t>& bits, uint32_t i, bool v) {
    if (i / 8 >= bits.size()) bits.resize(i / 8 + 1, 0);
    if (v)
        bits[i / 8] |= uint8_t(1u << (i % 8));
    else
        bits[i / 8] &= uint8_t(~(1u << (i % 8)));
}

Device::Device(const ir::DeviceDesc& desc) : desc_(desc) {
    std::string why;
    if (!ir::desc_valid(desc, &why)) fail(ErrorKind::Validation, "bad device description: " + why);
    mem_.assign(desc.global_mem_bytes, 0);
}

void Device::arm_pause_after(uint64_t executed_instructions) {
    pause_.after_instructions = executed_instructions;
    pause_.after_armed = true;
}

void Device::arm_pause_at_site(uint32_t site) { pause_.at_site = site; }

void Device::set_pause_flag() { pause_.flag = true; }

bool Device::pause_flag_now() {
    if (pause_.after_armed && instructions_ >= pause_.after_instructions) {
        pause_.flag = true;
        pause_.after_armed = false;
    }
    return pause_.flag;
}

void Device::write_global(uint64_t offset, const void* src, uint64_t n) {
    if (offset > mem_.size() || n > mem_.size() - offset)
        fail(ErrorKind::Fault, "device memory write out of bounds: offset " +
                                   std::to_string(offset) + " size " + std::to_string(n));
    std::memcpy(mem_.data() + offset, src, n);
}

void Device::read_global(uint64_t offset, void* dst, uint64_t n) const {
    if (offset > mem_.size() || n > mem_.size() - offset)
        fail(ErrorKind::Fault, "device memory read out of bounds: offset " +
                                   std::to_string(offset) + " size " + std::to_string(n));
    std::memcpy(dst, mem_.data() + offset, n);
}

static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void permute_order(std::vector<uint32_t>& order, uint64_t seed, uint64_t round) {
    if (seed == 0 || order.size() < 2) return;
    uint64_t s = seed ^ (round * 0xd1342543de82ef95ull + 0x632be59bd9b4e019ull);
    for (size_t i = order.size() - 1; i > 0; --i) {
        size_t j = size_t(splitmix64(s) % (i + 1));
        std::swap(order[i], order[j]);
    }
}

}  // namespace hetgpu::device

#include "isa_eval.h"

#include <cmath>
#include <cstring>
#include <limits>

namespace hetgpu::eval {

using ir::Opcode;
using ir::SemType;

namespace {

float as_f32(uint64_t bits) {
    uint32_t w = uint32_t(bits);
    float f;
    std::memcpy(&f, &w, 4);
    return f;
}

double as_f64(uint64_t bits) {
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

uint64_t from_f32(float f) {
    uint32_t w;
    std::memcpy(&w, &f, 4);
    return w;
}

uint64_t from_f64(double d) {
    uint64_t w;
    std::memcpy(&w, &d, 8);
    return w;
}

int32_t as_s32(uint64_t bits) { return int32_t(uint32_t(bits)); }

uint64_t from_s32(int32_t v) { return uint64_t(int64_t(v)); }  // sign-extended slot

template <typename T>
T sat_from_double(double d) {
    if (std::isnan(d)) return T(0);
    constexpr double lo = double(std::numeric_limits<T>::min());
    constexpr double hi = double(std::numeric_limits<T>::max());
    if (d <= lo) return std::numeric_limits<T>::min();
    if (d >= hi) return std::numeric_limits<T>::max();
    return T(d);
}

// u64 saturation: 2^64 is exact in double, values >= it clamp to max
uint64_t sat_u64(double d) {
    if (std::isnan(d) || d <= 0.0) return 0;
    if (d >= 18446744073709551616.0) return UINT64_MAX;
    return uint64_t(d);
}

uint64_t int_div(SemType t, uint64_t a, uint64_t b) {
    if (t == SemType::S32) {
        int32_t x = as_s32(a), y = as_s32(b);
        if (y == 0) return from_s32(-1);
        if (x == std::numeric_limits<int32_t>::min() && y == -1) return from_s32(x);
        return from_s32(x / y);
    }
    if (t == SemType::U32) {
        uint32_t x = uint32_t(a), y = uint32_t(b);
        return y == 0 ? uint64_t(UINT32_MAX) : uint64_t(x / y);
    }
    uint64_t y = b;
    return y == 0 ? UINT64_MAX : a / y;
}

uint64_t int_rem(SemType t, uint64_t a, uint64_t b) {
    if (t == SemType::S32) {
        int32_t x = as_s32(a), y = as_s32(b);
        if (y == 0) return from_s32(x);
        if (x == std::numeric_limits<int32_t>::min() && y == -1) return from_s32(0);
        return from_s32(x % y);
    }
    if (t == SemType::U32) {
        uint32_t x = uint32_t(a), y = uint32_t(b);
        return y == 0 ? uint64_t(x) : uint64_t(x % y);
    }
    return b == 0 ? a : a % b;
}

}  // namespace

uint64_t read_operand(const ir::Operand& op, const uint64_t* regs) {
    if (const auto* reg = std::get_if<ir::RegisterRef>(&op)) return regs[reg->id];
    return std::get<ir::Immediate>(op).bits;
}

uint64_t apply_op(Opcode op, SemType t, uint64_t a, uint64_t b, uint64_t c) {
    switch (op) {
        case Opcode::ADD:
            if (t == SemType::F32) return from_f32(as_f32(a) + as_f32(b));
            if (t == SemType::F64) return from_f64(as_f64(a) + as_f64(b));
            if (t == SemType::S32) return from_s32(int32_t(uint32_t(a) + uint32_t(b)));
            if (t == SemType::U32) return uint64_t(uint32_t(a) + uint32_t(b));
            return a + b;
        case Opcode::SUB:
            if (t == SemType::F32) return from_f32(as_f32(a) - as_f32(b));
            if (t == SemType::F64) return from_f64(as_f64(a) - as_f64(b));
            if (t == SemType::S32) return from_s32(int32_t(uint32_t(a) - uint32_t(b)));
            if (t == SemType::U32) return uint64_t(uint32_t(a) - uint32_t(b));
            return a - b;
        case Opcode::MUL:
            if (t == SemType::F32) return from_f32(as_f32(a) * as_f32(b));
            if (t == SemType::F64) return from_f64(as_f64(a) * as_f64(b));
            if (t == SemType::S32) return from_s32(int32_t(uint32_t(a) * uint32_t(b)));
            if (t == SemType::U32) return uint64_t(uint32_t(a) * uint32_t(b));
            return a * b;
        case Opcode::DIV:
            if (t == SemType::F32) return from_f32(as_f32(a) / as_f32(b));
            if (t == SemType::F64) return from_f64(as_f64(a) / as_f64(b));
            return int_div(t, a, b);
        case Opcode::REM:
            return int_rem(t, a, b);
        case Opcode::FMA:
            if (t == SemType::F32) return from_f32(std::fmaf(as_f32(a), as_f32(b), as_f32(c)));
            if (t == SemType::F64) return from_f64(std::fma(as_f64(a), as_f64(b), as_f64(c)));
            return apply_op(Opcode::ADD, t, apply_op(Opcode::MUL, t, a, b, 0), c, 0);
        case Opcode::MIN:
            if (t == SemType::F32) return from_f32(std::fmin(as_f32(a), as_f32(b)));
            if (t == SemType::F64) return from_f64(std::fmin(as_f64(a), as_f64(b)));
            if (t == SemType::S32) return from_s32(std::min(as_s32(a), as_s32(b)));
            if (t == SemType::U32) return std::min(uint32_t(a), uint32_t(b));
            return std::min(a, b);
        case Opcode::MAX:
            if (t == SemType::F32) return from_f32(std::fmax(as_f32(a), as_f32(b)));
            if (t == SemType::F64) return from_f64(std::fmax(as_f64(a), as_f64(b)));
            if (t == SemType::S32) return from_s32(std::max(as_s32(a), as_s32(b)));
            if (t == SemType::U32) return std::max(uint32_t(a), uint32_t(b));
            return std::max(a, b);
        case Opcode::AND:
            return ir::canonical_bits(t, a & b);
        case Opcode::OR:
            return ir::canonical_bits(t, a | b);
        case Opcode::XOR:
            return ir::canonical_bits(t, a ^ b);
        case Opcode::NOT:
            if (t == SemType::PRED) return a ? 0 : 1;
            return ir::canonical_bits(t, ~a);
        case Opcode::SHL: {
            uint32_t n = uint32_t(b);
            if (t == SemType::U64) return n >= 64 ? 0 : a << n;
            uint32_t v = uint32_t(a);
            uint32_t r = n >= 32 ? 0 : v << n;
            return t == SemType::S32 ? from_s32(int32_t(r)) : uint64_t(r);
        }
        case Opcode::SHR: {
            uint32_t n = uint32_t(b);
            if (t == SemType::U64) return n >= 64 ? 0 : a >> n;
            if (t == SemType::U32) return n >= 32 ? 0 : uint32_t(a) >> n;
            int32_t v = as_s32(a);
            if (n >= 32) return from_s32(v < 0 ? -1 : 0);
            return from_s32(v >> n);
        }
        default:
            return 0;
    }
}

bool compare(Opcode setp, SemType t, uint64_t a, uint64_t b) {
    int c;  // -1, 0, 1; NaN handled separately
    bool unordered = false;
    switch (t) {
        case SemType::F32: {
            float x = as_f32(a), y = as_f32(b);
            unordered = std::isnan(x) || std::isnan(y);
            c = x < y ? -1 : x > y ? 1 : 0;
            break;
        }
        case SemType::F64: {
            double x = as_f64(a), y = as_f64(b);
            unordered = std::isnan(x) || std::isnan(y);
            c = x < y ? -1 : x > y ? 1 : 0;
            break;
        }
        case SemType::S32: {
            int32_t x = as_s32(a), y = as_s32(b);
            c = x < y ? -1 : x > y ? 1 : 0;
            break;
        }
        case SemType::U32: {
            uint32_t x = uint32_t(a), y = uint32_t(b);
            c = x < y ? -1 : x > y ? 1 : 0;
            break;
        }
        default:
            c = a < b ? -1 : a > b ? 1 : 0;
            break;
    }
    if (unordered) return setp == Opcode::SETP_NE;  // ordered comparisons fail on NaN
    switch (setp) {
        case Opcode::SETP_EQ: return c == 0;
        case Opcode::SETP_NE: return c != 0;
        case Opcode::SETP_LT: return c < 0;
        case Opcode::SETP_LE: return c <= 0;
        case Opcode::SETP_GT: return c > 0;
        case Opcode::SETP_GE: return c >= 0;
        default: return false;
    }
}

uint64_t convert(SemType to, SemType from, uint64_t bits) {
    // widen the source to double or int64 first, then narrow with saturation
    double d = 0;
    int64_t i = 0;
    uint64_t u = 0;
    bool src_float = ir::is_float(from);
    switch (from) {
        case SemType::U32: u = uint32_t(bits); i = int64_t(u); d = double(u); break;
        case SemType::S32: i = as_s32(bits); u = uint64_t(i); d = double(i); break;
        case SemType::U64: u = bits; i = int64_t(bits); d = double(bits); break;
        case SemType::F32: d = as_f32(bits); break;
        case SemType::F64: d = as_f64(bits); break;
        case SemType::PRED: u = bits ? 1 : 0; i = int64_t(u); d = double(u); break;
    }
    switch (to) {
        case SemType::U32:
            return src_float ? uint64_t(sat_from_double<uint32_t>(d)) : uint64_t(uint32_t(u));
        case SemType::S32:
            return src_float ? from_s32(sat_from_double<int32_t>(d)) : from_s32(int32_t(i));
        case SemType::U64:
            return src_float ? sat_u64(d) : u;
        case SemType::F32:
            if (src_float) return from_f32(float(d));
            return from == SemType::S32 ? from_f32(float(i)) : from_f32(float(u));
        case SemType::F64:
            if (src_float) return from_f64(d);
            return from == SemType::S32 ? from_f64(double(i)) : from_f64(double(u));
        case SemType::PRED:
            return (src_float ? d != 0.0 : u != 0) ? 1 : 0;
    }
    return 0;
}

bool eval_compute(const ir::Instruction& in, uint64_t* regs, const ThreadIds& ids) {
    auto src = [&](size_t i) { return read_operand(in.srcs[i], regs); };
    uint64_t out;
    switch (in.opcode) {
        case Opcode::ADD: case Opcode::SUB: case Opcode::MUL: case Opcode::DIV:
        case Opcode::REM: case Opcode::MIN: case Opcode::MAX:
        case Opcode::AND: case Opcode::OR: case Opcode::XOR:
        case Opcode::SHL: case Opcode::SHR:
            out = apply_op(in.opcode, in.sem_type, src(0), src(1), 0);
            break;
        case Opcode::FMA:
            out = apply_op(in.opcode, in.sem_type, src(0), src(1), src(2));
            break;
        case Opcode::NOT:
            out = apply_op(in.opcode, in.sem_type, src(0), 0, 0);
            break;
        case Opcode::SETP_EQ: case Opcode::SETP_NE: case Opcode::SETP_LT:
        case Opcode::SETP_LE: case Opcode::SETP_GT: case Opcode::SETP_GE:
            out = compare(in.opcode, in.sem_type, src(0), src(1)) ? 1 : 0;
            break;
        case Opcode::MOV:
            out = ir::canonical_bits(in.sem_type, src(0));
            break;
        case Opcode::CVT: {
            const auto& reg = std::get<ir::RegisterRef>(in.srcs[0]);
            out = convert(in.sem_type, reg.type, regs[reg.id]);
            break;
        }
        case Opcode::GET_GLOBAL_ID: {
            uint32_t d = uint32_t(src(0));
            out = uint64_t(ids.block[d]) * ids.block_dim[d] + ids.local[d];
            out = uint64_t(uint32_t(out));
            break;
        }
        case Opcode::GET_LOCAL_ID: out = ids.local[uint32_t(src(0))]; break;
        case Opcode::GET_BLOCK_ID: out = ids.block[uint32_t(src(0))]; break;
        case Opcode::GET_BLOCK_DIM: out = ids.block_dim[uint32_t(src(0))]; break;
        case Opcode::GET_GRID_DIM: out = ids.grid_dim[uint32_t(src(0))]; break;
        case Opcode::SET_PREDICATE:
            out = ir::canonical_bits(in.sem_type, src(0)) != 0 ? 1 : 0;
            break;
        default:
            return false;
    }
    regs[in.dst->id] = out;
    return true;
}

}  // namespace hetgpu::eval

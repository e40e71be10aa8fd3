// Reference interpreter: walks the region tree with an explicit control stack
// per thread. Threads run one at a time in (block, thread) order until they
// park at a barrier or collective; a release sweep then processes every scope
// whose surviving threads have all arrived at the same operation. Arithmetic
// here is written from the ISA rules directly and shares nothing with the
// device evaluators, so mismatches point at a real bug on one of the sides.
#include "hetgpu/oracle.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <variant>

#include "hetgpu/error.h"

namespace hetgpu::oracle {

namespace {

using ir::Opcode;
using ir::SemType;

constexpr uint64_t kLocalCap = 1u << 20;

// ---- slot codecs ----------------------------------------------------------

float slot_f32(uint64_t s) {
    float f;
    uint32_t w = uint32_t(s);
    std::memcpy(&f, &w, 4);
    return f;
}

double slot_f64(uint64_t s) {
    double d;
    std::memcpy(&d, &s, 8);
    return d;
}

uint64_t pack_f32(float f) {
    uint32_t w;
    std::memcpy(&w, &f, 4);
    return w;
}

uint64_t pack_f64(double d) {
    uint64_t w;
    std::memcpy(&w, &d, 8);
    return w;
}

int32_t slot_s32(uint64_t s) { return int32_t(uint32_t(s)); }

uint64_t pack_s32(int32_t v) { return uint64_t(int64_t(v)); }

// float -> integer narrowing saturates at the target range; NaN becomes zero
template <typename T>
T clamp_from(double d) {
    if (std::isnan(d)) return 0;
    if (d <= double(std::numeric_limits<T>::min())) return std::numeric_limits<T>::min();
    if (d >= double(std::numeric_limits<T>::max())) return std::numeric_limits<T>::max();
    return T(d);
}

uint64_t clamp_u64(double d) {
    if (std::isnan(d) || d <= 0.0) return 0;
    if (d >= 18446744073709551616.0) return ~0ull;
    return uint64_t(d);
}

// ---- typed arithmetic -----------------------------------------------------

template <typename U, typename S>
uint64_t int_arith(Opcode op, uint64_t A, uint64_t B, uint64_t C, bool is_signed) {
    constexpr unsigned width = sizeof(U) * 8;
    U a = U(A), b = U(B), c = U(C);
    auto norm = [&](U v) {
        return is_signed ? uint64_t(int64_t(S(v))) : uint64_t(v);
    };
    switch (op) {
        case Opcode::ADD: return norm(U(a + b));
        case Opcode::SUB: return norm(U(a - b));
        case Opcode::MUL: return norm(U(a * b));
        case Opcode::FMA: return norm(U(a * b + c));
        case Opcode::DIV:
            if (b == 0) return norm(U(~U(0)));
            if (is_signed && S(a) == std::numeric_limits<S>::min() && S(b) == S(-1))
                return norm(a);
            return is_signed ? norm(U(S(a) / S(b))) : norm(U(a / b));
        case Opcode::REM:
            if (b == 0) return norm(a);
            if (is_signed && S(a) == std::numeric_limits<S>::min() && S(b) == S(-1))
                return norm(U(0));
            return is_signed ? norm(U(S(a) % S(b))) : norm(U(a % b));
        case Opcode::MIN:
            return is_signed ? norm(U(std::min(S(a), S(b)))) : norm(std::min(a, b));
        case Opcode::MAX:
            return is_signed ? norm(U(std::max(S(a), S(b)))) : norm(std::max(a, b));
        case Opcode::AND: return norm(U(a & b));
        case Opcode::OR: return norm(U(a | b));
        case Opcode::XOR: return norm(U(a ^ b));
        case Opcode::NOT: return norm(U(~a));
        case Opcode::SHL: {
            uint32_t n = uint32_t(B);
            return n >= width ? norm(U(0)) : norm(U(a << n));
        }
        case Opcode::SHR: {
            uint32_t n = uint32_t(B);
            if (!is_signed) return n >= width ? 0 : norm(U(a >> n));
            if (n >= width) return norm(U(S(a) < 0 ? S(-1) : S(0)));
            return norm(U(S(a) >> n));
        }
        default: fail(ErrorKind::Fault, "integer op not supported by the interpreter");
    }
}

template <typename F>
uint64_t float_arith(Opcode op, F a, F b, F c) {
    F r;
    switch (op) {
        case Opcode::ADD: r = a + b; break;
        case Opcode::SUB: r = a - b; break;
        case Opcode::MUL: r = a * b; break;
        case Opcode::DIV: r = a / b; break;
        case Opcode::FMA: r = std::fma(a, b, c); break;
        case Opcode::MIN: r = std::fmin(a, b); break;
        case Opcode::MAX: r = std::fmax(a, b); break;
        default: fail(ErrorKind::Fault, "float op not supported by the interpreter");
    }
    if constexpr (std::is_same_v<F, float>)
        return pack_f32(r);
    else
        return pack_f64(r);
}

uint64_t arith(Opcode op, SemType t, uint64_t a, uint64_t b, uint64_t c) {
    switch (t) {
        case SemType::U32: return int_arith<uint32_t, int32_t>(op, a, b, c, false);
        case SemType::S32: return int_arith<uint32_t, int32_t>(op, a, b, c, true);
        case SemType::U64: return int_arith<uint64_t, int64_t>(op, a, b, c, false);
        case SemType::F32: return float_arith<float>(op, slot_f32(a), slot_f32(b), slot_f32(c));
        case SemType::F64: return float_arith<double>(op, slot_f64(a), slot_f64(b), slot_f64(c));
        case SemType::PRED: {
            bool x = a != 0, y = b != 0;
            switch (op) {
                case Opcode::AND: return (x && y) ? 1 : 0;
                case Opcode::OR: return (x || y) ? 1 : 0;
                case Opcode::XOR: return (x != y) ? 1 : 0;
                case Opcode::NOT: return x ? 0 : 1;
                default: fail(ErrorKind::Fault, "predicate op not supported");
            }
        }
    }
    fail(ErrorKind::Fault, "bad operand type");
}

bool setp(Opcode op, SemType t, uint64_t a, uint64_t b) {
    if (t == SemType::F32 || t == SemType::F64) {
        double x = t == SemType::F32 ? double(slot_f32(a)) : slot_f64(a);
        double y = t == SemType::F32 ? double(slot_f32(b)) : slot_f64(b);
        if (std::isnan(x) || std::isnan(y)) return op == Opcode::SETP_NE;
        switch (op) {
            case Opcode::SETP_EQ: return x == y;
            case Opcode::SETP_NE: return x != y;
            case Opcode::SETP_LT: return x < y;
            case Opcode::SETP_LE: return x <= y;
            case Opcode::SETP_GT: return x > y;
            case Opcode::SETP_GE: return x >= y;
            default: break;
        }
    } else if (t == SemType::S32) {
        int64_t x = slot_s32(a), y = slot_s32(b);
        switch (op) {
            case Opcode::SETP_EQ: return x == y;
            case Opcode::SETP_NE: return x != y;
            case Opcode::SETP_LT: return x < y;
            case Opcode::SETP_LE: return x <= y;
            case Opcode::SETP_GT: return x > y;
            case Opcode::SETP_GE: return x >= y;
            default: break;
        }
    } else {
        uint64_t x = t == SemType::U32 ? uint32_t(a) : a;
        uint64_t y = t == SemType::U32 ? uint32_t(b) : b;
        switch (op) {
            case Opcode::SETP_EQ: return x == y;
            case Opcode::SETP_NE: return x != y;
            case Opcode::SETP_LT: return x < y;
            case Opcode::SETP_LE: return x <= y;
            case Opcode::SETP_GT: return x > y;
            case Opcode::SETP_GE: return x >= y;
            default: break;
        }
    }
    fail(ErrorKind::Fault, "bad comparison");
}

uint64_t cvt(SemType to, SemType from, uint64_t bits) {
    bool ff = from == SemType::F32 || from == SemType::F64;
    double d = from == SemType::F32 ? double(slot_f32(bits)) : slot_f64(bits);
    int64_t i = 0;
    uint64_t u = 0;
    switch (from) {
        case SemType::U32: u = uint32_t(bits); i = int64_t(u); break;
        case SemType::S32: i = slot_s32(bits); u = uint64_t(i); break;
        case SemType::U64: u = bits; i = int64_t(bits); break;
        case SemType::PRED: u = bits ? 1 : 0; i = int64_t(u); break;
        default: break;
    }
    switch (to) {
        case SemType::U32: return ff ? uint64_t(clamp_from<uint32_t>(d)) : uint64_t(uint32_t(u));
        case SemType::S32: return ff ? pack_s32(clamp_from<int32_t>(d)) : pack_s32(int32_t(i));
        case SemType::U64: return ff ? clamp_u64(d) : u;
        case SemType::F32:
            if (ff) return pack_f32(float(d));
            return from == SemType::S32 ? pack_f32(float(i)) : pack_f32(float(u));
        case SemType::F64:
            if (ff) return pack_f64(d);
            return from == SemType::S32 ? pack_f64(double(i)) : pack_f64(double(u));
        case SemType::PRED: return (ff ? d != 0.0 : u != 0) ? 1 : 0;
    }
    fail(ErrorKind::Fault, "bad conversion");
}

// ---- interpreter state ------------------------------------------------------

struct Frame {
    const ir::Region* region = nullptr;
    size_t idx = 0;
    const ir::LoopBlock* loop = nullptr;  // set when this frame is a loop body
};

struct Thread {
    enum class St : uint8_t { RUN, PARK, DONE };
    uint32_t block = 0;
    uint32_t tid = 0;
    St st = St::RUN;
    const ir::Instruction* parked_at = nullptr;
    std::vector<Frame> stack;
    std::vector<uint64_t> regs;
    std::vector<uint8_t> local;
};

bool is_blocking(Opcode op) {
    return op == Opcode::BAR_SHARED || op == Opcode::BAR_GLOBAL || op == Opcode::VOTE_ANY ||
           op == Opcode::VOTE_ALL || op == Opcode::BALLOT || op == Opcode::SHUFFLE;
}

class Interp {
  public:
    Interp(const ir::Kernel& k, const Launch& l, std::vector<uint8_t>& mem)
        : kernel_(k), launch_(l), mem_(mem) {
        for (int i = 0; i < 3; ++i)
            if (l.grid[i] == 0 || l.block[i] == 0)
                fail(ErrorKind::Validation, "grid and block dimensions must be nonzero");
        if (l.args.size() != k.params.size())
            fail(ErrorKind::Validation, "kernel '" + k.name + "' takes " +
                                            std::to_string(k.params.size()) +
                                            " arguments, got " + std::to_string(l.args.size()));
        T_ = l.block[0] * l.block[1] * l.block[2];
        blocks_ = l.grid[0] * l.grid[1] * l.grid[2];
        if (ir::kernel_uses_ballot(k) && T_ > 64)
            fail(ErrorKind::Validation,
                 "kernel uses BALLOT, which limits blocks to 64 threads (got " +
                     std::to_string(T_) + ")");
        uint32_t reg_count = 0;
        for (const auto& d : k.registers) reg_count = std::max(reg_count, d.id + 1);
        shared_.assign(blocks_, std::vector<uint8_t>(k.shared_mem_bytes, 0));
        threads_.reserve(size_t(blocks_) * T_);
        for (uint32_t b = 0; b < blocks_; ++b)
            for (uint32_t t = 0; t < T_; ++t) {
                Thread th;
                th.block = b;
                th.tid = t;
                th.regs.assign(reg_count, 0);
                for (size_t p = 0; p < k.params.size(); ++p)
                    th.regs[k.params[p].reg.id] =
                        ir::canonical_bits(k.params[p].reg.type, l.args[p]);
                th.stack.push_back(Frame{&k.body, 0, nullptr});
                threads_.push_back(std::move(th));
            }
    }

    Result run() {
        while (true) {
            bool alive = false;
            for (auto& th : threads_)
                if (th.st == Thread::St::RUN) {
                    run_thread(th);
                    alive = true;
                }
            bool all_done = true;
            for (const auto& th : threads_) all_done = all_done && th.st == Thread::St::DONE;
            if (all_done) break;
            if (!alive && !release_sweep()) {
                const ir::Instruction* at = nullptr;
                for (const auto& th : threads_)
                    if (th.st == Thread::St::PARK) at = th.parked_at;
                fail(ErrorKind::Fault,
                     std::string("rendezvous deadlock: ") +
                         (at ? ir::to_string(at->opcode) : "barrier") +
                         " never releases (some threads cannot reach it)");
            }
        }
        return Result{retired_};
    }

  private:
    const ir::Kernel& kernel_;
    const Launch& launch_;
    std::vector<uint8_t>& mem_;
    uint32_t T_ = 0, blocks_ = 0;
    std::vector<Thread> threads_;
    std::vector<std::vector<uint8_t>> shared_;
    uint64_t retired_ = 0;

    Thread& at(uint32_t block, uint32_t tid) { return threads_[size_t(block) * T_ + tid]; }

    void run_thread(Thread& th) {
        while (th.st == Thread::St::RUN) step(th);
    }

    void step(Thread& th) {
        if (th.stack.empty()) {
            th.st = Thread::St::DONE;
            return;
        }
        Frame& f = th.stack.back();
        if (f.idx == f.region->items.size()) {
            if (f.loop && th.regs[f.loop->break_predicate.id] == 0) {
                f.idx = 0;  // do-while back edge
                return;
            }
            th.stack.pop_back();
            return;
        }
        const ir::RegionItem& item = f.region->items[f.idx];
        if (const auto* pb = std::get_if<ir::PredBlock>(&item)) {
            f.idx++;
            if (th.regs[pb->predicate.id])
                th.stack.push_back(Frame{&pb->then_region, 0, nullptr});
            else if (pb->else_region)
                th.stack.push_back(Frame{&*pb->else_region, 0, nullptr});
            return;
        }
        if (const auto* lb = std::get_if<ir::LoopBlock>(&item)) {
            f.idx++;
            th.stack.push_back(Frame{&lb->body, 0, lb});
            return;
        }
        const ir::Instruction& in = std::get<ir::Instruction>(item);
        if (is_blocking(in.opcode)) {
            th.st = Thread::St::PARK;
            th.parked_at = &in;
            return;
        }
        exec(th, in);
    }

    uint64_t src(const Thread& th, const ir::Instruction& in, size_t i) const {
        if (const auto* r = std::get_if<ir::RegisterRef>(&in.srcs[i])) return th.regs[r->id];
        return std::get<ir::Immediate>(in.srcs[i]).bits;
    }

    void exec(Thread& th, const ir::Instruction& in) {
        Frame& f = th.stack.back();
        retired_++;
        switch (in.opcode) {
            case Opcode::ADD: case Opcode::SUB: case Opcode::MUL: case Opcode::DIV:
            case Opcode::REM: case Opcode::MIN: case Opcode::MAX: case Opcode::AND:
            case Opcode::OR: case Opcode::XOR: case Opcode::SHL: case Opcode::SHR:
                th.regs[in.dst->id] = arith(in.opcode, in.sem_type, src(th, in, 0),
                                            src(th, in, 1), 0);
                break;
            case Opcode::NOT:
                th.regs[in.dst->id] = arith(in.opcode, in.sem_type, src(th, in, 0), 0, 0);
                break;
            case Opcode::FMA:
                th.regs[in.dst->id] = arith(in.opcode, in.sem_type, src(th, in, 0),
                                            src(th, in, 1), src(th, in, 2));
                break;
            case Opcode::SETP_EQ: case Opcode::SETP_NE: case Opcode::SETP_LT:
            case Opcode::SETP_LE: case Opcode::SETP_GT: case Opcode::SETP_GE:
                th.regs[in.dst->id] =
                    setp(in.opcode, in.sem_type, src(th, in, 0), src(th, in, 1)) ? 1 : 0;
                break;
            case Opcode::MOV:
                th.regs[in.dst->id] = ir::canonical_bits(in.sem_type, src(th, in, 0));
                break;
            case Opcode::CVT: {
                const auto& r = std::get<ir::RegisterRef>(in.srcs[0]);
                th.regs[in.dst->id] = cvt(in.sem_type, r.type, th.regs[r.id]);
                break;
            }
            case Opcode::SET_PREDICATE:
                th.regs[in.dst->id] =
                    ir::canonical_bits(in.sem_type, src(th, in, 0)) != 0 ? 1 : 0;
                break;
            case Opcode::GET_GLOBAL_ID: case Opcode::GET_LOCAL_ID: case Opcode::GET_BLOCK_ID:
            case Opcode::GET_BLOCK_DIM: case Opcode::GET_GRID_DIM:
                th.regs[in.dst->id] = builtin(th, in.opcode, uint32_t(src(th, in, 0)));
                break;
            case Opcode::LD:
                th.regs[in.dst->id] = load(th, in);
                break;
            case Opcode::ST:
                store(th, in);
                break;
            case Opcode::ATOM_ADD: case Opcode::ATOM_CAS:
                atomic(th, in);
                break;
            case Opcode::RETURN:
                th.stack.clear();
                th.st = Thread::St::DONE;
                return;
            default:
                fail(ErrorKind::Fault, std::string("instruction ") + ir::to_string(in.opcode) +
                                           " is not valid here");
        }
        f.idx++;
    }

    uint64_t builtin(const Thread& th, Opcode op, uint32_t d) const {
        uint32_t bc[3] = {th.block % launch_.grid[0],
                          (th.block / launch_.grid[0]) % launch_.grid[1],
                          th.block / (launch_.grid[0] * launch_.grid[1])};
        uint32_t tc[3] = {th.tid % launch_.block[0],
                          (th.tid / launch_.block[0]) % launch_.block[1],
                          th.tid / (launch_.block[0] * launch_.block[1])};
        switch (op) {
            case Opcode::GET_GLOBAL_ID:
                return uint32_t(uint64_t(bc[d]) * launch_.block[d] + tc[d]);
            case Opcode::GET_LOCAL_ID: return tc[d];
            case Opcode::GET_BLOCK_ID: return bc[d];
            case Opcode::GET_BLOCK_DIM: return launch_.block[d];
            case Opcode::GET_GRID_DIM: return launch_.grid[d];
            default: return 0;
        }
    }

    uint8_t* locate(Thread& th, const ir::Instruction& in, uint64_t addr, uint32_t n) {
        switch (*in.space) {
            case ir::MemSpace::GLOBAL:
                if (addr > mem_.size() || n > mem_.size() - addr)
                    fail(ErrorKind::Fault, "global access out of bounds at offset " +
                                               std::to_string(addr));
                return mem_.data() + addr;
            case ir::MemSpace::SHARED: {
                auto& sm = shared_[th.block];
                if (addr > sm.size() || n > sm.size() - addr)
                    fail(ErrorKind::Fault, "shared access out of bounds at offset " +
                                               std::to_string(addr));
                return sm.data() + addr;
            }
            case ir::MemSpace::LOCAL: {
                if (addr + n > kLocalCap)
                    fail(ErrorKind::Fault, "local access beyond the private space limit");
                if (addr + n > th.local.size()) th.local.resize(size_t(addr + n), 0);
                return th.local.data() + addr;
            }
        }
        fail(ErrorKind::Fault, "bad memory space");
    }

    uint64_t load(Thread& th, const ir::Instruction& in) {
        uint64_t addr = src(th, in, 0) + in.mem_offset;
        uint32_t n = ir::element_size(in.sem_type);
        uint64_t raw = 0;
        std::memcpy(&raw, locate(th, in, addr, n), n);
        return ir::canonical_bits(in.sem_type, raw);
    }

    void store(Thread& th, const ir::Instruction& in) {
        uint64_t addr = src(th, in, 0) + in.mem_offset;
        uint32_t n = ir::element_size(in.sem_type);
        uint64_t slot = src(th, in, 1);
        std::memcpy(locate(th, in, addr, n), &slot, n);
    }

    void atomic(Thread& th, const ir::Instruction& in) {
        uint64_t addr = src(th, in, 0) + in.mem_offset;
        uint32_t n = ir::element_size(in.sem_type);
        if (addr > mem_.size() || n > mem_.size() - addr)
            fail(ErrorKind::Fault,
                 "global access out of bounds at offset " + std::to_string(addr));
        uint64_t raw = 0;
        std::memcpy(&raw, mem_.data() + addr, n);
        uint64_t old = ir::canonical_bits(in.sem_type, raw);
        if (in.opcode == Opcode::ATOM_ADD) {
            uint64_t next = arith(Opcode::ADD, in.sem_type, old, src(th, in, 1), 0);
            std::memcpy(mem_.data() + addr, &next, n);
        } else if (old == src(th, in, 1)) {
            uint64_t next = src(th, in, 2);
            std::memcpy(mem_.data() + addr, &next, n);
        }
        th.regs[in.dst->id] = old;
    }

    // ---- rendezvous ---------------------------------------------------------

    std::vector<Thread*> live_of_block(uint32_t b) {
        std::vector<Thread*> v;
        for (uint32_t t = 0; t < T_; ++t)
            if (at(b, t).st != Thread::St::DONE) v.push_back(&at(b, t));
        return v;
    }

    bool release_sweep() {
        bool released = false;
        for (uint32_t b = 0; b < blocks_; ++b) {
            auto live = live_of_block(b);
            if (live.empty()) continue;
            const ir::Instruction* in = live[0]->parked_at;
            bool together = true;
            for (Thread* t : live)
                together = together && t->st == Thread::St::PARK && t->parked_at == in;
            if (!together || in->opcode == Opcode::BAR_GLOBAL) continue;
            release(live, *in);
            released = true;
        }
        if (released) return true;
        // device-wide barrier: every surviving thread of the grid must be here
        std::vector<Thread*> live;
        for (auto& th : threads_)
            if (th.st != Thread::St::DONE) live.push_back(&th);
        if (live.empty()) return false;
        const ir::Instruction* in = live[0]->parked_at;
        for (Thread* t : live)
            if (t->st != Thread::St::PARK || t->parked_at != in) return false;
        if (in->opcode != Opcode::BAR_GLOBAL) return false;
        release(live, *in);
        return true;
    }

    void release(std::vector<Thread*>& group, const ir::Instruction& in) {
        switch (in.opcode) {
            case Opcode::VOTE_ANY:
            case Opcode::VOTE_ALL: {
                bool any = false, all = true;
                for (Thread* t : group) {
                    bool v = src(*t, in, 0) != 0;
                    any = any || v;
                    all = all && v;
                }
                uint64_t r = in.opcode == Opcode::VOTE_ANY ? (any ? 1 : 0) : (all ? 1 : 0);
                for (Thread* t : group) t->regs[in.dst->id] = r;
                break;
            }
            case Opcode::BALLOT: {
                uint64_t bits = 0;
                for (Thread* t : group)
                    if (src(*t, in, 0) != 0) bits |= 1ull << t->tid;
                for (Thread* t : group) t->regs[in.dst->id] = bits;
                break;
            }
            case Opcode::SHUFFLE: {
                std::vector<uint64_t> vals(T_, 0);
                std::vector<bool> here(T_, false);
                for (Thread* t : group) {
                    vals[t->tid] = src(*t, in, 1);
                    here[t->tid] = true;
                }
                for (Thread* t : group) {
                    uint64_t s = uint32_t(src(*t, in, 0));
                    uint64_t v = (s < T_ && here[size_t(s)]) ? vals[size_t(s)] : vals[t->tid];
                    t->regs[in.dst->id] = ir::canonical_bits(in.sem_type, v);
                }
                break;
            }
            default:
                break;  // barriers move data through memory, nothing to compute
        }
        for (Thread* t : group) {
            retired_++;
            t->stack.back().idx++;
            t->st = Thread::St::RUN;
            t->parked_at = nullptr;
        }
    }
};

}  // namespace

Result run(const ir::Kernel& kernel, const Launch& launch, std::vector<uint8_t>& mem) {
    return Interp(kernel, launch, mem).run();
}

}  // namespace hetgpu::oracle

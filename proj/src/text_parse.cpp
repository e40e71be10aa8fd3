#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "hetgpu/text.h"

namespace hetgpu::text {

using namespace hetgpu::ir;

namespace {

constexpr size_t kMaxDiagnostics = 32;

enum class Tok : uint8_t {
    END, IDENT, DOTWORD,  // .func .reg .param .shared .u32 ...
    REG,                  // %r1 %rd2 %p0 %f3 %fd4
    NUMBER,               // integer or float spelling, classified later
    AT,                   // @PRED @ELSE @LOOP (lexed with the word attached)
    LPAREN, RPAREN, LBRACE, RBRACE, LBRACKET, RBRACKET,
    COMMA, SEMI, PLUS, MINUS, LT, GT, EQUALS, BAD,
};

struct Token {
    Tok kind = Tok::END;
    std::string_view text;
    Span span;
};

struct Lexer {
    std::string_view src;
    size_t pos = 0;
    uint32_t line = 1, col = 1;

    void advance(size_t n) {
        for (size_t i = 0; i < n && pos < src.size(); ++i, ++pos) {
            if (src[pos] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
    }

    static bool ident_char(char c) {
        return std::isalnum(uint8_t(c)) || c == '_' || c == '.' || c == '$';
    }

    Token next() {
        for (;;) {
            while (pos < src.size() && std::isspace(uint8_t(src[pos]))) advance(1);
            if (pos + 1 < src.size() && src[pos] == '/' && src[pos + 1] == '/') {
                while (pos < src.size() && src[pos] != '\n') advance(1);
                continue;
            }
            break;
        }
        Token t;
        t.span = {line, col, uint32_t(pos), uint32_t(pos)};
        if (pos >= src.size()) {
            t.kind = Tok::END;
            return t;
        }
        char c = src[pos];
        size_t start = pos;
        auto finish = [&](Tok kind) {
            t.kind = kind;
            t.text = src.substr(start, pos - start);
            t.span.end = uint32_t(pos);
            return t;
        };
        switch (c) {
            case '(': advance(1); return finish(Tok::LPAREN);
            case ')': advance(1); return finish(Tok::RPAREN);
            case '{': advance(1); return finish(Tok::LBRACE);
            case '}': advance(1); return finish(Tok::RBRACE);
            case '[': advance(1); return finish(Tok::LBRACKET);
            case ']': advance(1); return finish(Tok::RBRACKET);
            case ',': advance(1); return finish(Tok::COMMA);
            case ';': advance(1); return finish(Tok::SEMI);
            case '+': advance(1); return finish(Tok::PLUS);
            case '<': advance(1); return finish(Tok::LT);
            case '>': advance(1); return finish(Tok::GT);
            case '=': advance(1); return finish(Tok::EQUALS);
        }
        if (c == '@') {
            advance(1);
            while (pos < src.size() && (std::isalnum(uint8_t(src[pos])) || src[pos] == '_'))
                advance(1);
            return finish(Tok::AT);
        }
        if (c == '%') {
            advance(1);
            while (pos < src.size() && (std::isalnum(uint8_t(src[pos])) || src[pos] == '_'))
                advance(1);
            return finish(Tok::REG);
        }
        if (c == '.') {
            advance(1);
            while (pos < src.size() && ident_char(src[pos])) advance(1);
            return finish(Tok::DOTWORD);
        }
        if (c == '-' || std::isdigit(uint8_t(c))) {
            advance(1);
            // number body: digits, hex, float spellings (0f..., 1.5e-3)
            while (pos < src.size() &&
                   (std::isalnum(uint8_t(src[pos])) || src[pos] == '.' ||
                    ((src[pos] == '+' || src[pos] == '-') && pos > start &&
                     (src[pos - 1] == 'e' || src[pos - 1] == 'E'))))
                advance(1);
            if (pos == start + 1 && c == '-') return finish(Tok::MINUS);
            return finish(Tok::NUMBER);
        }
        if (std::isalpha(uint8_t(c)) || c == '_') {
            advance(1);
            while (pos < src.size() && ident_char(src[pos])) advance(1);
            return finish(Tok::IDENT);
        }
        advance(1);
        return finish(Tok::BAD);
    }
};

struct MnemonicInfo {
    Opcode opcode;
    bool has_type = false;     // type suffix present
    SemType sem = SemType::U32;
    bool ok = false;
};

bool parse_sem_suffix(std::string_view s, SemType* out) {
    std::string up;
    for (char c : s) up += char(std::toupper(uint8_t(c)));
    if (up == "U32") *out = SemType::U32;
    else if (up == "S32") *out = SemType::S32;
    else if (up == "U64") *out = SemType::U64;
    else if (up == "F32") *out = SemType::F32;
    else if (up == "F64") *out = SemType::F64;
    else if (up == "PRED") *out = SemType::PRED;
    else return false;
    return true;
}

// Base mnemonics, including the float-op aliases from the older listings.
bool lookup_base(std::string_view base, Opcode* op, bool* float_alias) {
    struct Entry { const char* name; Opcode op; bool fa; };
    static const Entry entries[] = {
        {"ADD", Opcode::ADD, false},   {"SUB", Opcode::SUB, false},
        {"MUL", Opcode::MUL, false},   {"DIV", Opcode::DIV, false},
        {"REM", Opcode::REM, false},   {"FMA", Opcode::FMA, false},
        {"MIN", Opcode::MIN, false},   {"MAX", Opcode::MAX, false},
        {"FADD", Opcode::ADD, true},   {"FSUB", Opcode::SUB, true},
        {"FMUL", Opcode::MUL, true},   {"FDIV", Opcode::DIV, true},
        {"FMIN", Opcode::MIN, true},   {"FMAX", Opcode::MAX, true},
        {"AND", Opcode::AND, false},   {"OR", Opcode::OR, false},
        {"XOR", Opcode::XOR, false},   {"NOT", Opcode::NOT, false},
        {"SHL", Opcode::SHL, false},   {"SHR", Opcode::SHR, false},
        {"MOV", Opcode::MOV, false},   {"CVT", Opcode::CVT, false},
        {"GET_GLOBAL_ID", Opcode::GET_GLOBAL_ID, false},
        {"GET_LOCAL_ID", Opcode::GET_LOCAL_ID, false},
        {"GET_BLOCK_ID", Opcode::GET_BLOCK_ID, false},
        {"GET_BLOCK_DIM", Opcode::GET_BLOCK_DIM, false},
        {"GET_GRID_DIM", Opcode::GET_GRID_DIM, false},
        {"ATOM_ADD", Opcode::ATOM_ADD, false},
        {"ATOM_CAS", Opcode::ATOM_CAS, false},
        {"BAR_SHARED", Opcode::BAR_SHARED, false},
        {"BAR_GLOBAL", Opcode::BAR_GLOBAL, false},
        {"VOTE_ANY", Opcode::VOTE_ANY, false},
        {"VOTE_ALL", Opcode::VOTE_ALL, false},
        {"BALLOT", Opcode::BALLOT, false},
        {"SHUFFLE", Opcode::SHUFFLE, false},
        {"SET_PREDICATE", Opcode::SET_PREDICATE, false},
        {"RETURN", Opcode::RETURN, false},
    };
    for (const Entry& e : entries) {
        if (base == e.name) {
            *op = e.op;
            *float_alias = e.fa;
            return true;
        }
    }
    return false;
}

MnemonicInfo decode_mnemonic(std::string_view word, std::optional<MemSpace>* space) {
    MnemonicInfo m;
    space->reset();
    // Split on dots: BASE[.COND][.TYPE]
    std::vector<std::string_view> parts;
    size_t p = 0;
    while (p <= word.size()) {
        size_t dot = word.find('.', p);
        if (dot == std::string_view::npos) {
            parts.push_back(word.substr(p));
            break;
        }
        parts.push_back(word.substr(p, dot - p));
        p = dot + 1;
    }
    if (parts.empty()) return m;
    std::string base;
    for (char c : parts[0]) base += char(std::toupper(uint8_t(c)));

    // LD_GLOBAL / ST_SHARED / LD_LOCAL fuse the space into the name.
    if (base.rfind("LD_", 0) == 0 || base.rfind("ST_", 0) == 0) {
        std::string sp = base.substr(3);
        if (sp == "GLOBAL") *space = MemSpace::GLOBAL;
        else if (sp == "SHARED") *space = MemSpace::SHARED;
        else if (sp == "LOCAL") *space = MemSpace::LOCAL;
        else return m;
        m.opcode = base[0] == 'L' ? Opcode::LD : Opcode::ST;
        if (parts.size() == 2 && parse_sem_suffix(parts[1], &m.sem)) {
            m.has_type = true;
            m.ok = true;
        }
        return m;
    }
    if (base == "SETP") {
        if (parts.size() != 3) return m;
        std::string cond;
        for (char c : parts[1]) cond += char(std::toupper(uint8_t(c)));
        if (cond == "EQ") m.opcode = Opcode::SETP_EQ;
        else if (cond == "NE") m.opcode = Opcode::SETP_NE;
        else if (cond == "LT") m.opcode = Opcode::SETP_LT;
        else if (cond == "LE") m.opcode = Opcode::SETP_LE;
        else if (cond == "GT") m.opcode = Opcode::SETP_GT;
        else if (cond == "GE") m.opcode = Opcode::SETP_GE;
        else return m;
        if (parse_sem_suffix(parts[2], &m.sem)) {
            m.has_type = true;
            m.ok = true;
        }
        return m;
    }
    bool float_alias = false;
    if (!lookup_base(base, &m.opcode, &float_alias)) return m;
    if (parts.size() == 1) {
        if (float_alias) {
            m.sem = SemType::F32;
            m.has_type = true;
        }
        m.ok = true;
        return m;
    }
    if (parts.size() == 2 && parse_sem_suffix(parts[1], &m.sem)) {
        m.has_type = true;
        m.ok = true;
    }
    return m;
}

SemType slot_type_of(const Signature& sig, uint8_t slot, SemType sem) {
    switch (sig.slots[slot]) {
        case SlotRule::SAME: return sem;
        case SlotRule::PRED: return SemType::PRED;
        case SlotRule::U32:
        case SlotRule::DIM_IMM: return SemType::U32;
        case SlotRule::ADDR:
        case SlotRule::REG_SRC: return SemType::U64;
    }
    return sem;
}

struct Parser {
    Lexer lex;
    Token tok;
    std::string filename;
    ParseResult result;
    // Span bookkeeping for mapping validation findings back to source.
    std::map<std::pair<std::string, InstructionPath>, Span> spans;
    std::map<std::string, Span> kernel_spans;

    explicit Parser(std::string_view src, std::string file)
        : lex{src}, filename(std::move(file)) {
        tok = lex.next();
    }

    void bump() { tok = lex.next(); }

    void diag(const Span& sp, std::string msg) {
        if (result.diagnostics.size() >= kMaxDiagnostics) {
            result.truncated = true;
            return;
        }
        result.diagnostics.push_back({sp, std::move(msg)});
    }

    bool expect(Tok kind, const char* what) {
        if (tok.kind == kind) {
            bump();
            return true;
        }
        diag(tok.span, std::string("expected ") + what);
        return false;
    }

    // Skips to a statement boundary after an error.
    void recover() {
        int depth = 0;
        while (tok.kind != Tok::END) {
            if (tok.kind == Tok::SEMI && depth == 0) {
                bump();
                return;
            }
            if (tok.kind == Tok::LBRACE) ++depth;
            if (tok.kind == Tok::RBRACE) {
                if (depth == 0) return;
                --depth;
            }
            bump();
        }
    }

    // --- registers ---------------------------------------------------------

    struct RegName {
        uint32_t id = 0;
        char cls = 0;  // 'r', 'd' (%rd), 'p', 'f', 'F' (%fd)
        bool ok = false;
    };

    static RegName decode_reg(std::string_view text) {
        RegName rn;
        if (text.size() < 2 || text[0] != '%') return rn;
        size_t i = 1;
        std::string cls;
        while (i < text.size() && std::isalpha(uint8_t(text[i]))) cls += text[i++];
        if (i >= text.size()) return rn;
        uint32_t id = 0;
        auto [p, ec] = std::from_chars(text.data() + i, text.data() + text.size(), id);
        if (ec != std::errc() || p != text.data() + text.size()) return rn;
        rn.id = id;
        if (cls == "r") rn.cls = 'r';
        else if (cls == "rd") rn.cls = 'd';
        else if (cls == "p") rn.cls = 'p';
        else if (cls == "f") rn.cls = 'f';
        else if (cls == "fd") rn.cls = 'F';
        else return rn;
        rn.ok = true;
        return rn;
    }

    static bool class_matches(char cls, SemType t) {
        switch (cls) {
            case 'r': return t == SemType::U32 || t == SemType::S32 || t == SemType::F32;
            case 'd': return t == SemType::U64 || t == SemType::F64;
            case 'p': return t == SemType::PRED;
            case 'f': return t == SemType::F32;
            case 'F': return t == SemType::F64;
        }
        return false;
    }

    std::optional<RegisterRef> reference_register(const Kernel& k, const Token& t) {
        RegName rn = decode_reg(t.text);
        if (!rn.ok) {
            diag(t.span, "malformed register name");
            return std::nullopt;
        }
        const RegisterDecl* d = k.find_register(rn.id);
        if (!d) {
            diag(t.span, "register " + std::string(t.text) + " is not declared");
            return std::nullopt;
        }
        if (!class_matches(rn.cls, d->type)) {
            diag(t.span, "register " + std::string(t.text) + " is declared ." +
                             to_string(d->type) +
                             "; its name class does not match");
            return std::nullopt;
        }
        return RegisterRef{rn.id, d->type};
    }

    // --- immediates ---------------------------------------------------------

    static bool parse_uint_hex(std::string_view s, uint64_t* out) {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), *out, 16);
        return ec == std::errc() && p == s.data() + s.size();
    }

    std::optional<Immediate> decode_immediate(const Token& t, SemType slot) {
        std::string_view s = t.text;
        bool neg = false;
        if (!s.empty() && s[0] == '-') {
            neg = true;
            s.remove_prefix(1);
        }
        // Raw-bit float spellings: 0fXXXXXXXX / 0dXXXXXXXXXXXXXXXX.
        if (!neg && s.size() == 10 && s[0] == '0' && (s[1] == 'f' || s[1] == 'F')) {
            uint64_t bits;
            if (parse_uint_hex(s.substr(2), &bits) && slot == SemType::F32)
                return Immediate{bits};
        }
        if (!neg && s.size() == 18 && s[0] == '0' && (s[1] == 'd' || s[1] == 'D')) {
            uint64_t bits;
            if (parse_uint_hex(s.substr(2), &bits) && slot == SemType::F64)
                return Immediate{bits};
        }
        bool floaty = s.find('.') != std::string_view::npos ||
                      ((s.find('e') != std::string_view::npos ||
                        s.find('E') != std::string_view::npos) &&
                       s.rfind("0x", 0) != 0);
        if (slot == SemType::F32 || slot == SemType::F64) {
            double v = 0;
            try {
                size_t used = 0;
                v = std::stod(std::string(s), &used);
                if (used != s.size()) {
                    diag(t.span, "malformed float immediate");
                    return std::nullopt;
                }
            } catch (...) {
                diag(t.span, "malformed float immediate");
                return std::nullopt;
            }
            if (neg) v = -v;
            if (slot == SemType::F32) {
                float f = float(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                return Immediate{bits};
            }
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            return Immediate{bits};
        }
        if (floaty) {
            diag(t.span, "float immediate in an integer operand");
            return std::nullopt;
        }
        uint64_t v = 0;
        bool ok;
        if (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0)
            ok = parse_uint_hex(s.substr(2), &v);
        else {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            ok = ec == std::errc() && p == s.data() + s.size();
        }
        if (!ok) {
            diag(t.span, "malformed integer immediate");
            return std::nullopt;
        }
        if (neg) v = uint64_t(-int64_t(v));
        return Immediate{canonical_bits(slot, v)};
    }

    // --- declarations -------------------------------------------------------

    bool parse_type_word(std::string_view w, SemType* out) {
        if (w == ".u32") *out = SemType::U32;
        else if (w == ".s32") *out = SemType::S32;
        else if (w == ".u64") *out = SemType::U64;
        else if (w == ".f32") *out = SemType::F32;
        else if (w == ".f64") *out = SemType::F64;
        else if (w == ".pred") *out = SemType::PRED;
        else return false;
        return true;
    }

    // Parses "%rN<tag>" in a declaration position; returns false on error.
    bool declare_register(Kernel& k, SemType type) {
        if (tok.kind != Tok::REG) {
            diag(tok.span, "expected register name");
            return false;
        }
        RegName rn = decode_reg(tok.text);
        if (!rn.ok) {
            diag(tok.span, "malformed register name");
            return false;
        }
        if (!class_matches(rn.cls, type)) {
            diag(tok.span, "register class does not match ." + std::string(to_string(type)));
            return false;
        }
        if (k.find_register(rn.id)) {
            diag(tok.span, "register " + std::string(tok.text) + " declared twice");
            return false;
        }
        bump();
        uint8_t tag = 0;
        if (tok.kind == Tok::LT) {
            bump();
            if (tok.kind != Tok::NUMBER) {
                diag(tok.span, "expected address-space tag");
                return false;
            }
            uint64_t v = 0;
            auto txt = tok.text;
            auto [p, ec] = std::from_chars(txt.data(), txt.data() + txt.size(), v);
            if (ec != std::errc() || p != txt.data() + txt.size()) {
                diag(tok.span, "malformed address-space tag");
                return false;
            }
            tag = uint8_t(v);
            bump();
            if (!expect(Tok::GT, "'>'")) return false;
        }
        k.registers.push_back({rn.id, type, tag});
        return true;
    }

    // --- instructions and regions -------------------------------------------

    struct RawOperand {
        bool is_memory = false;
        Token token;       // register or number
        int64_t offset = 0;
    };

    bool parse_raw_operand(RawOperand* out) {
        if (tok.kind == Tok::LBRACKET) {
            out->is_memory = true;
            bump();
            if (tok.kind != Tok::REG) {
                diag(tok.span, "expected address register");
                return false;
            }
            out->token = tok;
            bump();
            if (tok.kind == Tok::PLUS || tok.kind == Tok::MINUS) {
                bool neg = tok.kind == Tok::MINUS;
                bump();
                if (tok.kind != Tok::NUMBER) {
                    diag(tok.span, "expected offset");
                    return false;
                }
                int64_t v = 0;
                auto txt = tok.text;
                auto [p, ec] = std::from_chars(txt.data(), txt.data() + txt.size(), v);
                if (ec != std::errc() || p != txt.data() + txt.size()) {
                    diag(tok.span, "malformed offset");
                    return false;
                }
                out->offset = neg ? -v : v;
                bump();
            } else if (tok.kind == Tok::NUMBER && !tok.text.empty() &&
                       tok.text[0] == '-') {
                int64_t v = 0;
                auto txt = tok.text;
                auto [p, ec] = std::from_chars(txt.data(), txt.data() + txt.size(), v);
                if (ec != std::errc() || p != txt.data() + txt.size()) {
                    diag(tok.span, "malformed offset");
                    return false;
                }
                out->offset = v;
                bump();
            }
            return expect(Tok::RBRACKET, "']'");
        }
        if (tok.kind == Tok::REG || tok.kind == Tok::NUMBER) {
            out->token = tok;
            bump();
            return true;
        }
        diag(tok.span, "expected operand");
        return false;
    }

    bool parse_instruction(Kernel& k, const Token& mnemo, Region& region,
                           InstructionPath& path) {
        std::optional<MemSpace> space;
        MnemonicInfo mi = decode_mnemonic(mnemo.text, &space);
        if (!mi.ok) {
            diag(mnemo.span, "unknown instruction '" + std::string(mnemo.text) + "'");
            recover();
            return false;
        }
        const Signature& sig = signature_of(mi.opcode);
        Instruction in;
        in.opcode = mi.opcode;
        in.space = space;
        if (mi.has_type) {
            in.sem_type = mi.sem;
        } else {
            // Untyped forms take their conventional sem_type.
            switch (mi.opcode) {
                case Opcode::VOTE_ANY:
                case Opcode::VOTE_ALL: in.sem_type = SemType::PRED; break;
                case Opcode::BALLOT: in.sem_type = SemType::U64; break;
                default: in.sem_type = SemType::U32; break;
            }
            if (sig.allowed_types != type_bit(in.sem_type) &&
                sig.result != ResultRule::NONE && sig.arity > 0) {
                diag(mnemo.span, "instruction needs a type suffix");
                recover();
                return false;
            }
        }

        std::vector<RawOperand> raw;
        if (tok.kind != Tok::SEMI) {
            for (;;) {
                RawOperand op;
                if (!parse_raw_operand(&op)) {
                    recover();
                    return false;
                }
                raw.push_back(op);
                if (tok.kind != Tok::COMMA) break;
                bump();
            }
        }
        if (!expect(Tok::SEMI, "';'")) {
            recover();
            return false;
        }

        size_t want = sig.arity + (sig.result != ResultRule::NONE ? 1 : 0);
        if (raw.size() != want) {
            diag(mnemo.span, std::string(to_string(mi.opcode)) + " expects " +
                                 std::to_string(want) + " operands, got " +
                                 std::to_string(raw.size()));
            return false;
        }
        size_t idx = 0;
        if (sig.result != ResultRule::NONE) {
            if (raw[0].is_memory || raw[0].token.kind != Tok::REG) {
                diag(raw[0].token.span, "destination must be a register");
                return false;
            }
            auto reg = reference_register(k, raw[0].token);
            if (!reg) return false;
            in.dst = *reg;
            idx = 1;
        }
        for (uint8_t s = 0; s < sig.arity; ++s, ++idx) {
            const RawOperand& op = raw[idx];
            SemType slot = slot_type_of(sig, s, in.sem_type);
            if (sig.slots[s] == SlotRule::ADDR) {
                if (!op.is_memory) {
                    diag(op.token.span, "expected a [%rd] memory operand");
                    return false;
                }
                auto reg = reference_register(k, op.token);
                if (!reg) return false;
                in.srcs.push_back(*reg);
                in.mem_offset = op.offset;
                continue;
            }
            if (op.is_memory) {
                diag(op.token.span, "unexpected memory operand");
                return false;
            }
            if (op.token.kind == Tok::REG) {
                auto reg = reference_register(k, op.token);
                if (!reg) return false;
                in.srcs.push_back(*reg);
            } else {
                auto imm = decode_immediate(op.token, slot);
                if (!imm) return false;
                in.srcs.push_back(*imm);
            }
        }

        path.push_back(uint32_t(region.items.size()));
        spans[{k.name, path}] = mnemo.span;
        k.meta.source_lines[path] = {filename, mnemo.span.line};
        path.pop_back();
        region.items.push_back(std::move(in));
        return true;
    }

    void parse_region(Kernel& k, Region& region, InstructionPath& path) {
        while (tok.kind != Tok::RBRACE && tok.kind != Tok::END) {
            if (tok.kind == Tok::IDENT) {
                Token mnemo = tok;
                bump();
                parse_instruction(k, mnemo, region, path);
                continue;
            }
            if (tok.kind == Tok::AT) {
                std::string word(tok.text);
                Token at = tok;
                bump();
                if (word == "@PRED") {
                    if (!expect(Tok::LPAREN, "'('")) { recover(); continue; }
                    if (tok.kind != Tok::REG) {
                        diag(tok.span, "expected predicate register");
                        recover();
                        continue;
                    }
                    auto pred = reference_register(k, tok);
                    bump();
                    if (!expect(Tok::RPAREN, "')'") || !expect(Tok::LBRACE, "'{'")) {
                        recover();
                        continue;
                    }
                    PredBlock pb;
                    pb.predicate = pred.value_or(RegisterRef{0, SemType::PRED});
                    uint32_t item_index = uint32_t(region.items.size());
                    path.push_back(item_index);
                    path.push_back(0);
                    parse_region(k, pb.then_region, path);
                    expect(Tok::RBRACE, "'}'");
                    if (tok.kind == Tok::AT && tok.text == "@ELSE") {
                        bump();
                        if (expect(Tok::LBRACE, "'{'")) {
                            pb.else_region.emplace();
                            path.back() = 1;
                            parse_region(k, *pb.else_region, path);
                            expect(Tok::RBRACE, "'}'");
                        }
                    }
                    path.pop_back();
                    path.pop_back();
                    region.items.push_back(std::move(pb));
                    continue;
                }
                if (word == "@LOOP") {
                    if (!expect(Tok::LPAREN, "'('")) { recover(); continue; }
                    if (tok.kind != Tok::REG) {
                        diag(tok.span, "expected break predicate register");
                        recover();
                        continue;
                    }
                    auto pred = reference_register(k, tok);
                    bump();
                    LoopBlock lb;
                    lb.break_predicate = pred.value_or(RegisterRef{0, SemType::PRED});
                    if (tok.kind == Tok::COMMA) {
                        bump();
                        if (tok.kind == Tok::IDENT && tok.text == "trip") {
                            bump();
                            if (expect(Tok::EQUALS, "'='")) {
                                if (tok.kind == Tok::NUMBER) {
                                    int64_t v = 0;
                                    auto txt = tok.text;
                                    std::from_chars(txt.data(), txt.data() + txt.size(), v);
                                    lb.trip_annotation = v;
                                    bump();
                                } else {
                                    diag(tok.span, "expected trip count");
                                }
                            }
                        } else {
                            diag(tok.span, "expected 'trip='");
                        }
                    }
                    if (!expect(Tok::RPAREN, "')'") || !expect(Tok::LBRACE, "'{'")) {
                        recover();
                        continue;
                    }
                    path.push_back(uint32_t(region.items.size()));
                    path.push_back(0);
                    parse_region(k, lb.body, path);
                    path.pop_back();
                    path.pop_back();
                    expect(Tok::RBRACE, "'}'");
                    region.items.push_back(std::move(lb));
                    continue;
                }
                diag(at.span, "unknown block keyword '" + word + "'");
                recover();
                continue;
            }
            diag(tok.span, "expected instruction or block");
            recover();
            if (tok.kind == Tok::RBRACE || tok.kind == Tok::END) break;
        }
    }

    void parse_kernel() {
        // at ".func"
        Span header = tok.span;
        bump();
        if (tok.kind != Tok::IDENT) {
            diag(tok.span, "expected kernel name after .func");
            recover();
            return;
        }
        Kernel k;
        k.name = std::string(tok.text);
        kernel_spans[k.name] = header;
        bump();
        if (!expect(Tok::LPAREN, "'('")) { recover(); return; }
        while (tok.kind != Tok::RPAREN && tok.kind != Tok::END) {
            if (tok.kind != Tok::DOTWORD || tok.text != ".param") {
                diag(tok.span, "expected .param");
                recover();
                return;
            }
            bump();
            SemType t;
            if (tok.kind != Tok::DOTWORD || !parse_type_word(tok.text, &t)) {
                diag(tok.span, "expected parameter type");
                recover();
                return;
            }
            bump();
            if (tok.kind != Tok::REG) {
                diag(tok.span, "expected parameter register");
                recover();
                return;
            }
            std::string pname(tok.text);
            if (!declare_register(k, t)) { recover(); return; }
            k.params.push_back({pname, RegisterRef{k.registers.back().id, t}});
            if (tok.kind == Tok::COMMA) bump();
        }
        if (!expect(Tok::RPAREN, "')'") || !expect(Tok::LBRACE, "'{'")) {
            recover();
            return;
        }
        // declarations first
        while (tok.kind == Tok::DOTWORD) {
            std::string word(tok.text);
            if (word == ".reg") {
                bump();
                SemType t;
                if (tok.kind != Tok::DOTWORD || !parse_type_word(tok.text, &t)) {
                    diag(tok.span, "expected register type");
                    recover();
                    continue;
                }
                bump();
                for (;;) {
                    if (!declare_register(k, t)) break;
                    if (tok.kind == Tok::COMMA) {
                        bump();
                        continue;
                    }
                    break;
                }
                if (!expect(Tok::SEMI, "';'")) recover();
            } else if (word == ".shared") {
                bump();
                if (tok.kind != Tok::NUMBER) {
                    diag(tok.span, "expected shared memory size");
                    recover();
                    continue;
                }
                uint64_t v = 0;
                auto txt = tok.text;
                auto [p, ec] = std::from_chars(txt.data(), txt.data() + txt.size(), v);
                if (ec != std::errc() || p != txt.data() + txt.size())
                    diag(tok.span, "malformed shared memory size");
                else
                    k.shared_mem_bytes = v;
                bump();
                if (!expect(Tok::SEMI, "';'")) recover();
            } else {
                diag(tok.span, "unknown declaration '" + word + "'");
                recover();
            }
        }
        InstructionPath path;
        parse_region(k, k.body, path);
        expect(Tok::RBRACE, "'}'");
        result.module.kernels.push_back(std::move(k));
    }

    void run() {
        bool any = false;
        while (tok.kind != Tok::END) {
            if (tok.kind == Tok::DOTWORD && tok.text == ".func") {
                any = true;
                parse_kernel();
            } else {
                diag(tok.span, "expected .func");
                // Skip ahead to the next plausible kernel start.
                while (tok.kind != Tok::END &&
                       !(tok.kind == Tok::DOTWORD && tok.text == ".func"))
                    bump();
            }
        }
        if (!any && result.diagnostics.empty())
            diag({1, 1, 0, 0}, "expected .func");
    }
};

}  // namespace

std::string ParseResult::diagnostics_text() const {
    std::ostringstream os;
    for (const auto& d : diagnostics)
        os << d.span.line << ":" << d.span.column << ": " << d.message << "\n";
    if (truncated) os << "(further diagnostics dropped)\n";
    return os.str();
}

ParseResult parse(std::string_view source, const std::string& filename) {
    Parser p(source, filename);
    p.run();
    ParseResult res = std::move(p.result);
    if (!res.diagnostics.empty()) return res;

    ir::ValidationReport vr = ir::finalize(res.module);
    for (const auto& d : vr.diagnostics) {
        Span sp{0, 0, 0, 0};
        auto it = p.spans.find({d.kernel, d.path});
        if (it != p.spans.end()) {
            sp = it->second;
        } else {
            auto kit = p.kernel_spans.find(d.kernel);
            if (kit != p.kernel_spans.end()) sp = kit->second;
        }
        if (res.diagnostics.size() >= kMaxDiagnostics) {
            res.truncated = true;
            break;
        }
        res.diagnostics.push_back({sp, d.message});
    }
    return res;
}

}  // namespace hetgpu::text

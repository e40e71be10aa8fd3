// Textual form of hetIR (.hir files): parser and canonical printer.
// The grammar is documented in docs/hetir.md. Parsing is total: any byte
// sequence yields either a module or diagnostics, never a crash.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hetgpu/ir.h"

namespace hetgpu::text {

struct Span {
    uint32_t line = 0;    // 1-based
    uint32_t column = 0;  // 1-based
    uint32_t begin = 0;   // byte offsets into the input
    uint32_t end = 0;
};

struct ParseDiagnostic {
    Span span;
    std::string message;
};

struct ParseResult {
    ir::Module module;
    std::vector<ParseDiagnostic> diagnostics;  // at most 32 retained
    bool truncated = false;                    // more diagnostics were dropped
    bool ok() const { return diagnostics.empty(); }
    std::string diagnostics_text() const;
};

// Parses, then validates and finalizes (module_id stamped on success).
// Validation findings are folded into diagnostics with source positions.
ParseResult parse(std::string_view source, const std::string& filename = "<memory>");

// Canonical printer: stable ordering, canonical register names and immediate
// spellings. print(parse(print(m)).module) == print(m) for valid modules.
std::string print(const ir::Module& m);
std::string print(const ir::Kernel& k);

// Canonical register name for a declared type: %p for predicates, %rd for
// 64-bit types, %r for 32-bit types.
std::string register_name(uint32_t id, ir::SemType t);

std::string immediate_text(const ir::Immediate& imm, ir::SemType slot_type);

// One instruction in canonical syntax, no indent or trailing newline.
std::string instruction_text(const ir::Instruction& in);

}  // namespace hetgpu::text

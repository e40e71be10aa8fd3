// Error taxonomy shared by the compiler, devices and runtime.
#pragma once

#include <stdexcept>
#include <string>

namespace hetgpu {

enum class ErrorKind : uint8_t {
    Validation,  // malformed module or bad launch arguments
    Lowering,    // kernel cannot be lowered for the requested device/strategy
    Launch,      // launch geometry incompatible with the device
    Fault,       // runtime execution fault (OOB access, divergence deadlock)
    OOM,         // device or virtual allocation exhausted
    Protocol,    // malformed request to the runtime (bad handle, bad order)
    State,       // snapshot/restore/migration problem
};

const char* to_string(ErrorKind k);

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace hetgpu

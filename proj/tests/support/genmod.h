// Randomized inputs for the property tests: well-formed modules (every
// generated module passes validation by construction) and structurally
// consistent state blobs.
#pragma once

#include <cstdint>

#include "hetgpu/ir.h"
#include "hetgpu/snapshot.h"

namespace testsup {

// Deterministic in `seed`. The result is finalized (module_id stamped);
// generation fails loudly if validation rejects it.
hetgpu::ir::Module random_module(uint64_t seed);

// Deterministic random blob with internally consistent dump shapes.
hetgpu::snapshot::StateBlob random_blob(uint64_t seed);

}  // namespace testsup

#pragma once
// Parameter checkpoints: binary file mapping parameter names to shape plus
// flat f64 data, versioned with a magic header.

#include "tkgr/optim.hpp"

#include <stdexcept>
#include <string>

namespace tkgr::num {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const ParamStore& params);

// `trainable` marks every loaded tensor as a parameter; raw matrices such as
// frozen encoder output stay constant when false.
ParamStore load_checkpoint(const std::string& path, bool trainable = true);

}  // namespace tkgr::num

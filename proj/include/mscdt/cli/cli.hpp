#pragma once

#include <ostream>

namespace mscdt::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point behind the `mscdt` binary. Returns 0 on success, 1 on a
/// runtime failure and 2 on a usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mscdt::cli

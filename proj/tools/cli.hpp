#pragma once

#include <iosfwd>

namespace ppgstress::cli {

// Exit codes: 0 success, 2 usage or validation failure, 3 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

// Environment variable naming the default data root.
inline constexpr const char* kDataEnv = "PPGSTRESS_DATA";

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ppgstress::cli

#pragma once

#include <ostream>

namespace attrcenter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitFailure = 2;

/// Entry point behind the attrcenter binary. Seeds come from --seed, then
/// ATTRCENTER_SEED, then the config file.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace attrcenter::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mdcpc {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Environment variable naming the directory where runs and manifests live.
inline constexpr const char* kRunRootEnv = "MDCPC_RUN_ROOT";

// args excludes the program name. Returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_file(const std::string& path);

}  // namespace mdcpc

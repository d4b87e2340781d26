#pragma once

namespace sinkcache {

// Full command-line surface. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace sinkcache

#ifndef QUOTESTORM_CLI_HPP
#define QUOTESTORM_CLI_HPP

namespace quotestorm {

// Entry point of the `quotestorm` tool. Returns the process exit code:
// 0 success, 1 internal error, 2 usage or configuration error.
int run_cli(int argc, char** argv);

}  // namespace quotestorm

#endif  // QUOTESTORM_CLI_HPP

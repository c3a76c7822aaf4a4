#ifndef MTDL_CLI_HPP_
#define MTDL_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace mtdl::cli {

// Entry point behind the mtdl binary. `args` excludes the program name.
// Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 check failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtdl::cli

#endif  // MTDL_CLI_HPP_

#pragma once

#include <string>
#include <vector>

namespace taclr {

/// Runs one `taclr` command. argv[0] is the program name.
/// Returns 0 on success, 1 on a usage error, 2 on a data error.
int dispatch(const std::vector<std::string>& argv);

}  // namespace taclr

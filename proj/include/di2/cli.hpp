// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 usage, configuration,
// contract, staging or format errors, 2 internal errors.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace di2 {

// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace di2

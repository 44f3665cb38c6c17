#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace t2m {

// Runs one CLI command. Exit codes: 0 success, 1 input error, 2 numeric
// failure, 3 property-check failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace t2m

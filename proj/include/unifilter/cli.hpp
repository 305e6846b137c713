#pragma once

// The `unifilter` command line: one binary, one subcommand per stage.

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace unifilter::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes: 0 ok, 2 usage, 3 data / io, 4 numeric, 1 anything else.
// Errors are written to `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Path of the manifest written next to a primary output.
std::string manifest_path(const std::string& primary_output);

}  // namespace unifilter::cli

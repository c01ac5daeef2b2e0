#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flex::cli {

// Runs one `flex` subcommand; returns the process exit status.
int dispatch(int argc, char** argv);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flex::cli

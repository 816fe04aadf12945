#pragma once

namespace wermlab::cli {

// Entry point behind the wermlab binary. Subcommands: gen, fit, sweep,
// bernstein, rates, lowerbound, report. Returns 0 on success, 1 on
// config/usage validation failure, 2 on runtime failure.
int run(int argc, const char* const* argv);

}  // namespace wermlab::cli

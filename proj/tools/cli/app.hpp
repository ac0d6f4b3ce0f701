#pragma once

namespace bbsmc::cli {

// Parses argv and dispatches run/tune/plot/selftest. Returns the process
// exit code: 0 success, 2 configuration error, 3 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace bbsmc::cli

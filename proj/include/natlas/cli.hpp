#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace natlas {

/// Entry point of the `natlas` command. args excludes the program name.
/// Returns the process exit code; help goes to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Thread count: the flag if given, else NATLAS_THREADS, else the number of
/// hardware threads. strict forces 1.
int resolve_threads(int flag, bool strict);

}  // namespace natlas

#pragma once

#include <string>
#include <vector>

namespace prefixguard {

// Dispatches one toolkit command (synth, convert, split, fit-encoder,
// train, eval, extract-dfa, audit, ceiling, mpe, probe). Returns the
// process exit code: 0 success, 1 internal error, 2 input/validation error.
int run_cli(const std::vector<std::string>& args);

}  // namespace prefixguard

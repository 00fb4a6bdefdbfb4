#pragma once

#include <iosfwd>

namespace deepcoder::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Entry point for `deepcoder <synth|train|eval|infer|export-latents> ...`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deepcoder::cli

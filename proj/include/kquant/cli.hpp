// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kquant {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitModelState = 3,
  kExitNumeric = 4,
};

/// Entry point of the kquant command line. args excludes the program name.
/// Verbs: train, infer, export-thresholds, analyze, quantize.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kquant

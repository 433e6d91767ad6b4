/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <string>
#include <vector>

namespace tess {

inline constexpr const char* kToolVersion = "1.0.0";
// Version of the JSON documents the tool writes (tessellation outputs,
// evaluation reports, run manifests).
inline constexpr int kOutputFormatVersion = 1;

// Command-line entry point, also driven directly by tests. Exit codes:
//   0  success
//   2  usage errors: unknown flags/subcommands, bad config keys, invalid
//      parameter values
//   3  data errors: malformed files, failed ingestion, missing inputs
//   4  numeric failures, undefined results, resource limits
// Errors are written to stderr as single-line JSON.
int run(int argc, const char* const* argv);

// Convenience overload; args exclude the program name.
int run(const std::vector<std::string>& args);

}  // namespace tess

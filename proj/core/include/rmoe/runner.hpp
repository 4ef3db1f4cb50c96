#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rmoe/config.hpp"

namespace rmoe {

// Known subcommand names, in help order.
const std::vector<std::string>& subcommands();

// <out>/<confighash>-s<seed>, suffixed -r2, -r3, ... if taken. The directory
// is created; previous runs are never reused or touched.
std::string make_run_dir(const RunConfig& cfg);

// "<fnv1a64-of-bytes> <filename>" per line, sorted by filename, for every
// regular file in dir except manifest.txt itself.
std::string manifest_text(const std::string& dir);
void write_manifest(const std::string& dir);

// Executes one subcommand: creates the run directory, writes the artifacts
// and the manifest, prints "key value" result lines (run_dir first) to `out`.
// Throws on any failure; callers turn that into a nonzero exit.
void run_subcommand(const std::string& name, const RunConfig& cfg,
                    std::ostream& out);

}  // namespace rmoe

#pragma once

#include <string>

#include "rmoe/moe.hpp"

namespace rmoe {

// Models are stored as versioned plain text. Parameter values are written as
// C hexfloats ("%a"), so save -> load reproduces every double bit for bit on
// any platform with IEEE binary64.

enum class ModelKind { kMoe, kDual };

void save_model(const std::string& path, const MoEModel& m);
void save_model(const std::string& path, const DualModel& dm);

// Reads just the header; lets callers dispatch without loading the body.
ModelKind peek_model_kind(const std::string& path);

// Both loaders reject files of the other kind and any format version this
// build does not understand.
MoEModel load_moe(const std::string& path);
DualModel load_dual(const std::string& path);

}  // namespace rmoe

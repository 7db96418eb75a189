#pragma once

namespace ccb {

inline constexpr const char* kToolVersion = "0.1.0";

// Bumped whenever an on-disk format changes incompatibly.
inline constexpr int kSchemaVersion = 1;

}  // namespace ccb

#pragma once

#ifndef PADPROBE_VERSION
#define PADPROBE_VERSION "0.1.0"
#endif

namespace padprobe {

inline constexpr const char* kVersion = PADPROBE_VERSION;

}  // namespace padprobe

#pragma once

namespace mfsv {

inline constexpr const char* version = "0.1.0";

}  // namespace mfsv

#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace hvfcast::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

inline constexpr const char* kToolVersion = "0.1.0";

// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace hvfcast::cli

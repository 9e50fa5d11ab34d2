#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace safeguard::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kError = 1;
inline constexpr int kNoCertificate = 2;

// args excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace safeguard::cli

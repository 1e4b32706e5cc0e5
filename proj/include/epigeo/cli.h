#pragma once

#include <iosfwd>

namespace epigeo {

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;  // some videos flagged
constexpr int kExitUsage = 64;

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace epigeo

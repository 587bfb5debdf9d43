#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "xnet/probability.hpp"

namespace xnet {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

// Entry point of the `xnet` tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Probability file: "XNETPROB 1\n<K> <H> <W>\n" followed by K*H*W
// little-endian float32 values, class-major.
void save_probabilities(const ProbabilityMap& map, std::size_t n, const std::filesystem::path& path);
ProbabilityMap load_probabilities(const std::filesystem::path& path);

// Colour rendering of a label mask (binary PPM).
void save_mask_render(const Mask& mask, const std::filesystem::path& path);

}  // namespace xnet

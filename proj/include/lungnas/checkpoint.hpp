#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lungnas/binary_io.hpp"
#include "lungnas/network.hpp"

namespace lungnas {

/// Binary checkpoint layout (all integers little-endian):
///
///   "NLW1"                  4-byte tag
///   u32 + bytes             spec text, e.g. [[4,4],[4,8],[8,8]]
///   u32 + bytes             NetConfig::to_text()
///   u64                     config digest (FNV-1a of the config text)
///   u64                     seed the network was built with
///   u64 + f64 * n           trainable weights, construction order
///   u64 + f64 * n           batch-norm running mean/var, layer order
inline constexpr char kCheckpointTag[4] = {'N', 'L', 'W', '1'};

struct CheckpointHeader {
    std::string spec_text;
    std::string config_text;
    std::uint64_t digest = 0;
    std::uint64_t seed = 0;
};

std::vector<double> flatten_weights(Network& network);
std::vector<double> flatten_buffers(Network& network);

std::vector<char> encode_checkpoint(Network& network);
Network decode_checkpoint(std::vector<char> bytes, const std::string& what = "checkpoint");

void save_checkpoint(Network& network, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace lungnas

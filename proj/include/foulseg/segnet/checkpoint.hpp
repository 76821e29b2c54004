#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/segnet/network.hpp"

namespace foulseg::nn {

inline constexpr int kCheckpointVersion = 1;

/// Decoded checkpoint: "FSCK" magic, u32 version, u64 header length, JSON header
/// (version, network config, tensor index, metadata), then little-endian float64 blobs.
struct CheckpointData {
  int version = 0;
  NetworkConfig config;
  nlohmann::json metadata;
  std::map<std::string, std::vector<double>> tensors;
  std::map<std::string, std::vector<int>> shapes;
};

template <typename T>
void save_checkpoint(SegNet<T>& net, const std::filesystem::path& path, const nlohmann::json& metadata = {});

CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies every tensor whose name starts with `prefix` into the network; shapes must match.
/// Returns the number of tensors copied.
template <typename T>
int load_parameters(SegNet<T>& net, const CheckpointData& data, const std::string& prefix = "");

template <typename T>
std::unique_ptr<SegNet<T>> load_network(const std::filesystem::path& path);

/// Initializes a network and, when config.pretrained is set, loads encoder weights from config.pretrained_path.
template <typename T>
std::unique_ptr<SegNet<T>> build_network(const NetworkConfig& config);

}  // namespace foulseg::nn

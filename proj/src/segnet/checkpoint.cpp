#include "foulseg/segnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "foulseg/error.hpp"

namespace foulseg::nn {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

template <typename U>
void write_pod(std::ofstream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::ifstream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  return value;
}

}  // namespace

template <typename T>
void save_checkpoint(SegNet<T>& net, const std::filesystem::path& path, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format"] = "foulseg-checkpoint";
  header["version"] = kCheckpointVersion;
  header["network"] = net.config().to_json();
  header["metadata"] = metadata.is_null() ? nlohmann::json::object() : metadata;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto params = net.parameters();
  for (const auto* p : params) {
    index.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}, {"count", p->size()}});
    offset += p->size();
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params)
    for (T v : p->value) write_pod<double>(out, static_cast<double>(v));
  if (!out) throw Error(ErrorCode::IoFailure, "checkpoint write failed: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::IoFailure, "not a checkpoint: " + path.string());
  CheckpointData data;
  data.version = static_cast<int>(read_pod<std::uint32_t>(in));
  const auto length = read_pod<std::uint64_t>(in);
  if (!in || data.version < 1 || data.version > kCheckpointVersion || length > (1ULL << 30)) {
    throw Error(ErrorCode::IoFailure, "unsupported checkpoint header: " + path.string());
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  const auto header = nlohmann::json::parse(text);
  if (!header.contains("version")) throw Error(ErrorCode::IoFailure, "checkpoint header lacks a version");
  data.config = NetworkConfig::from_json(header.at("network"));
  data.metadata = header.value("metadata", nlohmann::json::object());
  const auto blob_start = in.tellg();
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto count = t.at("count").get<std::uint64_t>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    std::vector<double> values(count);
    in.seekg(blob_start + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error(ErrorCode::IoFailure, "truncated checkpoint: " + path.string());
    data.shapes[name] = t.at("shape").get<std::vector<int>>();
    data.tensors[name] = std::move(values);
  }
  return data;
}

template <typename T>
int load_parameters(SegNet<T>& net, const CheckpointData& data, const std::string& prefix) {
  int copied = 0;
  for (auto* p : net.parameters()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    auto it = data.tensors.find(p->name);
    if (it == data.tensors.end()) throw Error(ErrorCode::InvalidConfig, "checkpoint lacks tensor " + p->name);
    if (it->second.size() != p->size() || data.shapes.at(p->name) != p->shape) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + p->name + " has a different shape in the checkpoint");
    }
    for (std::size_t i = 0; i < p->size(); ++i) p->value[i] = static_cast<T>(it->second[i]);
    ++copied;
  }
  return copied;
}

template <typename T>
std::unique_ptr<SegNet<T>> load_network(const std::filesystem::path& path) {
  const auto data = read_checkpoint(path);
  auto config = data.config;
  config.pretrained = false;
  auto net = std::make_unique<SegNet<T>>(config);
  load_parameters(*net, data);
  return net;
}

template <typename T>
std::unique_ptr<SegNet<T>> build_network(const NetworkConfig& config) {
  auto net = std::make_unique<SegNet<T>>(config);
  if (config.pretrained) {
    const auto data = read_checkpoint(config.pretrained_path);
    if (load_parameters(*net, data, "encoder.") == 0) {
      throw Error(ErrorCode::InvalidConfig, "pretrained file has no encoder tensors: " + config.pretrained_path);
    }
  }
  return net;
}

template void save_checkpoint<float>(SegNet<float>&, const std::filesystem::path&, const nlohmann::json&);
template void save_checkpoint<double>(SegNet<double>&, const std::filesystem::path&, const nlohmann::json&);
template int load_parameters<float>(SegNet<float>&, const CheckpointData&, const std::string&);
template int load_parameters<double>(SegNet<double>&, const CheckpointData&, const std::string&);
template std::unique_ptr<SegNet<float>> load_network<float>(const std::filesystem::path&);
template std::unique_ptr<SegNet<double>> load_network<double>(const std::filesystem::path&);
template std::unique_ptr<SegNet<float>> build_network<float>(const NetworkConfig&);
template std::unique_ptr<SegNet<double>> build_network<double>(const NetworkConfig&);

}  // namespace foulseg::nn

#include "ragg/checkpoint.hpp"

#include <cstdint>
#include <cstring>

#include "ragg/error.hpp"
#include "ragg/tensor_io.hpp"

namespace ragg {

namespace {
constexpr char kMagic[8] = {'R', 'A', 'G', 'G', 'C', 'K', 'P', 'T'};
}

void write_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json header,
                      const nn::ParamStore& params) {
  header["version"] = kCheckpointVersion;
  header["kind"] = kind;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : params.all()) table.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}});
  header["params"] = table;
  const std::string h = header.dump();
  const std::vector<float> blob = params.flatten();
  std::string bytes(kMagic, 8);
  const std::uint64_t len = h.size();
  bytes.append(reinterpret_cast<const char*>(&len), 8);
  bytes += h;
  bytes.append(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
  write_file_atomic(path, bytes);
}

CheckpointData read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingCheckpoint, "missing checkpoint: " + path.string());
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(ErrorKind::kMissingCheckpoint, "not a checkpoint file: " + path.string());
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (16 + len > bytes.size()) fail(ErrorKind::kMissingCheckpoint, "truncated checkpoint header: " + path.string());
  CheckpointData d;
  d.header = nlohmann::json::parse(bytes.substr(16, len));
  if (!d.header.contains("version")) fail(ErrorKind::kMissingCheckpoint, "checkpoint without version: " + path.string());
  if (d.header.at("version").get<int>() != kCheckpointVersion) {
    fail(ErrorKind::kMissingCheckpoint, "unsupported checkpoint version in " + path.string());
  }
  if (d.header.value("kind", std::string()) != expected_kind) {
    fail(ErrorKind::kMissingCheckpoint, "checkpoint kind mismatch in " + path.string() + ", expected " + expected_kind);
  }
  const std::size_t nbytes = bytes.size() - 16 - len;
  if (nbytes % sizeof(float) != 0) fail(ErrorKind::kMissingCheckpoint, "corrupt checkpoint blob: " + path.string());
  d.blob.resize(nbytes / sizeof(float));
  std::memcpy(d.blob.data(), bytes.data() + 16 + len, nbytes);
  return d;
}

void load_params(const CheckpointData& ckpt, nn::ParamStore& params) {
  const auto& table = ckpt.header.at("params");
  require(table.size() == params.all().size(), "checkpoint parameter count mismatch");
  std::size_t i = 0;
  for (const auto& p : params.all()) {
    const auto& e = table.at(i++);
    require(e.at("name").get<std::string>() == p.name, "checkpoint parameter name mismatch: " + p.name);
    require(e.at("shape").at(0).get<long>() == p.value.rows() && e.at("shape").at(1).get<long>() == p.value.cols(),
            "checkpoint parameter shape mismatch: " + p.name);
  }
  params.unflatten(ckpt.blob);
}

}  // namespace ragg

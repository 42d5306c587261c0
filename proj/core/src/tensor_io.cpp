#include "ragg/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ragg/error.hpp"

namespace ragg {

namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::kIo, "cannot open for writing: " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorKind::kIo, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_f32(const std::filesystem::path& path, const RowMatrix& m) {
  std::string bytes;
  bytes.reserve(8 + static_cast<std::size_t>(m.size()) * 4);
  put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
  put_u32(bytes, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    char buf[4];
    std::memcpy(buf, &f, 4);
    bytes.append(buf, 4);
  }
  write_file_atomic(path, bytes);
}

RowMatrix read_f32(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) fail(ErrorKind::kIo, "truncated tensor header: " + path.string());
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::memcpy(&rows, bytes.data(), 4);
  std::memcpy(&cols, bytes.data() + 4, 4);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != 8 + n * 4) fail(ErrorKind::kIo, "tensor size mismatch: " + path.string());
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data() + 8, n * 4);
  RowMatrix m(rows, cols);
  for (std::size_t i = 0; i < n; ++i) m.data()[i] = static_cast<double>(data[i]);
  return m;
}

}  // namespace ragg

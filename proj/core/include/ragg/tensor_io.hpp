#pragma once

#include <Eigen/Dense>

#include <filesystem>

namespace ragg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Raw tensor file: two little-endian uint32 (rows, cols) followed by
// rows*cols little-endian float32 values in row-major order.
void write_f32(const std::filesystem::path& path, const RowMatrix& m);
RowMatrix read_f32(const std::filesystem::path& path);

// Writes to a sibling temporary and renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace ragg

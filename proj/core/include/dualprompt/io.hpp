#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace dualprompt::io {

// Little-endian scalar primitives. All on-disk formats in this project are
// little-endian regardless of host order.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u8(std::ostream& os, std::uint8_t v);
void write_f32(std::ostream& os, float v);
std::uint32_t read_u32(std::istream& is, const std::string& what);
std::uint8_t read_u8(std::istream& is, const std::string& what);
float read_f32(std::istream& is, const std::string& what);

// Feature-map / matrix container file: magic "DCFM", u32 H, W, D, then
// H*W*D float32 values in row-major (H, W, D) order. Plain matrices are
// stored with H = rows, W = 1, D = cols.
void write_dcfm(const std::filesystem::path& path, std::uint32_t h,
                std::uint32_t w, std::uint32_t d,
                const std::vector<float>& values);
struct DcfmFile {
  std::uint32_t h = 0, w = 0, d = 0;
  std::vector<float> values;
};
DcfmFile read_dcfm(const std::filesystem::path& path);

void write_matrix_dcfm(const std::filesystem::path& path,
                       const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_dcfm(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);

// SHA-256 hex digest.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace dualprompt::io

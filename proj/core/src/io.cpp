#include "dualprompt/io.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dualprompt::io {

static_assert(std::endian::native == std::endian::little,
              "big-endian hosts need byte swaps in io.cpp");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u8(std::ostream& os, std::uint8_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f32(std::ostream& os, float v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error("truncated file while reading " + what);
  return v;
}

std::uint8_t read_u8(std::istream& is, const std::string& what) {
  std::uint8_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error("truncated file while reading " + what);
  return v;
}

float read_f32(std::istream& is, const std::string& what) {
  float v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error("truncated file while reading " + what);
  return v;
}

void write_dcfm(const std::filesystem::path& path, std::uint32_t h,
                std::uint32_t w, std::uint32_t d,
                const std::vector<float>& values) {
  if (values.size() != std::size_t(h) * w * d)
    throw std::invalid_argument("dcfm value count does not match H*W*D");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write("DCFM", 4);
  write_u32(os, h);
  write_u32(os, w);
  write_u32(os, d);
  os.write(reinterpret_cast<const char*>(values.data()),
           std::streamsize(values.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

DcfmFile read_dcfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "DCFM", 4) != 0)
    throw std::runtime_error("bad magic in feature file: " + path.string());
  DcfmFile f;
  f.h = read_u32(is, "H");
  f.w = read_u32(is, "W");
  f.d = read_u32(is, "D");
  const std::size_t n = std::size_t(f.h) * f.w * f.d;
  f.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(f.values.data()),
               std::streamsize(n * sizeof(float))))
    throw std::runtime_error("truncated feature payload: " + path.string());
  return f;
}

void write_matrix_dcfm(const std::filesystem::path& path,
                       const Eigen::MatrixXd& m) {
  std::vector<float> vals(std::size_t(m.rows()) * std::size_t(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      vals[std::size_t(r) * std::size_t(m.cols()) + std::size_t(c)] =
          float(m(r, c));
  write_dcfm(path, std::uint32_t(m.rows()), 1, std::uint32_t(m.cols()), vals);
}

Eigen::MatrixXd read_matrix_dcfm(const std::filesystem::path& path) {
  const DcfmFile f = read_dcfm(path);
  if (f.w != 1)
    throw std::runtime_error("expected W=1 matrix layout in " + path.string());
  Eigen::MatrixXd m(f.h, f.d);
  for (std::uint32_t r = 0; r < f.h; ++r)
    for (std::uint32_t c = 0; c < f.d; ++c)
      m(r, c) = double(f.values[std::size_t(r) * f.d + c]);
  return m;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(content.data(), std::streamsize(content.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(static_cast<const unsigned char*>(data), len, md);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : md) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(s.data(), s.size());
}

std::string sha256_file_hex(const std::filesystem::path& path) {
  return sha256_hex(read_text_file(path));
}

}  // namespace dualprompt::io

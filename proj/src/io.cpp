#include "duomo/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace duomo::io {

void ByteWriter::u32(uint32_t v) { raw(&v, 4); }
void ByteWriter::u64(uint64_t v) { raw(&v, 8); }
void ByteWriter::f64(double v) { raw(&v, 8); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteWriter::raw(const void* data, size_t n) {
  const auto* p = static_cast<const uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + n);
}

void ByteWriter::matrix(const Eigen::MatrixXd& m) {
  u32(static_cast<uint32_t>(m.rows()));
  u32(static_cast<uint32_t>(m.cols()));
  raw(m.data(), sizeof(double) * static_cast<size_t>(m.size()));
}

void ByteWriter::matrixf(const Eigen::MatrixXf& m) {
  u32(static_cast<uint32_t>(m.rows()));
  u32(static_cast<uint32_t>(m.cols()));
  raw(m.data(), sizeof(float) * static_cast<size_t>(m.size()));
}

void ByteReader::raw(void* out, size_t n) {
  if (pos_ + n > bytes_.size()) {
    throw std::runtime_error("truncated stream: need " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_));
  }
  std::memcpy(out, bytes_.data() + pos_, n);
  pos_ += n;
}

uint8_t ByteReader::u8() {
  uint8_t v;
  raw(&v, 1);
  return v;
}
uint32_t ByteReader::u32() {
  uint32_t v;
  raw(&v, 4);
  return v;
}
uint64_t ByteReader::u64() {
  uint64_t v;
  raw(&v, 8);
  return v;
}
double ByteReader::f64() {
  double v;
  raw(&v, 8);
  return v;
}

std::string ByteReader::str() {
  const uint32_t n = u32();
  if (n > remaining()) throw std::runtime_error("truncated stream: bad string");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

Eigen::MatrixXd ByteReader::matrix() {
  const uint32_t rows = u32();
  const uint32_t cols = u32();
  const size_t need = sizeof(double) * size_t(rows) * size_t(cols);
  if (need > remaining()) throw std::runtime_error("truncated stream: matrix");
  Eigen::MatrixXd m(rows, cols);
  raw(m.data(), need);
  return m;
}

Eigen::MatrixXf ByteReader::matrixf() {
  const uint32_t rows = u32();
  const uint32_t cols = u32();
  const size_t need = sizeof(float) * size_t(rows) * size_t(cols);
  if (need > remaining()) throw std::runtime_error("truncated stream: matrix");
  Eigen::MatrixXf m(rows, cols);
  raw(m.data(), need);
  return m;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

uint64_t hash_bytes(const void* data, size_t n, uint64_t seed) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t hash_matrix(const Eigen::MatrixXd& m, uint64_t seed) {
  return hash_bytes(m.data(), sizeof(double) * static_cast<size_t>(m.size()),
                    seed);
}

}  // namespace duomo::io

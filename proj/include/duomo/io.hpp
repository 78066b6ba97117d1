#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

// Little binary plumbing shared by the dataset and checkpoint formats:
// bounds-checked byte streams, file helpers, and a content hash.
namespace duomo::io {

class ByteWriter {
 public:
  void u8(uint8_t v) { bytes_.push_back(v); }
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void raw(const void* data, size_t n);
  void matrix(const Eigen::MatrixXd& m);
  void matrixf(const Eigen::MatrixXf& m);

  const std::vector<uint8_t>& bytes() const { return bytes_; }
  std::vector<uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
};

// Throws std::runtime_error("truncated ...") past the end.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}
  explicit ByteReader(std::vector<uint8_t>&&) = delete;  // would dangle

  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  double f64();
  std::string str();
  void raw(void* out, size_t n);
  Eigen::MatrixXd matrix();
  Eigen::MatrixXf matrixf();
  bool done() const { return pos_ == bytes_.size(); }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

// FNV-1a.
uint64_t hash_bytes(const void* data, size_t n, uint64_t seed = 14695981039346656037ull);
uint64_t hash_matrix(const Eigen::MatrixXd& m, uint64_t seed = 14695981039346656037ull);

}  // namespace duomo::io

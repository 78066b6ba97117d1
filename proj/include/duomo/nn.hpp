#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

// Minimal reverse-mode autodiff over float matrices. A graph is rebuilt per
// forward pass; parameters are persistent leaf nodes owned by a ParamStore.
namespace duomo::nn {

using Mat = Eigen::MatrixXf;

struct Node {
  Mat value;
  Mat grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into parents' grads.
  std::function<void(Node&)> backprop;
  size_t extra_bytes = 0;  // op-private caches, for memory accounting

  void accumulate(const Mat& g) {
    if (grad.size() == 0) {
      grad = Mat::Zero(value.rows(), value.cols());
    }
    grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Mat& val() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  std::shared_ptr<Node> node() const { return node_; }
  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }

 private:
  std::shared_ptr<Node> node_;
};

Var leaf(Mat value, bool requires_grad);
Var constant(Mat value);

// Reverse pass from a scalar (1x1) loss, seeding with 1.
void backward(const Var& loss);
// Reverse pass seeding `root` with an externally computed gradient.
void backward_with(const Var& root, const Mat& seed);
// Total bytes of values + op caches reachable from `root`.
size_t graph_bytes(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var hadamard(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
// a * M for a constant matrix M (no gradient into M).
Var matmul_const(const Var& a, const Mat& m);
// Broadcast-add a 1xD row to every row of a TxD matrix.
Var add_rowvec(const Var& a, const Var& row);
// Per-column affine with constant coefficients: out = a .* scale + shift.
Var affine_cols(const Var& a, const Eigen::RowVectorXf& scale_row,
                const Eigen::RowVectorXf& shift_row);
Var cmul_const(const Var& a, const Mat& mask);
Var relu(const Var& a);
Var gelu(const Var& a);
Var layer_norm(const Var& a, const Var& gamma, const Var& beta,
               float eps = 1e-5f);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
// Row-wise prefix sum (cumulative over time).
Var cumsum_rows(const Var& a);
Var sum(const Var& a);
// Masked mean-absolute-error: sum(mask .* |a - target|) / denom.
Var l1_loss(const Var& a, const Mat& target, const Mat& mask, float denom);
Var mse_loss(const Var& a, const Mat& target);

// Multi-head self-attention with rotary position encoding over the time
// index and a banded attention mask of +-window_radius frames. q, k, v are
// T x width with `heads` contiguous head blocks. Memory is linear in T.
Var rope_windowed_attention(const Var& q, const Var& k, const Var& v,
                            int heads, int window_radius, float rope_base);

struct Param {
  std::string name;
  std::shared_ptr<Node> node;
  Mat m1, m2;  // Adam moments
};

class ParamStore {
 public:
  // Gaussian init with the given std (0 => zeros).
  Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
             float init_std, std::mt19937_64& rng);
  Var create_ones(const std::string& name, Eigen::Index rows,
                  Eigen::Index cols);

  Var get(const std::string& name) const;
  bool has(const std::string& name) const;
  void zero_grads();
  size_t count() const { return params_.size(); }
  int64_t scalar_count() const;
  const std::vector<std::shared_ptr<Param>>& params() const { return params_; }

  uint64_t content_hash() const;  // FNV-1a over parameter bytes, in order

  // Named-tensor (de)serialization; load requires identical names/shapes.
  std::vector<uint8_t> serialize() const;
  void deserialize(const std::vector<uint8_t>& bytes);

 private:
  std::vector<std::shared_ptr<Param>> params_;
  std::map<std::string, size_t> index_;
};

struct AdamW {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  int64_t step = 0;

  void update(ParamStore& store, float lr_scale = 1.0f);
};

// Sinusoidal embedding of an integer step into `dim` features.
Eigen::RowVectorXf sinusoidal_embedding(double position, int dim);

}  // namespace duomo::nn

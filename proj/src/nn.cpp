#include "duomo/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace duomo::nn {

namespace {

std::shared_ptr<Node> make_node(Mat value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents.reserve(parents.size());
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.node()->requires_grad;
  }
  return n;
}

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace

Var leaf(Mat value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(n);
}

Var constant(Mat value) { return leaf(std::move(value), false); }

void backward_with(const Var& root, const Mat& seed) {
  if (seed.rows() != root.rows() || seed.cols() != root.cols()) {
    throw std::invalid_argument("backward_with: seed shape mismatch");
  }
  root.node()->accumulate(seed);
  auto order = topo_order(root.node().get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->requires_grad && n->grad.size() != 0) {
      n->backprop(*n);
    }
  }
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  backward_with(loss, Mat::Ones(1, 1));
}

size_t graph_bytes(const Var& root) {
  size_t bytes = 0;
  for (Node* n : topo_order(root.node().get())) {
    bytes += sizeof(float) * static_cast<size_t>(n->value.size());
    bytes += n->extra_bytes;
  }
  return bytes;
}

Var add(const Var& a, const Var& b) {
  auto n = make_node(a.val() + b.val(), {a, b});
  n->backprop = [a = a.node(), b = b.node()](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  };
  return Var(n);
}

Var sub(const Var& a, const Var& b) {
  auto n = make_node(a.val() - b.val(), {a, b});
  n->backprop = [a = a.node(), b = b.node()](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(-self.grad);
  };
  return Var(n);
}

Var scale(const Var& a, float s) {
  auto n = make_node(a.val() * s, {a});
  n->backprop = [a = a.node(), s](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad * s);
  };
  return Var(n);
}

Var hadamard(const Var& a, const Var& b) {
  auto n = make_node(a.val().cwiseProduct(b.val()), {a, b});
  n->backprop = [a = a.node(), b = b.node()](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.cwiseProduct(b->value));
    if (b->requires_grad) b->accumulate(self.grad.cwiseProduct(a->value));
  };
  return Var(n);
}

Var matmul(const Var& a, const Var& b) {
  auto n = make_node(a.val() * b.val(), {a, b});
  n->backprop = [a = a.node(), b = b.node()](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate(a->value.transpose() * self.grad);
  };
  return Var(n);
}

Var matmul_const(const Var& a, const Mat& m) {
  auto n = make_node(a.val() * m, {a});
  auto mt = std::make_shared<Mat>(m.transpose());
  n->extra_bytes = sizeof(float) * static_cast<size_t>(m.size());
  n->backprop = [a = a.node(), mt](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad * (*mt));
  };
  return Var(n);
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch");
  }
  Mat v = a.val();
  v.rowwise() += Eigen::RowVectorXf(row.val());
  auto n = make_node(std::move(v), {a, row});
  n->backprop = [a = a.node(), r = row.node()](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (r->requires_grad) r->accumulate(self.grad.colwise().sum());
  };
  return Var(n);
}

Var affine_cols(const Var& a, const Eigen::RowVectorXf& scale_row,
                const Eigen::RowVectorXf& shift_row) {
  Mat v = a.val().array().rowwise() * scale_row.array();
  v.rowwise() += shift_row;
  auto n = make_node(std::move(v), {a});
  auto sc = std::make_shared<Eigen::RowVectorXf>(scale_row);
  n->backprop = [a = a.node(), sc](Node& self) {
    if (a->requires_grad) {
      a->accumulate(self.grad.array().rowwise() * sc->array());
    }
  };
  return Var(n);
}

Var cmul_const(const Var& a, const Mat& mask) {
  auto n = make_node(a.val().cwiseProduct(mask), {a});
  auto m = std::make_shared<Mat>(mask);
  n->extra_bytes = sizeof(float) * static_cast<size_t>(mask.size());
  n->backprop = [a = a.node(), m](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.cwiseProduct(*m));
  };
  return Var(n);
}

Var relu(const Var& a) {
  auto n = make_node(a.val().cwiseMax(0.0f), {a});
  n->backprop = [a = a.node()](Node& self) {
    if (a->requires_grad) {
      a->accumulate(
          self.grad.cwiseProduct((a->value.array() > 0.0f).cast<float>().matrix()));
    }
  };
  return Var(n);
}

Var gelu(const Var& a) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  const auto x = a.val().array();
  const auto inner = (kC * (x + 0.044715f * x.cube())).tanh();
  Mat v = (0.5f * x * (1.0f + inner)).matrix();
  auto n = make_node(std::move(v), {a});
  n->backprop = [a = a.node(), kC](Node& self) {
    if (!a->requires_grad) return;
    const auto x = a->value.array();
    const auto u = kC * (x + 0.044715f * x.cube());
    const auto t = u.tanh();
    const auto du = kC * (1.0f + 3.0f * 0.044715f * x.square());
    const auto d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t.square()) * du;
    a->accumulate(self.grad.cwiseProduct(d.matrix()));
  };
  return Var(n);
}

Var layer_norm(const Var& a, const Var& gamma, const Var& beta, float eps) {
  const Eigen::Index d = a.cols();
  Mat xhat(a.rows(), d);
  Eigen::VectorXf inv_std(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const float mu = a.val().row(i).mean();
    const float var = (a.val().row(i).array() - mu).square().mean();
    const float is = 1.0f / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = (a.val().row(i).array() - mu) * is;
  }
  Mat v = xhat.array().rowwise() * gamma.val().row(0).array();
  v.rowwise() += Eigen::RowVectorXf(beta.val().row(0));
  auto n = make_node(std::move(v), {a, gamma, beta});
  auto cache = std::make_shared<std::pair<Mat, Eigen::VectorXf>>(
      std::move(xhat), std::move(inv_std));
  n->extra_bytes =
      sizeof(float) * static_cast<size_t>(cache->first.size() + a.rows());
  n->backprop = [a = a.node(), g = gamma.node(), b = beta.node(),
                 cache](Node& self) {
    const Mat& xhat = cache->first;
    const Eigen::VectorXf& inv_std = cache->second;
    if (g->requires_grad) {
      g->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    }
    if (b->requires_grad) b->accumulate(self.grad.colwise().sum());
    if (a->requires_grad) {
      const Eigen::Index d = xhat.cols();
      Mat gx = self.grad.array().rowwise() * g->value.row(0).array();
      Mat da(xhat.rows(), d);
      for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
        const float m1 = gx.row(i).mean();
        const float m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
        da.row(i) =
            ((gx.row(i).array() - m1) - xhat.row(i).array() * m2) * inv_std(i);
      }
      a->accumulate(da);
    }
  };
  return Var(n);
}

Var concat_cols(const std::vector<Var>& parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.cols();
  Mat v(parts[0].rows(), total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.val();
    off += p.cols();
  }
  auto n = make_node(std::move(v), parts);
  n->backprop = [](Node& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      const Eigen::Index w = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(off, w));
      off += w;
    }
  };
  return Var(n);
}

Var concat_rows(const std::vector<Var>& parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rows();
  Mat v(total, parts[0].cols());
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.val();
    off += p.rows();
  }
  auto n = make_node(std::move(v), parts);
  n->backprop = [](Node& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      const Eigen::Index h = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(off, h));
      off += h;
    }
  };
  return Var(n);
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n_cols) {
  auto n = make_node(a.val().middleCols(start, n_cols), {a});
  n->backprop = [a = a.node(), start, n_cols](Node& self) {
    if (!a->requires_grad) return;
    Mat g = Mat::Zero(a->value.rows(), a->value.cols());
    g.middleCols(start, n_cols) = self.grad;
    a->accumulate(g);
  };
  return Var(n);
}

Var cumsum_rows(const Var& a) {
  Mat v = a.val();
  for (Eigen::Index i = 1; i < v.rows(); ++i) {
    v.row(i) += v.row(i - 1);
  }
  auto n = make_node(std::move(v), {a});
  n->backprop = [a = a.node()](Node& self) {
    if (!a->requires_grad) return;
    Mat g = self.grad;
    for (Eigen::Index i = g.rows() - 2; i >= 0; --i) {
      g.row(i) += g.row(i + 1);
    }
    a->accumulate(g);
  };
  return Var(n);
}

Var sum(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  auto n = make_node(std::move(v), {a});
  n->backprop = [a = a.node()](Node& self) {
    if (a->requires_grad) {
      a->accumulate(Mat::Constant(a->value.rows(), a->value.cols(),
                                  self.grad(0, 0)));
    }
  };
  return Var(n);
}

Var l1_loss(const Var& a, const Mat& target, const Mat& mask, float denom) {
  const Mat diff = (a.val() - target).cwiseProduct(mask);
  Mat v(1, 1);
  v(0, 0) = diff.cwiseAbs().sum() / denom;
  auto n = make_node(std::move(v), {a});
  auto sign = std::make_shared<Mat>(
      diff.array().sign().matrix().cwiseProduct(mask) / denom);
  n->extra_bytes = sizeof(float) * static_cast<size_t>(sign->size());
  n->backprop = [a = a.node(), sign](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad(0, 0) * (*sign));
  };
  return Var(n);
}

Var mse_loss(const Var& a, const Mat& target) {
  const Mat diff = a.val() - target;
  Mat v(1, 1);
  v(0, 0) = diff.squaredNorm() / static_cast<float>(diff.size());
  auto n = make_node(std::move(v), {a});
  auto d = std::make_shared<Mat>(2.0f * diff / static_cast<float>(diff.size()));
  n->backprop = [a = a.node(), d](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad(0, 0) * (*d));
  };
  return Var(n);
}

namespace {

struct AttnCache {
  Mat qr, kr;                   // rotated queries / keys, T x width
  std::vector<Mat> probs;       // per head: T x (2*radius+1), padded
  Mat cos_tab, sin_tab;         // T x dh/2
};

void rope_rotate(const Mat& cos_tab, const Mat& sin_tab, int heads, int dh,
                 const Mat& in, Mat& out, bool inverse) {
  const Eigen::Index t_count = in.rows();
  out.resize(t_count, in.cols());
  const float flip = inverse ? -1.0f : 1.0f;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (int h = 0; h < heads; ++h) {
      const int base = h * dh;
      for (int i = 0; i < dh / 2; ++i) {
        const float c = cos_tab(t, i);
        const float s = flip * sin_tab(t, i);
        const float x0 = in(t, base + 2 * i);
        const float x1 = in(t, base + 2 * i + 1);
        out(t, base + 2 * i) = c * x0 - s * x1;
        out(t, base + 2 * i + 1) = s * x0 + c * x1;
      }
    }
  }
}

}  // namespace

Var rope_windowed_attention(const Var& q, const Var& k, const Var& v,
                            int heads, int window_radius, float rope_base) {
  const Eigen::Index t_count = q.rows();
  const Eigen::Index width = q.cols();
  if (width % heads != 0 || (width / heads) % 2 != 0) {
    throw std::invalid_argument(
        "rope_windowed_attention: width must be divisible by 2*heads");
  }
  if (window_radius < 1) {
    throw std::invalid_argument("rope_windowed_attention: radius must be >= 1");
  }
  const int dh = static_cast<int>(width) / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

  auto cache = std::make_shared<AttnCache>();
  cache->cos_tab.resize(t_count, dh / 2);
  cache->sin_tab.resize(t_count, dh / 2);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (int i = 0; i < dh / 2; ++i) {
      const double theta =
          static_cast<double>(t) *
          std::pow(static_cast<double>(rope_base), -2.0 * i / dh);
      cache->cos_tab(t, i) = static_cast<float>(std::cos(theta));
      cache->sin_tab(t, i) = static_cast<float>(std::sin(theta));
    }
  }
  rope_rotate(cache->cos_tab, cache->sin_tab, heads, dh, q.val(), cache->qr,
              false);
  rope_rotate(cache->cos_tab, cache->sin_tab, heads, dh, k.val(), cache->kr,
              false);

  const int wspan = 2 * window_radius + 1;
  Mat out = Mat::Zero(t_count, width);
  cache->probs.assign(static_cast<size_t>(heads),
                      Mat::Zero(t_count, wspan));
  Eigen::VectorXf scores(wspan);
  for (int h = 0; h < heads; ++h) {
    const int base = h * dh;
    auto& probs = cache->probs[static_cast<size_t>(h)];
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, t - window_radius);
      const Eigen::Index hi =
          std::min<Eigen::Index>(t_count - 1, t + window_radius);
      const int n = static_cast<int>(hi - lo + 1);
      for (int s = 0; s < n; ++s) {
        scores(s) = cache->qr.row(t).segment(base, dh).dot(
                        cache->kr.row(lo + s).segment(base, dh)) *
                    inv_sqrt;
      }
      const float mx = scores.head(n).maxCoeff();
      float z = 0.0f;
      for (int s = 0; s < n; ++s) {
        scores(s) = std::exp(scores(s) - mx);
        z += scores(s);
      }
      for (int s = 0; s < n; ++s) {
        const float p = scores(s) / z;
        probs(t, s) = p;
        out.row(t).segment(base, dh) +=
            p * v.val().row(lo + s).segment(base, dh);
      }
    }
  }

  auto n = make_node(std::move(out), {q, k, v});
  cache->qr.conservativeResize(cache->qr.rows(), cache->qr.cols());
  n->extra_bytes =
      sizeof(float) *
      (static_cast<size_t>(cache->qr.size() + cache->kr.size() +
                           cache->cos_tab.size() + cache->sin_tab.size()) +
       static_cast<size_t>(heads) * static_cast<size_t>(t_count) *
           static_cast<size_t>(wspan));
  n->backprop = [qn = q.node(), kn = k.node(), vn = v.node(), cache, heads, dh,
                 window_radius, inv_sqrt](Node& self) {
    const Eigen::Index t_count = self.value.rows();
    const Eigen::Index width = self.value.cols();
    Mat dqr = Mat::Zero(t_count, width);
    Mat dkr = Mat::Zero(t_count, width);
    Mat dv = Mat::Zero(t_count, width);
    const int wspan = 2 * window_radius + 1;
    Eigen::VectorXf dp(wspan), ds(wspan);
    for (int h = 0; h < heads; ++h) {
      const int base = h * dh;
      const auto& probs = cache->probs[static_cast<size_t>(h)];
      for (Eigen::Index t = 0; t < t_count; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - window_radius);
        const Eigen::Index hi =
            std::min<Eigen::Index>(t_count - 1, t + window_radius);
        const int n_win = static_cast<int>(hi - lo + 1);
        const auto gout = self.grad.row(t).segment(base, dh);
        float dot = 0.0f;
        for (int s = 0; s < n_win; ++s) {
          dv.row(lo + s).segment(base, dh) += probs(t, s) * gout;
          dp(s) = gout.dot(vn->value.row(lo + s).segment(base, dh));
          dot += probs(t, s) * dp(s);
        }
        for (int s = 0; s < n_win; ++s) {
          ds(s) = probs(t, s) * (dp(s) - dot);
          dqr.row(t).segment(base, dh) +=
              ds(s) * inv_sqrt * cache->kr.row(lo + s).segment(base, dh);
          dkr.row(lo + s).segment(base, dh) +=
              ds(s) * inv_sqrt * cache->qr.row(t).segment(base, dh);
        }
      }
    }
    Mat dq, dk;
    rope_rotate(cache->cos_tab, cache->sin_tab, heads, dh, dqr, dq, true);
    rope_rotate(cache->cos_tab, cache->sin_tab, heads, dh, dkr, dk, true);
    if (qn->requires_grad) qn->accumulate(dq);
    if (kn->requires_grad) kn->accumulate(dk);
    if (vn->requires_grad) vn->accumulate(dv);
  };
  return Var(n);
}

Var ParamStore::create(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols, float init_std,
                       std::mt19937_64& rng) {
  if (index_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  }
  Mat v(rows, cols);
  if (init_std > 0.0f) {
    std::normal_distribution<float> gauss(0.0f, init_std);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        v(i, j) = gauss(rng);
      }
    }
  } else {
    v.setZero();
  }
  auto p = std::make_shared<Param>();
  p->name = name;
  p->node = std::make_shared<Node>();
  p->node->value = std::move(v);
  p->node->requires_grad = true;
  p->m1 = Mat::Zero(rows, cols);
  p->m2 = Mat::Zero(rows, cols);
  index_[name] = params_.size();
  params_.push_back(p);
  return Var(p->node);
}

Var ParamStore::create_ones(const std::string& name, Eigen::Index rows,
                            Eigen::Index cols) {
  std::mt19937_64 dummy(0);
  Var v = create(name, rows, cols, 0.0f, dummy);
  v.node()->value.setOnes();
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  }
  return Var(params_[it->second]->node);
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) {
    p->node->grad.resize(0, 0);
  }
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->node->value.size();
  return n;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const uint8_t* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= data[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params_) {
    mix(reinterpret_cast<const uint8_t*>(p->name.data()), p->name.size());
    mix(reinterpret_cast<const uint8_t*>(p->node->value.data()),
        sizeof(float) * static_cast<size_t>(p->node->value.size()));
  }
  return h;
}

std::vector<uint8_t> ParamStore::serialize() const {
  std::vector<uint8_t> out;
  auto push = [&out](const void* data, size_t n) {
    const auto* b = static_cast<const uint8_t*>(data);
    out.insert(out.end(), b, b + n);
  };
  const uint64_t count = params_.size();
  push(&count, sizeof(count));
  for (const auto& p : params_) {
    const uint32_t name_len = static_cast<uint32_t>(p->name.size());
    push(&name_len, sizeof(name_len));
    push(p->name.data(), p->name.size());
    const int64_t rows = p->node->value.rows();
    const int64_t cols = p->node->value.cols();
    push(&rows, sizeof(rows));
    push(&cols, sizeof(cols));
    push(p->node->value.data(),
         sizeof(float) * static_cast<size_t>(p->node->value.size()));
  }
  return out;
}

void ParamStore::deserialize(const std::vector<uint8_t>& bytes) {
  size_t off = 0;
  auto pull = [&](void* data, size_t n) {
    if (off + n > bytes.size()) {
      throw std::runtime_error("ParamStore: truncated parameter blob");
    }
    std::memcpy(data, bytes.data() + off, n);
    off += n;
  };
  uint64_t count = 0;
  pull(&count, sizeof(count));
  if (count != params_.size()) {
    throw std::runtime_error("ParamStore: parameter count mismatch");
  }
  for (auto& p : params_) {
    uint32_t name_len = 0;
    pull(&name_len, sizeof(name_len));
    std::string name(name_len, '\0');
    pull(name.data(), name_len);
    int64_t rows = 0, cols = 0;
    pull(&rows, sizeof(rows));
    pull(&cols, sizeof(cols));
    if (name != p->name || rows != p->node->value.rows() ||
        cols != p->node->value.cols()) {
      throw std::runtime_error("ParamStore: parameter layout mismatch at " +
                               p->name);
    }
    pull(p->node->value.data(),
         sizeof(float) * static_cast<size_t>(p->node->value.size()));
  }
}

void AdamW::update(ParamStore& store, float lr_scale) {
  ++step;
  const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
  const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
  const float step_lr = lr * lr_scale;
  for (auto& p : store.params()) {
    if (p->node->grad.size() == 0) continue;
    auto& g = p->node->grad;
    p->m1 = beta1 * p->m1 + (1.0f - beta1) * g;
    p->m2 = beta2 * p->m2.array() + (1.0f - beta2) * g.array().square();
    const Mat mhat = p->m1 / bc1;
    const Mat vhat = p->m2 / bc2;
    if (weight_decay > 0.0f) {
      p->node->value -= step_lr * weight_decay * p->node->value;
    }
    p->node->value.array() -=
        step_lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
}

Eigen::RowVectorXf sinusoidal_embedding(double position, int dim) {
  Eigen::RowVectorXf out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    out(i) = static_cast<float>(std::sin(position * freq));
    out(half + i) = static_cast<float>(std::cos(position * freq));
  }
  if (dim % 2 == 1) out(dim - 1) = 0.0f;
  return out;
}

}  // namespace duomo::nn

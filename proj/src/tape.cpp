#include "stablecde/tape.hpp"

#include <algorithm>
#include <cmath>

namespace stablecde::ad {

namespace {

bool scalar_like(const Array& a) { return a.size() == 1; }

void check_same_or_scalar(const Array& a, const Array& b, const char* what) {
  if (!a.same_shape(b) && !scalar_like(a) && !scalar_like(b))
    throw DimensionError(std::string(what) +
                         ": shapes must match or one side must be scalar");
}

}  // namespace

int Tape::push_value(Op op, const Array& v, bool requires_grad) {
  Node& n = fresh(op, -1, -1, -1);
  n.val = v;
  n.requires_grad = requires_grad;
  return static_cast<int>(size_ - 1);
}

Node& Tape::fresh(Op op, int a, int b, int c) {
  if (size_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[size_++];
  n.op = op;
  n.a = a;
  n.b = b;
  n.c = c;
  n.aux[0] = n.aux[1] = n.aux[2] = n.aux[3] = 0.0;
  n.has_grad = false;
  n.extra.clear();
  n.weights.clear();
  auto rg = [&](int id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad;
  };
  n.requires_grad = rg(a) || rg(b) || rg(c);
  return n;
}

int Tape::matmul(int a, int b) {
  const Array& A = value(a);
  const Array& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions disagree");
  Node& n = fresh(Op::kMatMul, a, b, -1);
  const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
  n.val.assign_zeros({m, p});
  const double* pa = A.data();
  const double* pb = B.data();
  double* pc = n.val.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * p;
      double* crow = pc + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return static_cast<int>(size_ - 1);
}

int Tape::matvec(int w, int x) {
  const Array& W = value(w);
  const Array& X = value(x);
  if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.rows())
    throw DimensionError("matvec: inner dimensions disagree");
  Node& n = fresh(Op::kMatVec, w, x, -1);
  const std::size_t m = W.rows(), k = W.cols();
  n.val.assign_zeros({m});
  const double* pw = W.data();
  const double* px = X.data();
  double* py = n.val.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = pw + i * k;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * px[j];
    py[i] = acc;
  }
  return static_cast<int>(size_ - 1);
}

int Tape::add(int a, int b) {
  const Array& A = value(a);
  const Array& B = value(b);
  check_same_or_scalar(A, B, "add");
  Node& n = fresh(Op::kAdd, a, b, -1);
  const Array& big = A.size() >= B.size() ? A : B;
  n.val.assign_zeros(big.shape());
  const std::size_t sz = big.size();
  for (std::size_t i = 0; i < sz; ++i)
    n.val[i] = A[scalar_like(A) ? 0 : i] + B[scalar_like(B) ? 0 : i];
  return static_cast<int>(size_ - 1);
}

int Tape::sub(int a, int b) {
  const Array& A = value(a);
  const Array& B = value(b);
  check_same_or_scalar(A, B, "sub");
  Node& n = fresh(Op::kSub, a, b, -1);
  const Array& big = A.size() >= B.size() ? A : B;
  n.val.assign_zeros(big.shape());
  const std::size_t sz = big.size();
  for (std::size_t i = 0; i < sz; ++i)
    n.val[i] = A[scalar_like(A) ? 0 : i] - B[scalar_like(B) ? 0 : i];
  return static_cast<int>(size_ - 1);
}

int Tape::mul(int a, int b) {
  const Array& A = value(a);
  const Array& B = value(b);
  check_same_or_scalar(A, B, "mul");
  Node& n = fresh(Op::kMul, a, b, -1);
  const Array& big = A.size() >= B.size() ? A : B;
  n.val.assign_zeros(big.shape());
  const std::size_t sz = big.size();
  for (std::size_t i = 0; i < sz; ++i)
    n.val[i] = A[scalar_like(A) ? 0 : i] * B[scalar_like(B) ? 0 : i];
  return static_cast<int>(size_ - 1);
}

int Tape::scale(int a, double k) {
  const Array& A = value(a);
  Node& n = fresh(Op::kScale, a, -1, -1);
  n.aux[0] = k;
  n.val.assign_zeros(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) n.val[i] = k * A[i];
  return static_cast<int>(size_ - 1);
}

int Tape::relu(int a) {
  const Array& A = value(a);
  Node& n = fresh(Op::kRelu, a, -1, -1);
  n.val.assign_zeros(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) n.val[i] = A[i] > 0.0 ? A[i] : 0.0;
  return static_cast<int>(size_ - 1);
}

int Tape::tanh_(int a) {
  const Array& A = value(a);
  Node& n = fresh(Op::kTanh, a, -1, -1);
  n.val.assign_zeros(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) n.val[i] = std::tanh(A[i]);
  return static_cast<int>(size_ - 1);
}

int Tape::abs_(int a) {
  const Array& A = value(a);
  Node& n = fresh(Op::kAbs, a, -1, -1);
  n.val.assign_zeros(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) n.val[i] = std::fabs(A[i]);
  return static_cast<int>(size_ - 1);
}

int Tape::layer_norm(int x, int gain, int bias, double eps) {
  const Array& X = value(x);
  const Array& G = value(gain);
  const Array& B = value(bias);
  if (X.rank() != 1 || !X.same_shape(G) || !X.same_shape(B))
    throw DimensionError("layer_norm: x, gain, bias must be equal-length vectors");
  const std::size_t nlen = X.size();
  if (nlen < 2) throw DegenerateInputError("layer_norm: needs length >= 2");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  Node& n = fresh(Op::kLayerNorm, x, gain, bias);
  double mean = 0.0;
  for (std::size_t i = 0; i < nlen; ++i) mean += X[i];
  mean /= static_cast<double>(nlen);
  double var = 0.0;
  for (std::size_t i = 0; i < nlen; ++i) {
    const double d = X[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(nlen);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  n.aux[0] = mean;
  n.aux[1] = inv_std;
  n.val.assign_zeros(X.shape());
  for (std::size_t i = 0; i < nlen; ++i)
    n.val[i] = (X[i] - mean) * inv_std * G[i] + B[i];
  return static_cast<int>(size_ - 1);
}

double pearson_value(const Array& x, const Array& y) {
  if (x.rank() != 1 || !x.same_shape(y))
    throw DimensionError("pearson: equal-length vectors required");
  const std::size_t n = x.size();
  if (n < 2) throw DegenerateInputError("pearson: needs length >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ax = x[i] - mx, ay = y[i] - my;
    sxx += ax * ax;
    syy += ay * ay;
    sxy += ax * ay;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedCorrelationError("pearson: zero-variance input");
  return sxy / std::sqrt(sxx * syy);
}

int Tape::pearson(int x, int y) {
  const Array& X = value(x);
  const Array& Y = value(y);
  if (X.rank() != 1 || !X.same_shape(Y))
    throw DimensionError("pearson: equal-length vectors required");
  const std::size_t nlen = X.size();
  if (nlen < 2) throw DegenerateInputError("pearson: needs length >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < nlen; ++i) {
    mx += X[i];
    my += Y[i];
  }
  mx /= static_cast<double>(nlen);
  my /= static_cast<double>(nlen);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < nlen; ++i) {
    const double ax = X[i] - mx, ay = Y[i] - my;
    sxx += ax * ax;
    syy += ay * ay;
    sxy += ax * ay;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedCorrelationError("pearson: zero-variance input");
  Node& n = fresh(Op::kPearson, x, y, -1);
  n.aux[0] = mx;
  n.aux[1] = my;
  n.aux[2] = sxx;
  n.aux[3] = syy;
  n.val = Array::scalar(sxy / std::sqrt(sxx * syy));
  return static_cast<int>(size_ - 1);
}

int Tape::sum(int a) {
  const Array& A = value(a);
  Node& n = fresh(Op::kSum, a, -1, -1);
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i];
  n.val = Array::scalar(acc);
  return static_cast<int>(size_ - 1);
}

int Tape::mean(int a) {
  const Array& A = value(a);
  if (A.size() == 0) throw DegenerateInputError("mean: empty input");
  Node& n = fresh(Op::kMean, a, -1, -1);
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i];
  n.val = Array::scalar(acc / static_cast<double>(A.size()));
  return static_cast<int>(size_ - 1);
}

int Tape::reshape(int a, std::vector<std::size_t> shape) {
  const Array& A = value(a);
  if (Array::count(shape) != A.size())
    throw DimensionError("reshape: element count mismatch");
  Node& n = fresh(Op::kReshape, a, -1, -1);
  n.val = A;
  n.val.set_shape(std::move(shape));
  return static_cast<int>(size_ - 1);
}

int Tape::slice_col(int m, std::size_t col) {
  const Array& M = value(m);
  if (M.rank() != 2 || col >= M.cols())
    throw DimensionError("slice_col: column out of range");
  Node& n = fresh(Op::kSliceCol, m, -1, -1);
  n.aux[0] = static_cast<double>(col);
  const std::size_t r = M.rows(), c = M.cols();
  n.val.assign_zeros({r});
  for (std::size_t i = 0; i < r; ++i) n.val[i] = M.data()[i * c + col];
  return static_cast<int>(size_ - 1);
}

int Tape::lincomb(std::span<const int> nodes, std::span<const double> w,
                  double offset) {
  if (nodes.size() != w.size())
    throw DimensionError("lincomb: node/weight count mismatch");
  Node& n = fresh(Op::kLinComb, -1, -1, -1);
  n.extra.assign(nodes.begin(), nodes.end());
  n.weights.assign(w.begin(), w.end());
  n.aux[0] = offset;
  double acc = offset;
  bool rg = false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& p = nodes_[static_cast<std::size_t>(n.extra[i])];
    acc += n.weights[i] * p.val.scalar_value();
    rg = rg || p.requires_grad;
  }
  n.requires_grad = rg;
  n.val = Array::scalar(acc);
  return static_cast<int>(size_ - 1);
}

int Tape::softmax_cross_entropy(int logits, int target) {
  const Array& L = value(logits);
  if (L.rank() != 1) throw DimensionError("softmax_cross_entropy: vector logits required");
  if (target < 0 || static_cast<std::size_t>(target) >= L.size())
    throw DimensionError("softmax_cross_entropy: target out of range");
  Node& n = fresh(Op::kSoftmaxCrossEntropy, logits, -1, -1);
  n.aux[0] = static_cast<double>(target);
  double m = L[0];
  for (std::size_t i = 1; i < L.size(); ++i) m = std::max(m, L[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < L.size(); ++i) z += std::exp(L[i] - m);
  n.val = Array::scalar(m + std::log(z) - L[static_cast<std::size_t>(target)]);
  return static_cast<int>(size_ - 1);
}

int Tape::pick(int v, std::size_t index) {
  const Array& V = value(v);
  if (V.rank() != 1 || index >= V.size())
    throw DimensionError("pick: index out of range");
  Node& n = fresh(Op::kPick, v, -1, -1);
  n.aux[0] = static_cast<double>(index);
  n.val = Array::scalar(V[index]);
  return static_cast<int>(size_ - 1);
}

const Array& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad)
    throw ContractError("grad: node received no gradient (not reachable from root?)");
  return n.grad;
}

Array& Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad.assign_zeros(n.val.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(int root) {
  if (backward_ran_)
    throw ContractError("backward: tape already differentiated; reset first");
  const Node& r = nodes_[static_cast<std::size_t>(root)];
  if (!r.val.is_scalar() && r.val.size() != 1)
    throw ContractError("backward: root must be scalar");
  ensure_grad(root).fill(1.0);
  backward_ran_ = true;
  run_backward();
}

void Tape::backward_seeded(std::span<const std::pair<int, const Array*>> seeds) {
  if (backward_ran_)
    throw ContractError("backward: tape already differentiated; reset first");
  for (const auto& [id, cot] : seeds) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.val.same_shape(*cot))
      throw DimensionError("backward_seeded: cotangent shape mismatch");
    Array& g = ensure_grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*cot)[i];
  }
  backward_ran_ = true;
  run_backward();
}

void Tape::run_backward() {
  for (std::size_t i = size_; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.op == Op::kLeaf || n.op == Op::kConstant) continue;
    backprop_node(i);
  }
}

void Tape::backprop_node(std::size_t i) {
  Node& n = nodes_[i];
  const Array& g = n.grad;
  auto parent_rg = [&](int id) {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  };
  switch (n.op) {
    case Op::kMatMul: {
      const Array& A = value(n.a);
      const Array& B = value(n.b);
      const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        // dA += g * B^T
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = g.data() + r * p;
            const double* brow = B.data() + kk * p;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            da.data()[r * k + kk] += acc;
          }
      }
      if (parent_rg(n.b)) {
        Array& db = ensure_grad(n.b);
        // dB += A^T * g
        for (std::size_t r = 0; r < m; ++r) {
          const double* arow = A.data() + r * k;
          const double* grow = g.data() + r * p;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* drow = db.data() + kk * p;
            for (std::size_t j = 0; j < p; ++j) drow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case Op::kMatVec: {
      const Array& W = value(n.a);
      const Array& X = value(n.b);
      const std::size_t m = W.rows(), k = W.cols();
      if (parent_rg(n.a)) {
        Array& dw = ensure_grad(n.a);
        for (std::size_t r = 0; r < m; ++r) {
          const double gv = g[r];
          double* drow = dw.data() + r * k;
          const double* px = X.data();
          for (std::size_t j = 0; j < k; ++j) drow[j] += gv * px[j];
        }
      }
      if (parent_rg(n.b)) {
        Array& dx = ensure_grad(n.b);
        for (std::size_t r = 0; r < m; ++r) {
          const double gv = g[r];
          const double* wrow = W.data() + r * k;
          double* pdx = dx.data();
          for (std::size_t j = 0; j < k; ++j) pdx[j] += gv * wrow[j];
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sgn = n.op == Op::kSub ? -1.0 : 1.0;
      const Array& A = value(n.a);
      const Array& B = value(n.b);
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        if (scalar_like(A) && !scalar_like(B)) {
          double acc = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) acc += g[j];
          da[0] += acc;
        } else {
          for (std::size_t j = 0; j < g.size(); ++j) da[j] += g[j];
        }
      }
      if (parent_rg(n.b)) {
        Array& db = ensure_grad(n.b);
        if (scalar_like(B) && !scalar_like(A)) {
          double acc = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) acc += g[j];
          db[0] += sgn * acc;
        } else {
          for (std::size_t j = 0; j < g.size(); ++j) db[j] += sgn * g[j];
        }
      }
      break;
    }
    case Op::kMul: {
      const Array& A = value(n.a);
      const Array& B = value(n.b);
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        if (scalar_like(A) && !scalar_like(B)) {
          double acc = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * B[j];
          da[0] += acc;
        } else {
          for (std::size_t j = 0; j < g.size(); ++j)
            da[j] += g[j] * B[scalar_like(B) ? 0 : j];
        }
      }
      if (parent_rg(n.b)) {
        Array& db = ensure_grad(n.b);
        if (scalar_like(B) && !scalar_like(A)) {
          double acc = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * A[j];
          db[0] += acc;
        } else {
          for (std::size_t j = 0; j < g.size(); ++j)
            db[j] += g[j] * A[scalar_like(A) ? 0 : j];
        }
      }
      break;
    }
    case Op::kScale: {
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        const double k = n.aux[0];
        for (std::size_t j = 0; j < g.size(); ++j) da[j] += k * g[j];
      }
      break;
    }
    case Op::kRelu: {
      if (parent_rg(n.a)) {
        const Array& X = value(n.a);
        Array& da = ensure_grad(n.a);
        for (std::size_t j = 0; j < g.size(); ++j)
          if (X[j] > 0.0) da[j] += g[j];
      }
      break;
    }
    case Op::kTanh: {
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        for (std::size_t j = 0; j < g.size(); ++j)
          da[j] += g[j] * (1.0 - n.val[j] * n.val[j]);
      }
      break;
    }
    case Op::kAbs: {
      if (parent_rg(n.a)) {
        const Array& X = value(n.a);
        Array& da = ensure_grad(n.a);
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (X[j] > 0.0)
            da[j] += g[j];
          else if (X[j] < 0.0)
            da[j] -= g[j];
        }
      }
      break;
    }
    case Op::kLayerNorm: {
      const Array& X = value(n.a);
      const Array& G = value(n.b);
      const std::size_t len = X.size();
      const double mean = n.aux[0], inv_std = n.aux[1];
      // dy_hat = g .* gain; dx = inv_std*(dy_hat - mean(dy_hat) - xh*mean(dy_hat.*xh))
      double m1 = 0.0, m2 = 0.0;
      std::vector<double> dyh(len), xh(len);
      for (std::size_t j = 0; j < len; ++j) {
        xh[j] = (X[j] - mean) * inv_std;
        dyh[j] = g[j] * G[j];
        m1 += dyh[j];
        m2 += dyh[j] * xh[j];
      }
      m1 /= static_cast<double>(len);
      m2 /= static_cast<double>(len);
      if (parent_rg(n.a)) {
        Array& dx = ensure_grad(n.a);
        for (std::size_t j = 0; j < len; ++j)
          dx[j] += inv_std * (dyh[j] - m1 - xh[j] * m2);
      }
      if (parent_rg(n.b)) {
        Array& dg = ensure_grad(n.b);
        for (std::size_t j = 0; j < len; ++j) dg[j] += g[j] * xh[j];
      }
      if (parent_rg(n.c)) {
        Array& db = ensure_grad(n.c);
        for (std::size_t j = 0; j < len; ++j) db[j] += g[j];
      }
      break;
    }
    case Op::kPearson: {
      const Array& X = value(n.a);
      const Array& Y = value(n.b);
      const std::size_t len = X.size();
      const double mx = n.aux[0], my = n.aux[1], sxx = n.aux[2], syy = n.aux[3];
      const double denom = std::sqrt(sxx * syy);
      const double r = n.val.scalar_value();
      const double gv = g[0];
      if (parent_rg(n.a)) {
        Array& dx = ensure_grad(n.a);
        for (std::size_t j = 0; j < len; ++j) {
          const double ax = X[j] - mx, ay = Y[j] - my;
          dx[j] += gv * (ay / denom - r * ax / sxx);
        }
      }
      if (parent_rg(n.b)) {
        Array& dy = ensure_grad(n.b);
        for (std::size_t j = 0; j < len; ++j) {
          const double ax = X[j] - mx, ay = Y[j] - my;
          dy[j] += gv * (ax / denom - r * ay / syy);
        }
      }
      break;
    }
    case Op::kSum: {
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        const double gv = g[0];
        for (std::size_t j = 0; j < da.size(); ++j) da[j] += gv;
      }
      break;
    }
    case Op::kMean: {
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        const double gv = g[0] / static_cast<double>(da.size());
        for (std::size_t j = 0; j < da.size(); ++j) da[j] += gv;
      }
      break;
    }
    case Op::kReshape: {
      if (parent_rg(n.a)) {
        Array& da = ensure_grad(n.a);
        for (std::size_t j = 0; j < g.size(); ++j) da[j] += g[j];
      }
      break;
    }
    case Op::kSliceCol: {
      if (parent_rg(n.a)) {
        const Array& M = value(n.a);
        Array& dm = ensure_grad(n.a);
        const std::size_t c = M.cols();
        const std::size_t col = static_cast<std::size_t>(n.aux[0]);
        for (std::size_t r = 0; r < g.size(); ++r) dm.data()[r * c + col] += g[r];
      }
      break;
    }
    case Op::kLinComb: {
      const double gv = g[0];
      for (std::size_t j = 0; j < n.extra.size(); ++j) {
        const int pid = n.extra[j];
        if (!parent_rg(pid)) continue;
        ensure_grad(pid)[0] += gv * n.weights[j];
      }
      break;
    }
    case Op::kSoftmaxCrossEntropy: {
      if (parent_rg(n.a)) {
        const Array& L = value(n.a);
        Array& dl = ensure_grad(n.a);
        const std::size_t t = static_cast<std::size_t>(n.aux[0]);
        double m = L[0];
        for (std::size_t j = 1; j < L.size(); ++j) m = std::max(m, L[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < L.size(); ++j) z += std::exp(L[j] - m);
        const double gv = g[0];
        for (std::size_t j = 0; j < L.size(); ++j) {
          const double p = std::exp(L[j] - m) / z;
          dl[j] += gv * (p - (j == t ? 1.0 : 0.0));
        }
      }
      break;
    }
    case Op::kPick: {
      if (parent_rg(n.a)) {
        Array& dv = ensure_grad(n.a);
        dv[static_cast<std::size_t>(n.aux[0])] += g[0];
      }
      break;
    }
    case Op::kLeaf:
    case Op::kConstant:
      break;
  }
}

void Tape::reset_grads() {
  for (std::size_t i = 0; i < size_; ++i) nodes_[i].has_grad = false;
  backward_ran_ = false;
}

void Tape::rewind() {
  size_ = 0;
  backward_ran_ = false;
}

}  // namespace stablecde::ad

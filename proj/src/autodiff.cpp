#include "packetclip/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "packetclip/error.hpp"

namespace packetclip::ad {

namespace {
constexpr double kLnEps = 1e-12;     // floor for log arguments
constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

Mat& Tape::ensure_grad(NodeId id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty()) n.grad = Mat(n.val.rows(), n.val.cols());
  return n.grad;
}

NodeId Tape::leaf(Mat v, bool needs_grad) {
  Node n;
  n.op = Op::leaf;
  n.val = std::move(v);
  n.needs_grad = needs_grad;
  return push(std::move(n));
}

NodeId Tape::linear(NodeId x, NodeId w, NodeId b) {
  const Mat& xv = val(x);
  const Mat& wv = val(w);
  const Mat& bv = val(b);
  if (xv.cols() != wv.cols()) fail(Err::shape, "linear: input dim mismatch");
  if (bv.rows() != 1 || bv.cols() != wv.rows()) fail(Err::shape, "linear: bias dim mismatch");
  Node n;
  n.op = Op::linear;
  n.a = x;
  n.b = w;
  n.c = b;
  n.val = matmul_nt(xv, wv);
  for (int r = 0; r < n.val.rows(); ++r) {
    double* row = n.val.row(r);
    const double* bias = bv.row(0);
    for (int c = 0; c < n.val.cols(); ++c) row[c] += bias[c];
  }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (!val(a).same_shape(val(b))) fail(Err::shape, "add: shape mismatch");
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.val = val(a);
  axpy(n.val, 1.0, val(b));
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (!val(a).same_shape(val(b))) fail(Err::shape, "sub: shape mismatch");
  Node n;
  n.op = Op::sub;
  n.a = a;
  n.b = b;
  n.val = val(a);
  axpy(n.val, -1.0, val(b));
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (!val(a).same_shape(val(b))) fail(Err::shape, "mul: shape mismatch");
  Node n;
  n.op = Op::mul;
  n.a = a;
  n.b = b;
  n.val = val(a);
  const double* bp = val(b).data();
  double* vp = n.val.data();
  for (size_t i = 0; i < n.val.size(); ++i) vp[i] *= bp[i];
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = a;
  n.s = s;
  n.val = val(a);
  for (auto& v : n.val.values()) v *= s;
  return push(std::move(n));
}

NodeId Tape::tanh_(NodeId a) {
  Node n;
  n.op = Op::tanh_;
  n.a = a;
  n.val = val(a);
  for (auto& v : n.val.values()) v = std::tanh(v);
  return push(std::move(n));
}

NodeId Tape::gelu(NodeId a) {
  Node n;
  n.op = Op::gelu;
  n.a = a;
  n.val = val(a);
  for (auto& v : n.val.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(n));
}

NodeId Tape::sum_list(const std::vector<NodeId>& xs) {
  if (xs.empty()) fail(Err::state, "sum_list: empty input");
  Node n;
  n.op = Op::sum_list;
  n.list = xs;
  n.val = val(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) {
    if (!val(xs[i]).same_shape(n.val)) fail(Err::shape, "sum_list: shape mismatch");
    axpy(n.val, 1.0, val(xs[i]));
  }
  return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
  const Mat& xv = val(x);
  const int d = xv.cols();
  if (val(gamma).cols() != d || val(beta).cols() != d)
    fail(Err::shape, "layer_norm: parameter dim mismatch");
  Node n;
  n.op = Op::layer_norm;
  n.a = x;
  n.b = gamma;
  n.c = beta;
  n.val = Mat(xv.rows(), d);
  n.saved = Mat(xv.rows(), d);   // xhat
  n.saved2 = Mat(xv.rows(), 1);  // inv std
  const double* g = val(gamma).row(0);
  const double* be = val(beta).row(0);
  for (int r = 0; r < xv.rows(); ++r) {
    const double* xr = xv.row(r);
    double mean = 0;
    for (int c = 0; c < d; ++c) mean += xr[c];
    mean /= d;
    double var = 0;
    for (int c = 0; c < d; ++c) {
      double dx = xr[c] - mean;
      var += dx * dx;
    }
    var /= d;
    double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    n.saved2.at(r, 0) = inv_std;
    double* hr = n.saved.row(r);
    double* yr = n.val.row(r);
    for (int c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * inv_std;
      yr[c] = hr[c] * g[c] + be[c];
    }
  }
  return push(std::move(n));
}

NodeId Tape::window_attention(NodeId q, NodeId k, NodeId v, int n_windows, int win_len,
                              int heads) {
  const Mat& qv = val(q);
  const Mat& kv = val(k);
  const Mat& vv = val(v);
  if (!qv.same_shape(kv) || !qv.same_shape(vv)) fail(Err::shape, "attention: q/k/v shape mismatch");
  if (qv.rows() != n_windows * win_len) fail(Err::shape, "attention: row count mismatch");
  if (qv.cols() % heads != 0) fail(Err::shape, "attention: width not divisible by heads");
  const int dk = qv.cols() / heads;
  const double scale = 1.0 / std::sqrt(double(dk));

  Node n;
  n.op = Op::attention;
  n.a = q;
  n.b = k;
  n.c = v;
  n.i0 = n_windows;
  n.i1 = win_len;
  n.i2 = heads;
  n.val = Mat(qv.rows(), qv.cols());
  n.saved = Mat(n_windows * heads * win_len, win_len);  // softmax probabilities

  for (int w = 0; w < n_windows; ++w) {
    const int row0 = w * win_len;
    for (int h = 0; h < heads; ++h) {
      const int col0 = h * dk;
      double* probs0 = n.saved.row((w * heads + h) * win_len);
      // scores + softmax, one query row at a time
      for (int i = 0; i < win_len; ++i) {
        const double* qrow = qv.row(row0 + i) + col0;
        double* prow = probs0 + size_t(i) * win_len;
        double max_s = -1e300;
        for (int j = 0; j < win_len; ++j) {
          const double* krow = kv.row(row0 + j) + col0;
          double s = 0;
          for (int c = 0; c < dk; ++c) s += qrow[c] * krow[c];
          s *= scale;
          prow[j] = s;
          if (s > max_s) max_s = s;
        }
        double z = 0;
        for (int j = 0; j < win_len; ++j) {
          prow[j] = std::exp(prow[j] - max_s);
          z += prow[j];
        }
        for (int j = 0; j < win_len; ++j) prow[j] /= z;
        // output row = P_i . V
        double* orow = n.val.row(row0 + i) + col0;
        for (int j = 0; j < win_len; ++j) {
          const double p = prow[j];
          const double* vrow = vv.row(row0 + j) + col0;
          for (int c = 0; c < dk; ++c) orow[c] += p * vrow[c];
        }
      }
    }
  }
  return push(std::move(n));
}

NodeId Tape::add_position(NodeId x, NodeId pos, int win_len) {
  const Mat& xv = val(x);
  const Mat& pv = val(pos);
  if (pv.rows() != win_len || pv.cols() != xv.cols())
    fail(Err::shape, "add_position: positional table shape mismatch");
  if (xv.rows() % win_len != 0) fail(Err::shape, "add_position: rows not multiple of window");
  Node n;
  n.op = Op::add_position;
  n.a = x;
  n.b = pos;
  n.i0 = win_len;
  n.val = xv;
  for (int r = 0; r < xv.rows(); ++r) {
    const double* prow = pv.row(r % win_len);
    double* yr = n.val.row(r);
    for (int c = 0; c < xv.cols(); ++c) yr[c] += prow[c];
  }
  return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId x, std::vector<int> rows) {
  const Mat& xv = val(x);
  Node n;
  n.op = Op::gather_rows;
  n.a = x;
  n.idx = std::move(rows);
  n.val = Mat(int(n.idx.size()), xv.cols());
  for (size_t i = 0; i < n.idx.size(); ++i) {
    int r = n.idx[i];
    if (r < 0 || r >= xv.rows()) fail(Err::shape, "gather_rows: index out of range");
    std::copy(xv.row(r), xv.row(r) + xv.cols(), n.val.row(int(i)));
  }
  return push(std::move(n));
}

NodeId Tape::group_mean_rows(NodeId x, int group) {
  const Mat& xv = val(x);
  if (group < 1 || xv.rows() % group != 0) fail(Err::shape, "group_mean_rows: bad group");
  Node n;
  n.op = Op::group_mean;
  n.a = x;
  n.i0 = group;
  n.val = Mat(xv.rows() / group, xv.cols());
  for (int r = 0; r < xv.rows(); ++r) {
    double* yr = n.val.row(r / group);
    const double* xr = xv.row(r);
    for (int c = 0; c < xv.cols(); ++c) yr[c] += xr[c];
  }
  for (auto& v : n.val.values()) v /= group;
  return push(std::move(n));
}

NodeId Tape::broadcast_row(NodeId x, int nrows) {
  const Mat& xv = val(x);
  if (xv.rows() != 1) fail(Err::shape, "broadcast_row: input must be a row vector");
  Node n;
  n.op = Op::broadcast_row;
  n.a = x;
  n.val = Mat(nrows, xv.cols());
  for (int r = 0; r < nrows; ++r)
    std::copy(xv.row(0), xv.row(0) + xv.cols(), n.val.row(r));
  return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& xs) {
  if (xs.empty()) fail(Err::state, "concat_cols: empty input");
  int rows = val(xs[0]).rows();
  int cols = 0;
  for (NodeId id : xs) {
    if (val(id).rows() != rows) fail(Err::shape, "concat_cols: row mismatch");
    cols += val(id).cols();
  }
  Node n;
  n.op = Op::concat_cols;
  n.list = xs;
  n.val = Mat(rows, cols);
  int off = 0;
  for (NodeId id : xs) {
    const Mat& xv = val(id);
    for (int r = 0; r < rows; ++r)
      std::copy(xv.row(r), xv.row(r) + xv.cols(), n.val.row(r) + off);
    off += xv.cols();
  }
  return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId x) {
  Node n;
  n.op = Op::softmax_rows;
  n.a = x;
  n.val = val(x);
  for (int r = 0; r < n.val.rows(); ++r) {
    double* row = n.val.row(r);
    double max_v = -1e300;
    for (int c = 0; c < n.val.cols(); ++c) max_v = std::max(max_v, row[c]);
    double z = 0;
    for (int c = 0; c < n.val.cols(); ++c) {
      row[c] = std::exp(row[c] - max_v);
      z += row[c];
    }
    for (int c = 0; c < n.val.cols(); ++c) row[c] /= z;
  }
  return push(std::move(n));
}

NodeId Tape::nll_mean(NodeId probs, std::vector<int> labels) {
  const Mat& pv = val(probs);
  if (int(labels.size()) != pv.rows()) fail(Err::shape, "nll_mean: label count mismatch");
  Node n;
  n.op = Op::nll_mean;
  n.a = probs;
  n.idx = std::move(labels);
  double loss = 0;
  for (int r = 0; r < pv.rows(); ++r) {
    int y = n.idx[size_t(r)];
    if (y < 0 || y >= pv.cols()) fail(Err::shape, "nll_mean: label out of range");
    loss -= std::log(std::max(pv.at(r, y), kLnEps));
  }
  n.val = Mat(1, 1);
  n.val.at(0, 0) = loss / pv.rows();
  return push(std::move(n));
}

NodeId Tape::sum_all(NodeId x) {
  Node n;
  n.op = Op::sum_all;
  n.a = x;
  n.val = Mat(1, 1);
  double s = 0;
  for (double v : val(x).values()) s += v;
  n.val.at(0, 0) = s;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Tape::backprop_node(NodeId id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty()) return;  // nothing flowed into this node

  switch (n.op) {
    case Op::leaf: break;

    case Op::linear: {
      const Mat& dy = n.grad;
      Mat& dx = ensure_grad(n.a);
      const Mat& wv = val(n.b);
      // dx += dy * W
      Mat dxp = matmul(dy, wv);
      axpy(dx, 1.0, dxp);
      Mat& dw = ensure_grad(n.b);
      Mat dwp = matmul_tn(dy, val(n.a));  // (out x n)(n x in)
      axpy(dw, 1.0, dwp);
      Mat& db = ensure_grad(n.c);
      for (int r = 0; r < dy.rows(); ++r) {
        const double* dr = dy.row(r);
        double* bp = db.row(0);
        for (int c = 0; c < dy.cols(); ++c) bp[c] += dr[c];
      }
      break;
    }

    case Op::add: {
      axpy(ensure_grad(n.a), 1.0, n.grad);
      axpy(ensure_grad(n.b), 1.0, n.grad);
      break;
    }

    case Op::sub: {
      axpy(ensure_grad(n.a), 1.0, n.grad);
      axpy(ensure_grad(n.b), -1.0, n.grad);
      break;
    }

    case Op::mul: {
      Mat& da = ensure_grad(n.a);
      Mat& db = ensure_grad(n.b);
      const double* bg = val(n.b).data();
      const double* ag = val(n.a).data();
      const double* g = n.grad.data();
      double* dap = da.data();
      double* dbp = db.data();
      for (size_t i = 0; i < n.grad.size(); ++i) {
        dap[i] += g[i] * bg[i];
        dbp[i] += g[i] * ag[i];
      }
      break;
    }

    case Op::scale: {
      axpy(ensure_grad(n.a), n.s, n.grad);
      break;
    }

    case Op::tanh_: {
      Mat& dx = ensure_grad(n.a);
      const double* y = n.val.data();
      const double* g = n.grad.data();
      double* dxp = dx.data();
      for (size_t i = 0; i < n.grad.size(); ++i) dxp[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }

    case Op::gelu: {
      Mat& dx = ensure_grad(n.a);
      const double* x = val(n.a).data();
      const double* g = n.grad.data();
      double* dxp = dx.data();
      for (size_t i = 0; i < n.grad.size(); ++i) {
        double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        dxp[i] += g[i] * (cdf + x[i] * pdf);
      }
      break;
    }

    case Op::sum_list: {
      for (NodeId src : n.list) axpy(ensure_grad(src), 1.0, n.grad);
      break;
    }

    case Op::layer_norm: {
      const Mat& dy = n.grad;
      const Mat& xhat = n.saved;
      const int d = dy.cols();
      const double* g = val(n.b).row(0);
      Mat& dgamma = ensure_grad(n.b);
      Mat& dbeta = ensure_grad(n.c);
      Mat& dx = ensure_grad(n.a);
      for (int r = 0; r < dy.rows(); ++r) {
        const double* dyr = dy.row(r);
        const double* hr = xhat.row(r);
        double* dgr = dgamma.row(0);
        double* dbr = dbeta.row(0);
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < d; ++c) {
          dgr[c] += dyr[c] * hr[c];
          dbr[c] += dyr[c];
          double dxhat = dyr[c] * g[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * hr[c];
        }
        const double inv_std = n.saved2.at(r, 0);
        double* dxr = dx.row(r);
        for (int c = 0; c < d; ++c) {
          double dxhat = dyr[c] * g[c];
          dxr[c] += inv_std * (dxhat - (sum_dxhat + hr[c] * sum_dxhat_xhat) / d);
        }
      }
      break;
    }

    case Op::attention: {
      const int n_windows = n.i0, win_len = n.i1, heads = n.i2;
      const int dk = n.grad.cols() / heads;
      const double scale = 1.0 / std::sqrt(double(dk));
      const Mat& qv = val(n.a);
      const Mat& kv = val(n.b);
      const Mat& vv = val(n.c);
      Mat& dq = ensure_grad(n.a);
      Mat& dkm = ensure_grad(n.b);
      Mat& dv = ensure_grad(n.c);
      std::vector<double> dp(static_cast<size_t>(win_len));
      std::vector<double> ds(static_cast<size_t>(win_len));
      for (int w = 0; w < n_windows; ++w) {
        const int row0 = w * win_len;
        for (int h = 0; h < heads; ++h) {
          const int col0 = h * dk;
          const double* probs0 = n.saved.row((w * heads + h) * win_len);
          for (int i = 0; i < win_len; ++i) {
            const double* prow = probs0 + size_t(i) * win_len;
            const double* dor = n.grad.row(row0 + i) + col0;
            // dV += P^T dO ; dP = dO V^T
            double dot_pp = 0;
            for (int j = 0; j < win_len; ++j) {
              const double* vrow = vv.row(row0 + j) + col0;
              double s = 0;
              for (int c = 0; c < dk; ++c) s += dor[c] * vrow[c];
              dp[size_t(j)] = s;
              dot_pp += s * prow[j];
              double* dvr = dv.row(row0 + j) + col0;
              const double p = prow[j];
              for (int c = 0; c < dk; ++c) dvr[c] += p * dor[c];
            }
            // softmax backward then dQ/dK
            double* dqr = dq.row(row0 + i) + col0;
            const double* qrow = qv.row(row0 + i) + col0;
            for (int j = 0; j < win_len; ++j) {
              ds[size_t(j)] = prow[j] * (dp[size_t(j)] - dot_pp) * scale;
              const double* krow = kv.row(row0 + j) + col0;
              double* dkr = dkm.row(row0 + j) + col0;
              const double dsj = ds[size_t(j)];
              for (int c = 0; c < dk; ++c) {
                dqr[c] += dsj * krow[c];
                dkr[c] += dsj * qrow[c];
              }
            }
          }
        }
      }
      break;
    }

    case Op::add_position: {
      axpy(ensure_grad(n.a), 1.0, n.grad);
      Mat& dpos = ensure_grad(n.b);
      const int win_len = n.i0;
      for (int r = 0; r < n.grad.rows(); ++r) {
        const double* gr = n.grad.row(r);
        double* pr = dpos.row(r % win_len);
        for (int c = 0; c < n.grad.cols(); ++c) pr[c] += gr[c];
      }
      break;
    }

    case Op::gather_rows: {
      Mat& dx = ensure_grad(n.a);
      for (size_t i = 0; i < n.idx.size(); ++i) {
        const double* gr = n.grad.row(int(i));
        double* dr = dx.row(n.idx[i]);
        for (int c = 0; c < n.grad.cols(); ++c) dr[c] += gr[c];
      }
      break;
    }

    case Op::group_mean: {
      Mat& dx = ensure_grad(n.a);
      const double inv = 1.0 / n.i0;
      for (int r = 0; r < dx.rows(); ++r) {
        const double* gr = n.grad.row(r / n.i0);
        double* dr = dx.row(r);
        for (int c = 0; c < dx.cols(); ++c) dr[c] += gr[c] * inv;
      }
      break;
    }

    case Op::broadcast_row: {
      Mat& dx = ensure_grad(n.a);
      double* dr = dx.row(0);
      for (int r = 0; r < n.grad.rows(); ++r) {
        const double* gr = n.grad.row(r);
        for (int c = 0; c < n.grad.cols(); ++c) dr[c] += gr[c];
      }
      break;
    }

    case Op::concat_cols: {
      int off = 0;
      for (NodeId src : n.list) {
        Mat& dx = ensure_grad(src);
        for (int r = 0; r < dx.rows(); ++r) {
          const double* gr = n.grad.row(r) + off;
          double* dr = dx.row(r);
          for (int c = 0; c < dx.cols(); ++c) dr[c] += gr[c];
        }
        off += dx.cols();
      }
      break;
    }

    case Op::softmax_rows: {
      Mat& dx = ensure_grad(n.a);
      for (int r = 0; r < n.grad.rows(); ++r) {
        const double* y = n.val.row(r);
        const double* g = n.grad.row(r);
        double dot_gy = 0;
        for (int c = 0; c < n.grad.cols(); ++c) dot_gy += g[c] * y[c];
        double* dr = dx.row(r);
        for (int c = 0; c < n.grad.cols(); ++c) dr[c] += y[c] * (g[c] - dot_gy);
      }
      break;
    }

    case Op::nll_mean: {
      Mat& dp = ensure_grad(n.a);
      const Mat& pv = val(n.a);
      const double g = n.grad.at(0, 0) / pv.rows();
      for (int r = 0; r < pv.rows(); ++r) {
        int y = n.idx[size_t(r)];
        dp.at(r, y) -= g / std::max(pv.at(r, y), kLnEps);
      }
      break;
    }

    case Op::sum_all: {
      Mat& dx = ensure_grad(n.a);
      const double g = n.grad.at(0, 0);
      for (auto& v : dx.values()) v += g;
      break;
    }
  }
}

void Tape::backward(NodeId loss) {
  Node& top = nodes_[size_t(loss)];
  if (top.val.rows() != 1 || top.val.cols() != 1)
    fail(Err::state, "backward: loss node must be scalar");
  ensure_grad(loss).at(0, 0) = 1.0;
  for (NodeId id = loss; id >= 0; --id) backprop_node(id);
}

// ---------------------------------------------------------------------------
// Adam

void Adam::init(const std::vector<Mat*>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Mat* p : params) {
    m.emplace_back(p->rows(), p->cols());
    v.emplace_back(p->rows(), p->cols());
  }
}

void Adam::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
  if (params.size() != m.size() || grads.size() != m.size())
    fail(Err::state, "adam: parameter list changed between steps");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    if (!p.same_shape(g)) fail(Err::shape, "adam: gradient shape mismatch");
    double* mp = m[i].data();
    double* vp = v[i].data();
    double* pp = p.data();
    const double* gp = g.data();
    for (size_t j = 0; j < p.size(); ++j) {
      mp[j] = beta1 * mp[j] + (1.0 - beta1) * gp[j];
      vp[j] = beta2 * vp[j] + (1.0 - beta2) * gp[j] * gp[j];
      double mhat = mp[j] / bc1;
      double vhat = vp[j] / bc2;
      pp[j] -= lr * mhat / (std::sqrt(vhat) + epsilon);
    }
  }
}

}  // namespace packetclip::ad

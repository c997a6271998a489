#include "gdeform/tape.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>

namespace gdeform {

Var Tape::push(Mat value, bool rg) {
  nodes_.push_back(Node{std::move(value), Mat(), rg, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

const Mat& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) {
    static const Mat empty;
    return empty;
  }
  return n.grad;
}

void Tape::accum(Var target, const Mat& g) {
  Node& n = node(target);
  if (!n.rg) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::accum(Var target, Mat&& g) {
  Node& n = node(target);
  if (!n.rg) return;
  if (n.grad.size() == 0)
    n.grad = std::move(g);
  else
    n.grad += g;
}

void Tape::backward(Var loss) {
  Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw DimensionError("backward: loss must be 1x1");
  ln.grad = Mat::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this);
  }
}

Var Tape::custom(Mat value, bool rg, std::function<void(Tape&, Var)> back) {
  Var out = push(std::move(value), rg);
  if (rg) {
    int oid = out.id;
    node(out).back = [oid, fn = std::move(back)](Tape& t) {
      fn(t, Var{oid});
    };
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  const Mat& A = node(a).value;
  const Mat& B = node(b).value;
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw DimensionError("add: shape mismatch");
  bool rg = node(a).rg || node(b).rg;
  Var out = push(A + B, rg);
  if (rg) {
    int oid = out.id, aid = a.id, bid = b.id;
    node(out).back = [oid, aid, bid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      t.accum(Var{aid}, g);
      t.accum(Var{bid}, g);
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  const Mat& A = node(a).value;
  const Mat& B = node(b).value;
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw DimensionError("sub: shape mismatch");
  bool rg = node(a).rg || node(b).rg;
  Var out = push(A - B, rg);
  if (rg) {
    int oid = out.id, aid = a.id, bid = b.id;
    node(out).back = [oid, aid, bid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      t.accum(Var{aid}, g);
      t.accum(Var{bid}, -g);
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  bool rg = node(a).rg;
  Var out = push(node(a).value * s, rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid, s](Tape& t) {
      t.accum(Var{aid}, t.nodes_[oid].grad * s);
    };
  }
  return out;
}

Var Tape::add_rows(Var a, Var row) {
  const Mat& A = node(a).value;
  const Mat& R = node(row).value;
  if (R.rows() != 1 || R.cols() != A.cols())
    throw DimensionError("add_rows: row must be 1 x cols(a)");
  bool rg = node(a).rg || node(row).rg;
  Var out = push(A.rowwise() + R.row(0), rg);
  if (rg) {
    int oid = out.id, aid = a.id, rid = row.id;
    node(out).back = [oid, aid, rid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      t.accum(Var{aid}, g);
      t.accum(Var{rid}, g.colwise().sum());
    };
  }
  return out;
}

Var Tape::gelu(Var a) {
  const Mat& A = node(a).value;
  const double inv_sqrt2 = 0.7071067811865475244;
  Mat Y = (0.5 * A.array() * (1.0 + (A.array() * inv_sqrt2).erf())).matrix();
  bool rg = node(a).rg;
  Var out = push(std::move(Y), rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid, inv_sqrt2](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const auto& X = t.nodes_[aid].value.array();
      const double inv_sqrt2pi = 0.3989422804014326779;
      Mat d = (0.5 * (1.0 + (X * inv_sqrt2).erf()) +
               X * inv_sqrt2pi * (-0.5 * X.square()).exp())
                  .matrix();
      t.accum(Var{aid}, g.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  const Mat& A = node(a).value;
  const Mat& B = node(b).value;
  if (A.cols() != B.rows()) throw DimensionError("matmul: inner dims differ");
  bool rg = node(a).rg || node(b).rg;
  Var out = push(A * B, rg);
  if (rg) {
    int oid = out.id, aid = a.id, bid = b.id;
    node(out).back = [oid, aid, bid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      t.accum(Var{aid}, g * t.nodes_[bid].value.transpose());
      t.accum(Var{bid}, t.nodes_[aid].value.transpose() * g);
    };
  }
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Mat& A = node(a).value;
  const Mat& B = node(b).value;
  if (A.cols() != B.cols()) throw DimensionError("matmul_nt: inner dims differ");
  bool rg = node(a).rg || node(b).rg;
  Var out = push(A * B.transpose(), rg);
  if (rg) {
    int oid = out.id, aid = a.id, bid = b.id;
    node(out).back = [oid, aid, bid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      t.accum(Var{aid}, g * t.nodes_[bid].value);
      t.accum(Var{bid}, g.transpose() * t.nodes_[aid].value);
    };
  }
  return out;
}

Var Tape::transpose(Var a) {
  bool rg = node(a).rg;
  Var out = push(node(a).value.transpose(), rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid](Tape& t) {
      t.accum(Var{aid}, t.nodes_[oid].grad.transpose());
    };
  }
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty");
  int cols = this->cols(parts[0]);
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    if (this->cols(p) != cols) throw DimensionError("concat_rows: col mismatch");
    total += rows(p);
    rg = rg || node(p).rg;
  }
  Mat out(total, cols);
  int off = 0;
  for (Var p : parts) {
    out.middleRows(off, rows(p)) = node(p).value;
    off += rows(p);
  }
  Var o = push(std::move(out), rg);
  if (rg) {
    int oid = o.id;
    std::vector<std::pair<int, int>> spans;  // (id, row count)
    for (Var p : parts) spans.emplace_back(p.id, rows(p));
    node(o).back = [oid, spans](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      int off2 = 0;
      for (auto [pid, n] : spans) {
        t.accum(Var{pid}, Mat(g.middleRows(off2, n)));
        off2 += n;
      }
    };
  }
  return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty");
  int nrows = rows(parts[0]);
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    if (rows(p) != nrows) throw DimensionError("concat_cols: row mismatch");
    total += cols(p);
    rg = rg || node(p).rg;
  }
  Mat out(nrows, total);
  int off = 0;
  for (Var p : parts) {
    out.middleCols(off, cols(p)) = node(p).value;
    off += cols(p);
  }
  Var o = push(std::move(out), rg);
  if (rg) {
    int oid = o.id;
    std::vector<std::pair<int, int>> spans;
    for (Var p : parts) spans.emplace_back(p.id, cols(p));
    node(o).back = [oid, spans](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      int off2 = 0;
      for (auto [pid, n] : spans) {
        t.accum(Var{pid}, Mat(g.middleCols(off2, n)));
        off2 += n;
      }
    };
  }
  return o;
}

Var Tape::slice_cols(Var a, int offset, int count) {
  const Mat& A = node(a).value;
  if (offset < 0 || count < 1 || offset + count > A.cols())
    throw DimensionError("slice_cols: out of range");
  bool rg = node(a).rg;
  Var out = push(A.middleCols(offset, count), rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid, offset, count](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const Mat& A2 = t.nodes_[aid].value;
      Mat full = Mat::Zero(A2.rows(), A2.cols());
      full.middleCols(offset, count) = g;
      t.accum(Var{aid}, std::move(full));
    };
  }
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> indices) {
  const Mat& A = node(a).value;
  Mat out(static_cast<int>(indices.size()), A.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= A.rows())
      throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<int>(i)) = A.row(indices[i]);
  }
  bool rg = node(a).rg;
  Var o = push(std::move(out), rg);
  if (rg) {
    int oid = o.id, aid = a.id;
    node(o).back = [oid, aid, idx = std::move(indices)](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const Mat& A2 = t.nodes_[aid].value;
      Mat full = Mat::Zero(A2.rows(), A2.cols());
      for (size_t i = 0; i < idx.size(); ++i)
        full.row(idx[i]) += g.row(static_cast<int>(i));
      t.accum(Var{aid}, std::move(full));
    };
  }
  return o;
}

Var Tape::softmax_rows(Var a) {
  const Mat& A = node(a).value;
  Eigen::VectorXd rowmax = A.rowwise().maxCoeff();
  Mat Y = (A.colwise() - rowmax).array().exp();
  Eigen::VectorXd z = Y.rowwise().sum();
  Y.array().colwise() /= z.array();
  bool rg = node(a).rg;
  Var out = push(std::move(Y), rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const Mat& Y2 = t.nodes_[oid].value;
      Eigen::VectorXd dot = (g.array() * Y2.array()).rowwise().sum();
      Mat dx = (Y2.array() * (g.colwise() - dot).array()).matrix();
      t.accum(Var{aid}, std::move(dx));
    };
  }
  return out;
}

Var Tape::l2_normalize_rows(Var a) {
  const Mat& A = node(a).value;
  Mat Y(A.rows(), A.cols());
  std::vector<double> norms(static_cast<size_t>(A.rows()));
  for (int r = 0; r < A.rows(); ++r) {
    double n = A.row(r).norm();
    norms[static_cast<size_t>(r)] = n;
    if (n > 0.0)
      Y.row(r) = A.row(r) / n;
    else
      Y.row(r).setZero();
  }
  bool rg = node(a).rg;
  Var out = push(std::move(Y), rg);
  if (rg) {
    int oid = out.id, aid = a.id;
    node(out).back = [oid, aid, norms = std::move(norms)](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const Mat& Y2 = t.nodes_[oid].value;
      Mat dx = Mat::Zero(g.rows(), g.cols());
      for (int r = 0; r < g.rows(); ++r) {
        double n = norms[static_cast<size_t>(r)];
        if (n <= 0.0) continue;
        double dot = g.row(r).dot(Y2.row(r));
        dx.row(r) = (g.row(r) - dot * Y2.row(r)) / n;
      }
      t.accum(Var{aid}, std::move(dx));
    };
  }
  return out;
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Mat& X = node(x).value;
  const Mat& G = node(gain).value;
  const Mat& B = node(bias).value;
  if (G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() ||
      B.cols() != X.cols())
    throw DimensionError("layer_norm_rows: gain/bias must be 1 x cols(x)");
  const int d = static_cast<int>(X.cols());
  Eigen::VectorXd mu = X.rowwise().mean();
  Mat centered = X.colwise() - mu;
  Eigen::VectorXd inv_s =
      ((centered.array().square().rowwise().sum() / d) + eps)
          .sqrt()
          .inverse();
  Mat xhat = centered.array().colwise() * inv_s.array();
  Mat Y = (xhat.array().rowwise() * G.row(0).array()).rowwise() +
          B.row(0).array();
  bool rg = node(x).rg || node(gain).rg || node(bias).rg;
  Var out = push(std::move(Y), rg);
  if (rg) {
    int oid = out.id, xid = x.id, gid = gain.id, bid = bias.id;
    node(out).back = [oid, xid, gid, bid, xh = std::move(xhat),
                      inv_s = std::move(inv_s)](Tape& t) {
      const Mat& g = t.nodes_[oid].grad;
      const Mat& G2 = t.nodes_[gid].value;
      t.accum(Var{gid}, (g.cwiseProduct(xh)).colwise().sum());
      t.accum(Var{bid}, g.colwise().sum());
      if (!t.nodes_[xid].rg) return;
      Mat dxhat = g.array().rowwise() * G2.row(0).array();
      Eigen::VectorXd m1 = dxhat.rowwise().mean();
      Eigen::VectorXd m2 = (dxhat.array() * xh.array()).rowwise().mean();
      Mat dx = (((dxhat.colwise() - m1).array() -
                 xh.array().colwise() * m2.array())
                    .colwise() *
                inv_s.array())
                   .matrix();
      t.accum(Var{xid}, std::move(dx));
    };
  }
  return out;
}

Var Tape::multihead_attention(Var qp, Var kp, Var vp, int heads) {
  const Mat& q = node(qp).value;
  const Mat& k = node(kp).value;
  const Mat& v = node(vp).value;
  const int width = static_cast<int>(q.cols());
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows())
    throw DimensionError("multihead_attention: stream shapes disagree");
  if (k.rows() < 1) throw DimensionError("multihead_attention: empty keys");
  if (heads < 1 || width % heads != 0)
    throw DimensionError("multihead_attention: width not divisible by heads");
  const int dh = width / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Mat> attn(static_cast<size_t>(heads));
  Mat out(q.rows(), width);
  for (int h = 0; h < heads; ++h) {
    Mat scores = q.middleCols(h * dh, dh) *
                 k.middleCols(h * dh, dh).transpose() * inv_sqrt_dh;
    Eigen::VectorXd rowmax = scores.rowwise().maxCoeff();
    Mat a = (scores.colwise() - rowmax).array().exp();
    Eigen::VectorXd z = a.rowwise().sum();
    a.array().colwise() /= z.array();
    out.middleCols(h * dh, dh).noalias() = a * v.middleCols(h * dh, dh);
    attn[static_cast<size_t>(h)] = std::move(a);
  }

  bool rg = node(qp).rg || node(kp).rg || node(vp).rg;
  Var o = push(std::move(out), rg);
  if (rg) {
    int oid = o.id, qid = qp.id, kid = kp.id, vid = vp.id;
    node(o).back = [oid, qid, kid, vid, heads, dh, inv_sqrt_dh,
                    attn = std::move(attn)](Tape& t) {
      const Mat& g = t.nodes_[static_cast<size_t>(oid)].grad;
      const Mat& q2 = t.nodes_[static_cast<size_t>(qid)].value;
      const Mat& k2 = t.nodes_[static_cast<size_t>(kid)].value;
      const Mat& v2 = t.nodes_[static_cast<size_t>(vid)].value;
      Mat dq(q2.rows(), q2.cols()), dk(k2.rows(), k2.cols()),
          dv(v2.rows(), v2.cols());
      for (int h = 0; h < heads; ++h) {
        const Mat& a = attn[static_cast<size_t>(h)];
        auto gh = g.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh).noalias() = a.transpose() * gh;
        Mat da = gh * v2.middleCols(h * dh, dh).transpose();
        // softmax backward per row, then the 1/sqrt(dh) score scale.
        Eigen::VectorXd dot = (da.array() * a.array()).rowwise().sum();
        Mat ds = (a.array() * (da.colwise() - dot).array()) * inv_sqrt_dh;
        dq.middleCols(h * dh, dh).noalias() = ds * k2.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() =
            ds.transpose() * q2.middleCols(h * dh, dh);
      }
      t.accum(Var{qid}, std::move(dq));
      t.accum(Var{kid}, std::move(dk));
      t.accum(Var{vid}, std::move(dv));
    };
  }
  return o;
}

Var Tape::sum_sq(Var a) {
  const Mat& A = node(a).value;
  Mat out(1, 1);
  out(0, 0) = A.squaredNorm();
  bool rg = node(a).rg;
  Var o = push(std::move(out), rg);
  if (rg) {
    int oid = o.id, aid = a.id;
    node(o).back = [oid, aid](Tape& t) {
      double g = t.nodes_[oid].grad(0, 0);
      t.accum(Var{aid}, 2.0 * g * t.nodes_[aid].value);
    };
  }
  return o;
}

}  // namespace gdeform

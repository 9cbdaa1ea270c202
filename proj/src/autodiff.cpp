#include "hamsafe/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace hamsafe::ad {

namespace {

bool scalar_shape(const Eigen::MatrixXd& m) { return m.rows() == 1 && m.cols() == 1; }

void check_elementwise(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (scalar_shape(a) || scalar_shape(b)) return;
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("autodiff: elementwise shape mismatch");
  }
}

Eigen::MatrixXd bcast(const Eigen::MatrixXd& m, int r, int c) {
  if (m.rows() == r && m.cols() == c) return m;
  return Eigen::MatrixXd::Constant(r, c, m(0, 0));
}

}  // namespace

Var Tape::push(Node&& node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(const Eigen::MatrixXd& value) {
  Node n;
  n.op = Op::Const;
  n.val = value;
  return push(std::move(n));
}

Var Tape::constant(double value) {
  return constant(Eigen::MatrixXd::Constant(1, 1, value));
}

Var Tape::leaf(const Eigen::MatrixXd& value) {
  Node n;
  n.op = Op::Leaf;
  n.val = value;
  n.requires_grad = true;
  return push(std::move(n));
}

const Eigen::MatrixXd& Tape::value(Var v) const { return nodes_.at(v.id).val; }
int Tape::rows(Var v) const { return static_cast<int>(nodes_.at(v.id).val.rows()); }
int Tape::cols(Var v) const { return static_cast<int>(nodes_.at(v.id).val.cols()); }

Var Tape::add(Var a, Var b) {
  const auto& va = nodes_[a.id].val;
  const auto& vb = nodes_[b.id].val;
  check_elementwise(va, vb);
  const int r = std::max(va.rows(), vb.rows());
  const int c = std::max(va.cols(), vb.cols());
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.val = bcast(va, r, c) + bcast(vb, r, c);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const auto& va = nodes_[a.id].val;
  const auto& vb = nodes_[b.id].val;
  check_elementwise(va, vb);
  const int r = std::max(va.rows(), vb.rows());
  const int c = std::max(va.cols(), vb.cols());
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = bcast(va, r, c) - bcast(vb, r, c);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const auto& va = nodes_[a.id].val;
  const auto& vb = nodes_[b.id].val;
  check_elementwise(va, vb);
  const int r = std::max(va.rows(), vb.rows());
  const int c = std::max(va.cols(), vb.cols());
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = bcast(va, r, c).cwiseProduct(bcast(vb, r, c));
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
  const auto& va = nodes_[a.id].val;
  const auto& vb = nodes_[b.id].val;
  check_elementwise(va, vb);
  const int r = std::max(va.rows(), vb.rows());
  const int c = std::max(va.cols(), vb.cols());
  Node n;
  n.op = Op::Div;
  n.a = a.id;
  n.b = b.id;
  n.val = bcast(va, r, c).cwiseQuotient(bcast(vb, r, c));
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.c = c;
  n.val = c * nodes_[a.id].val;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.val = nodes_[a.id].val.array().tanh();
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  Node n;
  n.op = Op::Sqrt;
  n.a = a.id;
  n.val = nodes_[a.id].val.array().sqrt();
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::acos_clamped(Var a, double lim) {
  Node n;
  n.op = Op::Acos;
  n.a = a.id;
  n.c = lim;
  n.val = nodes_[a.id]
              .val.array()
              .min(1.0 - lim)
              .max(-1.0 + lim)
              .acos();
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const auto& va = nodes_[a.id].val;
  const auto& vb = nodes_[b.id].val;
  if (va.cols() != vb.rows()) throw std::invalid_argument("autodiff: matmul shape mismatch");
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.val = va * vb;
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.val = nodes_[a.id].val.transpose();
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::row_sum(Var a) {
  Node n;
  n.op = Op::RowSum;
  n.a = a.id;
  n.val = nodes_[a.id].val.colwise().sum();
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::broadcast_rows(Var a, int r) {
  if (nodes_[a.id].val.rows() != 1) throw std::invalid_argument("broadcast_rows: expects 1 x n");
  Node n;
  n.op = Op::BroadcastRows;
  n.a = a.id;
  n.n = r;
  n.val = nodes_[a.id].val.replicate(r, 1);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sum_all(Var a) {
  Node n;
  n.op = Op::SumAll;
  n.a = a.id;
  n.val = Eigen::MatrixXd::Constant(1, 1, nodes_[a.id].val.sum());
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::col(Var a, int j) {
  Node n;
  n.op = Op::Col;
  n.a = a.id;
  n.j = j;
  n.val = nodes_[a.id].val.col(j);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::pad_col(Var a, int j, int width) {
  Node n;
  n.op = Op::PadCol;
  n.a = a.id;
  n.j = j;
  n.n = width;
  n.val = Eigen::MatrixXd::Zero(nodes_[a.id].val.rows(), width);
  n.val.col(j) = nodes_[a.id].val;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::hcat(std::span<const Var> cols) {
  if (cols.empty()) throw std::invalid_argument("hcat: empty");
  const int r = static_cast<int>(nodes_[cols[0].id].val.rows());
  Node n;
  n.op = Op::HCat;
  n.val = Eigen::MatrixXd(r, static_cast<int>(cols.size()));
  bool rg = false;
  for (size_t i = 0; i < cols.size(); ++i) {
    const auto& v = nodes_[cols[i].id].val;
    if (v.rows() != r || v.cols() != 1) throw std::invalid_argument("hcat: expects B x 1 columns");
    n.val.col(static_cast<int>(i)) = v;
    n.extra.push_back(cols[i].id);
    rg = rg || nodes_[cols[i].id].requires_grad;
  }
  n.requires_grad = rg;
  return push(std::move(n));
}

Var Tape::reduce_to_shape(Var g, int r, int c) {
  if (rows(g) == r && cols(g) == c) return g;
  if (r == 1 && c == 1) return sum_all(g);
  throw std::logic_error("autodiff: unexpected gradient shape reduction");
}

void Tape::accumulate(std::vector<Var>& adj, int32_t node, Var contrib) {
  if (adj[node].valid()) {
    adj[node] = add(adj[node], contrib);
  } else {
    adj[node] = contrib;
  }
}

std::vector<Var> Tape::gradient(Var out, std::span<const Var> wrt) {
  if (rows(out) != 1 || cols(out) != 1) {
    throw std::invalid_argument("gradient: output must be a scalar (1x1)");
  }
  // Mark nodes reachable forward from wrt, up to out.
  ++mark_epoch_;
  int32_t lo = out.id;
  for (const Var& v : wrt) {
    nodes_[v.id].mark = mark_epoch_;
    lo = std::min(lo, v.id);
  }
  for (int32_t i = lo; i <= out.id; ++i) {
    Node& n = nodes_[i];
    if (n.mark == mark_epoch_) continue;
    const auto marked = [&](int32_t p) { return p >= 0 && nodes_[p].mark == mark_epoch_; };
    bool m = marked(n.a) || marked(n.b);
    for (int32_t p : n.extra) m = m || marked(p);
    if (m) n.mark = mark_epoch_;
  }

  const uint32_t epoch = mark_epoch_;
  std::vector<Var> adj(static_cast<size_t>(out.id) + 1, Var{});
  if (nodes_[out.id].mark == epoch) {
    adj[out.id] = constant(1.0);
  } else {
    // Output does not depend on any wrt: all-zero gradients.
    std::vector<Var> zeros;
    zeros.reserve(wrt.size());
    for (const Var& v : wrt) {
      zeros.push_back(constant(Eigen::MatrixXd::Zero(rows(v), cols(v))));
    }
    return zeros;
  }

  const auto flow = [&](int32_t parent, Var contrib) {
    if (parent < 0 || nodes_[parent].mark != epoch) return;
    const int pr = static_cast<int>(nodes_[parent].val.rows());
    const int pc = static_cast<int>(nodes_[parent].val.cols());
    accumulate(adj, parent, reduce_to_shape(contrib, pr, pc));
  };

  for (int32_t i = out.id; i >= lo; --i) {
    if (!adj[i].valid()) continue;
    const Var g = adj[i];
    // Snapshot fields: backward rules append nodes and may reallocate nodes_.
    const Op op = nodes_[i].op;
    const int32_t pa = nodes_[i].a;
    const int32_t pb = nodes_[i].b;
    const double cc = nodes_[i].c;
    const int32_t jj = nodes_[i].j;
    const std::vector<int32_t> extra = nodes_[i].extra;
    const Var self{i};

    switch (op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        flow(pa, g);
        flow(pb, g);
        break;
      case Op::Sub:
        flow(pa, g);
        flow(pb, scale(g, -1.0));
        break;
      case Op::Mul:
        flow(pa, mul(g, Var{pb}));
        flow(pb, mul(g, Var{pa}));
        break;
      case Op::Div: {
        flow(pa, div(g, Var{pb}));
        if (pb >= 0 && nodes_[pb].mark == epoch) {
          const Var t = div(mul(g, self), Var{pb});
          flow(pb, scale(t, -1.0));
        }
        break;
      }
      case Op::Scale:
        flow(pa, scale(g, cc));
        break;
      case Op::Tanh: {
        const Var one = constant(1.0);
        flow(pa, mul(g, sub(one, mul(self, self))));
        break;
      }
      case Op::Sqrt:
        flow(pa, div(scale(g, 0.5), self));
        break;
      case Op::Acos: {
        if (pa >= 0 && nodes_[pa].mark == epoch) {
          // d/dx acos(clamp(x)) = -1/sqrt(1 - xc^2) inside, 0 where clamped.
          const auto& xv = nodes_[pa].val;
          Eigen::MatrixXd mask =
              ((xv.array() > -1.0 + cc) && (xv.array() < 1.0 - cc)).cast<double>();
          Eigen::MatrixXd excess =
              xv - xv.array().min(1.0 - cc).max(-1.0 + cc).matrix();
          // Clamped input rebuilt as a Var so higher-order terms still flow.
          const Var xcv = sub(Var{pa}, constant(excess));
          const Var one = constant(1.0);
          const Var denom = sqrt(sub(one, mul(xcv, xcv)));
          flow(pa, mul(mul(g, constant(mask)), scale(div(one, denom), -1.0)));
        }
        break;
      }
      case Op::MatMul:
        flow(pa, matmul(g, transpose(Var{pb})));
        flow(pb, matmul(transpose(Var{pa}), g));
        break;
      case Op::Transpose:
        flow(pa, transpose(g));
        break;
      case Op::RowSum:
        flow(pa, broadcast_rows(g, static_cast<int>(nodes_[pa].val.rows())));
        break;
      case Op::BroadcastRows:
        flow(pa, row_sum(g));
        break;
      case Op::SumAll: {
        if (pa >= 0 && nodes_[pa].mark == epoch) {
          const Var ones = constant(
              Eigen::MatrixXd::Ones(nodes_[pa].val.rows(), nodes_[pa].val.cols()));
          flow(pa, mul(ones, g));
        }
        break;
      }
      case Op::Col:
        flow(pa, pad_col(g, jj, static_cast<int>(nodes_[pa].val.cols())));
        break;
      case Op::PadCol:
        flow(pa, col(g, jj));
        break;
      case Op::HCat:
        for (size_t k = 0; k < extra.size(); ++k) {
          flow(extra[k], col(g, static_cast<int>(k)));
        }
        break;
    }
  }

  std::vector<Var> grads;
  grads.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (adj[v.id].valid()) {
      grads.push_back(adj[v.id]);
    } else {
      grads.push_back(constant(Eigen::MatrixXd::Zero(rows(v), cols(v))));
    }
  }
  return grads;
}

void Tape::clear() {
  nodes_.clear();
  mark_epoch_ = 0;
}

}  // namespace hamsafe::ad

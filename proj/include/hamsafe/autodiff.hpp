#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hamsafe::ad {

/// Handle into a Tape node.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Wengert-list reverse-mode autodiff over matrix-valued nodes. The batch
/// dimension of a training step lives in the node values (B x k matrices),
/// so per-layer work is dense GEMM instead of scalar graph traffic.
///
/// gradient() records the adjoint computation as ordinary tape nodes, so the
/// result is differentiable again; that is how the coordinate gradient of the
/// learned Hamiltonian inside the rollout gets correct parameter gradients.
class Tape {
 public:
  Var constant(const Eigen::MatrixXd& value);
  Var constant(double value);
  /// Differentiable leaf.
  Var leaf(const Eigen::MatrixXd& value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise; 1x1 operands broadcast
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a);
  Var sqrt(Var a);
  /// acos with the input clamped to [-1 + lim, 1 - lim]; gradient is zero in
  /// the clamped region.
  Var acos_clamped(Var a, double lim = 1e-12);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var row_sum(Var a);                  // B x n -> 1 x n
  Var broadcast_rows(Var a, int rows); // 1 x n -> rows x n
  Var sum_all(Var a);                  // -> 1 x 1
  Var col(Var a, int j);               // B x n -> B x 1
  Var hcat(std::span<const Var> cols); // k columns -> B x k

  const Eigen::MatrixXd& value(Var v) const;
  int rows(Var v) const;
  int cols(Var v) const;
  size_t size() const { return nodes_.size(); }

  /// d out / d wrt as new tape nodes (missing dependency -> zero constant).
  /// `out` must be 1x1.
  std::vector<Var> gradient(Var out, std::span<const Var> wrt);

  void clear();
  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  enum class Op : uint8_t {
    Leaf, Const, Add, Sub, Mul, Div, Scale, Tanh, Sqrt, Acos,
    MatMul, Transpose, RowSum, BroadcastRows, SumAll, Col, PadCol, HCat,
  };

  struct Node {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    double c = 0.0;   // Scale factor, acos clamp limit
    int32_t j = 0;    // Col/PadCol index
    int32_t n = 0;    // PadCol target width / BroadcastRows count
    std::vector<int32_t> extra;  // HCat parents
    Eigen::MatrixXd val;
    bool requires_grad = false;
    uint32_t mark = 0;
  };

  Var push(Node&& node);
  Var pad_col(Var a, int j, int n);
  Var reduce_to_shape(Var g, int r, int c);
  void accumulate(std::vector<Var>& adj, int32_t node, Var contrib);

  std::vector<Node> nodes_;
  uint32_t mark_epoch_ = 0;
};

}  // namespace hamsafe::ad

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/tensor.hpp"

namespace st {

// Reverse-mode autodiff over an immutable expression DAG of float tensors.
// Graphs are cheap to build and are typically rebuilt per batch; nodes are
// shared_ptr so subgraphs (e.g. the model applied to two inputs with shared
// parameter slots) can be shared and gradients accumulate at the shared
// nodes.

enum class Op : uint8_t {
  kInput,
  kConst,
  kAdd,
  kSub,
  kMul,
  kScale,       // scalar * tensor
  kBiasRows,    // (R,C) + (C,), broadcast over rows
  kBiasChan,    // (B,C,H,W) + (C,), broadcast over batch and space
  kMatMul,      // (m,k) x (k,n)
  kConv2d,      // (B,Ci,H,W) * (Co,Ci,kh,kw), stride 1, zero padding `pad`
  kRelu,
  kMaxPool2,    // 2x2 window, stride 2
  kReshape,
  kLogSumExp,   // rowwise (R,C) -> (R)
  kSoftmax,     // rowwise (R,C) -> (R,C)
  kGatherCols,  // (R,C) with per-row column index -> (R)
  kRowMax,      // rowwise max -> (R)
  kRowSum,      // rowwise sum -> (R)
  kSum,         // all elements -> scalar
  kMean,        // all elements -> scalar
  kLog,         // elementwise natural log
  kClampMin,    // max(x, floor)
};

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::kConst;
  Shape shape;
  std::vector<Expr> args;

  // Per-op attributes.
  std::string name;          // kInput slot name
  Tensor value;              // kConst payload
  float scalar = 0.0f;       // kScale factor / kClampMin floor
  std::vector<int> indices;  // kGatherCols per-row column
  int pad = 0;               // kConv2d zero padding
  int id = 0;                // creation index, used in diagnostics

  std::string label() const;  // "op#id" for error messages
};

// Builders. Shape rules are checked at construction; violations throw with
// the offending node named.
Expr input(const std::string& name, Shape shape);
Expr constant(Tensor value);
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);
Expr scale(Expr a, float c);
Expr bias_rows(Expr a, Expr b);
Expr bias_chan(Expr a, Expr b);
Expr matmul(Expr a, Expr b);
Expr conv2d(Expr x, Expr w, int pad);
Expr relu(Expr a);
Expr maxpool2(Expr a);
Expr reshape(Expr a, Shape shape);
Expr logsumexp_rows(Expr a);
Expr softmax_rows(Expr a);
Expr gather_cols(Expr a, std::vector<int> indices);
Expr rowmax(Expr a);
Expr rowsum(Expr a);
Expr sum(Expr a);
Expr mean(Expr a);
Expr log_elem(Expr a);
Expr clamp_min(Expr a, float floor);

using Bindings = std::map<std::string, Tensor>;
using GradientMap = std::map<std::string, Tensor>;

// Memoizing evaluator over one set of bindings. Forward values are cached,
// so several roots sharing structure are evaluated once, and gradients()
// reuses the cached forward pass.
class Session {
 public:
  explicit Session(const Bindings& bindings);

  const Tensor& value(const Expr& expr);

  // Reverse-mode gradients of a scalar root with respect to the named input
  // slots. Slots appearing at several graph positions accumulate.
  GradientMap gradients(const Expr& scalar_root, const std::vector<std::string>& wrt);

 private:
  const Bindings& bindings_;
  std::unordered_map<const Node*, Tensor> cache_;
};

Tensor forward(const Expr& expr, const Bindings& bindings);
GradientMap backward(const Expr& scalar_root, const Bindings& bindings,
                     const std::vector<std::string>& wrt);

// Double-precision forward of the same graph; the finite-difference oracle
// runs on this path so its noise floor sits far below the f32 tolerance.
double forward_scalar_f64(const Expr& expr, const Bindings& bindings);

struct CheckReport {
  std::map<std::string, float> max_rel_err;  // per slot
  float worst = 0.0f;
  bool pass = false;
};

// Central finite differences on the f64 path, h per element.
GradientMap fd_gradients(const Expr& scalar_root, const Bindings& bindings,
                         const std::vector<std::string>& wrt, float h);

// |a-b| / max(1, |a|, |b|): relative above magnitude 1, absolute below.
float max_rel_error(const Tensor& a, const Tensor& b);

CheckReport grad_check(const Expr& scalar_root, const Bindings& bindings,
                       const std::vector<std::string>& wrt, float h, float tol);

}  // namespace st

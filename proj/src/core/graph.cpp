#include "core/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "core/error.hpp"

namespace st {

namespace {

std::atomic<int> g_node_counter{0};

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kBiasRows: return "bias_rows";
    case Op::kBiasChan: return "bias_chan";
    case Op::kMatMul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kRelu: return "relu";
    case Op::kMaxPool2: return "maxpool2";
    case Op::kReshape: return "reshape";
    case Op::kLogSumExp: return "logsumexp";
    case Op::kSoftmax: return "softmax";
    case Op::kGatherCols: return "gather_cols";
    case Op::kRowMax: return "rowmax";
    case Op::kRowSum: return "rowsum";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kLog: return "log";
    case Op::kClampMin: return "clamp_min";
  }
  return "?";
}

std::shared_ptr<Node> make_node(Op op, Shape shape, std::vector<Expr> args) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->args = std::move(args);
  n->id = g_node_counter.fetch_add(1, std::memory_order_relaxed);
  return n;
}

[[noreturn]] void shape_error(const std::string& label, const std::string& msg) {
  throw Error::numeric("shape mismatch at node " + label + ": " + msg);
}

}  // namespace

std::string Node::label() const {
  std::string s = std::string(op_name(op)) + "#" + std::to_string(id);
  if (!name.empty()) s += "(" + name + ")";
  return s;
}

Expr input(const std::string& name, Shape shape) {
  auto n = make_node(Op::kInput, std::move(shape), {});
  n->name = name;
  return n;
}

Expr constant(Tensor value) {
  auto n = make_node(Op::kConst, value.shape(), {});
  n->value = std::move(value);
  return n;
}

Expr add(Expr a, Expr b) {
  if (a->shape != b->shape)
    shape_error("add", shape_str(a->shape) + " vs " + shape_str(b->shape));
  Shape s = a->shape;
  return make_node(Op::kAdd, std::move(s), {std::move(a), std::move(b)});
}

Expr sub(Expr a, Expr b) {
  if (a->shape != b->shape)
    shape_error("sub", shape_str(a->shape) + " vs " + shape_str(b->shape));
  Shape s = a->shape;
  return make_node(Op::kSub, std::move(s), {std::move(a), std::move(b)});
}

Expr mul(Expr a, Expr b) {
  if (a->shape != b->shape)
    shape_error("mul", shape_str(a->shape) + " vs " + shape_str(b->shape));
  Shape s = a->shape;
  return make_node(Op::kMul, std::move(s), {std::move(a), std::move(b)});
}

Expr scale(Expr a, float c) {
  Shape s = a->shape;
  auto n = make_node(Op::kScale, std::move(s), {std::move(a)});
  n->scalar = c;
  return n;
}

Expr bias_rows(Expr a, Expr b) {
  if (a->shape.size() != 2 || b->shape.size() != 1 || a->shape[1] != b->shape[0])
    shape_error("bias_rows", shape_str(a->shape) + " + " + shape_str(b->shape));
  Shape s = a->shape;
  return make_node(Op::kBiasRows, std::move(s), {std::move(a), std::move(b)});
}

Expr bias_chan(Expr a, Expr b) {
  if (a->shape.size() != 4 || b->shape.size() != 1 || a->shape[1] != b->shape[0])
    shape_error("bias_chan", shape_str(a->shape) + " + " + shape_str(b->shape));
  Shape s = a->shape;
  return make_node(Op::kBiasChan, std::move(s), {std::move(a), std::move(b)});
}

Expr matmul(Expr a, Expr b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    shape_error("matmul", shape_str(a->shape) + " x " + shape_str(b->shape));
  Shape s{a->shape[0], b->shape[1]};
  return make_node(Op::kMatMul, std::move(s), {std::move(a), std::move(b)});
}

Expr conv2d(Expr x, Expr w, int pad) {
  if (x->shape.size() != 4 || w->shape.size() != 4 || x->shape[1] != w->shape[1])
    shape_error("conv2d", shape_str(x->shape) + " * " + shape_str(w->shape));
  const int ho = x->shape[2] + 2 * pad - w->shape[2] + 1;
  const int wo = x->shape[3] + 2 * pad - w->shape[3] + 1;
  if (ho <= 0 || wo <= 0) shape_error("conv2d", "kernel larger than padded input");
  Shape s{x->shape[0], w->shape[0], ho, wo};
  auto n = make_node(Op::kConv2d, std::move(s), {std::move(x), std::move(w)});
  n->pad = pad;
  return n;
}

Expr relu(Expr a) {
  Shape s = a->shape;
  return make_node(Op::kRelu, std::move(s), {std::move(a)});
}

Expr maxpool2(Expr a) {
  if (a->shape.size() != 4 || a->shape[2] % 2 != 0 || a->shape[3] % 2 != 0)
    shape_error("maxpool2", "expects (B,C,H,W) with even H,W, got " + shape_str(a->shape));
  Shape s{a->shape[0], a->shape[1], a->shape[2] / 2, a->shape[3] / 2};
  return make_node(Op::kMaxPool2, std::move(s), {std::move(a)});
}

Expr reshape(Expr a, Shape shape) {
  if (numel(shape) != numel(a->shape))
    shape_error("reshape", shape_str(a->shape) + " -> " + shape_str(shape));
  return make_node(Op::kReshape, std::move(shape), {std::move(a)});
}

Expr logsumexp_rows(Expr a) {
  if (a->shape.size() != 2) shape_error("logsumexp", "expects (R,C), got " + shape_str(a->shape));
  Shape s{a->shape[0]};
  return make_node(Op::kLogSumExp, std::move(s), {std::move(a)});
}

Expr softmax_rows(Expr a) {
  if (a->shape.size() != 2) shape_error("softmax", "expects (R,C), got " + shape_str(a->shape));
  Shape s = a->shape;
  return make_node(Op::kSoftmax, std::move(s), {std::move(a)});
}

Expr gather_cols(Expr a, std::vector<int> indices) {
  if (a->shape.size() != 2 || static_cast<int>(indices.size()) != a->shape[0])
    shape_error("gather_cols",
                shape_str(a->shape) + " with " + std::to_string(indices.size()) + " indices");
  for (int ix : indices) {
    if (ix < 0 || ix >= a->shape[1])
      throw Error::numeric("gather_cols: index " + std::to_string(ix) + " out of range for " +
                           shape_str(a->shape));
  }
  Shape s{a->shape[0]};
  auto n = make_node(Op::kGatherCols, std::move(s), {std::move(a)});
  n->indices = std::move(indices);
  return n;
}

Expr rowmax(Expr a) {
  if (a->shape.size() != 2) shape_error("rowmax", "expects (R,C), got " + shape_str(a->shape));
  Shape s{a->shape[0]};
  return make_node(Op::kRowMax, std::move(s), {std::move(a)});
}

Expr rowsum(Expr a) {
  if (a->shape.size() != 2) shape_error("rowsum", "expects (R,C), got " + shape_str(a->shape));
  Shape s{a->shape[0]};
  return make_node(Op::kRowSum, std::move(s), {std::move(a)});
}

Expr sum(Expr a) { return make_node(Op::kSum, Shape{}, {std::move(a)}); }

Expr mean(Expr a) { return make_node(Op::kMean, Shape{}, {std::move(a)}); }

Expr log_elem(Expr a) {
  Shape s = a->shape;
  return make_node(Op::kLog, std::move(s), {std::move(a)});
}

Expr clamp_min(Expr a, float floor) {
  Shape s = a->shape;
  auto n = make_node(Op::kClampMin, std::move(s), {std::move(a)});
  n->scalar = floor;
  return n;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const MatRM<T>>;
template <typename T>
using MMap = Eigen::Map<MatRM<T>>;

std::vector<const Node*> topo_order(const Node* root) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> done;
  std::vector<std::pair<const Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->args.size()) {
      const Node* child = node->args[next].get();
      ++next;
      if (!done.count(child)) stack.emplace_back(child, 0);
    } else {
      done.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

// im2col for one batch item: (Ci*kh*kw, Ho*Wo), zero padding.
template <typename T>
void im2col(const T* x, int ci, int h, int w, int kh, int kw, int pad, int ho, int wo, T* col) {
  for (int c = 0; c < ci; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * (ho * wo);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh - pad + ki;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow - pad + kj;
            row[oh * wo + ow] = (ih >= 0 && ih < h && iw >= 0 && iw < w)
                                    ? x[(static_cast<int64_t>(c) * h + ih) * w + iw]
                                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int ci, int h, int w, int kh, int kw, int pad, int ho, int wo,
                T* x) {
  for (int c = 0; c < ci; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * (ho * wo);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh - pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow - pad + kj;
            if (iw < 0 || iw >= w) continue;
            x[(static_cast<int64_t>(c) * h + ih) * w + iw] += row[oh * wo + ow];
          }
        }
      }
    }
  }
}

// One node's forward value. `arg(i)` exposes the already-computed inputs.
template <typename T, typename ArgFn>
std::vector<T> compute_node(const Node& n, const Bindings& bindings, ArgFn&& arg) {
  const int64_t n_out = numel(n.shape);
  std::vector<T> out(static_cast<size_t>(n_out));
  switch (n.op) {
    case Op::kInput: {
      auto it = bindings.find(n.name);
      if (it == bindings.end())
        throw Error::numeric("unbound slot '" + n.name + "' at node " + n.label());
      if (it->second.shape() != n.shape)
        throw Error::numeric("binding for slot '" + n.name + "' has shape " +
                             shape_str(it->second.shape()) + ", slot declares " +
                             shape_str(n.shape));
      const float* src = it->second.data();
      for (int64_t i = 0; i < n_out; ++i) out[i] = static_cast<T>(src[i]);
      break;
    }
    case Op::kConst: {
      const float* src = n.value.data();
      for (int64_t i = 0; i < n_out; ++i) out[i] = static_cast<T>(src[i]);
      break;
    }
    case Op::kAdd: {
      const T *a = arg(0), *b = arg(1);
      for (int64_t i = 0; i < n_out; ++i) out[i] = a[i] + b[i];
      break;
    }
    case Op::kSub: {
      const T *a = arg(0), *b = arg(1);
      for (int64_t i = 0; i < n_out; ++i) out[i] = a[i] - b[i];
      break;
    }
    case Op::kMul: {
      const T *a = arg(0), *b = arg(1);
      for (int64_t i = 0; i < n_out; ++i) out[i] = a[i] * b[i];
      break;
    }
    case Op::kScale: {
      const T* a = arg(0);
      const T c = static_cast<T>(n.scalar);
      for (int64_t i = 0; i < n_out; ++i) out[i] = c * a[i];
      break;
    }
    case Op::kBiasRows: {
      const T *a = arg(0), *b = arg(1);
      const int rows = n.shape[0], cols = n.shape[1];
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<int64_t>(r) * cols + c] = a[static_cast<int64_t>(r) * cols + c] + b[c];
      break;
    }
    case Op::kBiasChan: {
      const T *a = arg(0), *b = arg(1);
      const int bs = n.shape[0], ch = n.shape[1];
      const int64_t plane = static_cast<int64_t>(n.shape[2]) * n.shape[3];
      int64_t i = 0;
      for (int bi = 0; bi < bs; ++bi)
        for (int c = 0; c < ch; ++c)
          for (int64_t p = 0; p < plane; ++p, ++i) out[i] = a[i] + b[c];
      break;
    }
    case Op::kMatMul: {
      const int m = n.args[0]->shape[0], k = n.args[0]->shape[1], p = n.args[1]->shape[1];
      CMap<T> A(arg(0), m, k), B(arg(1), k, p);
      MMap<T> C(out.data(), m, p);
      C.noalias() = A * B;
      break;
    }
    case Op::kConv2d: {
      const auto& xs = n.args[0]->shape;
      const auto& ws = n.args[1]->shape;
      const int bs = xs[0], ci = xs[1], h = xs[2], w = xs[3];
      const int co = ws[0], kh = ws[2], kw = ws[3];
      const int ho = n.shape[2], wo = n.shape[3];
      const int64_t kdim = static_cast<int64_t>(ci) * kh * kw;
      std::vector<T> col(static_cast<size_t>(kdim * ho * wo));
      CMap<T> W(arg(1), co, kdim);
      for (int bi = 0; bi < bs; ++bi) {
        im2col(arg(0) + static_cast<int64_t>(bi) * ci * h * w, ci, h, w, kh, kw, n.pad, ho, wo,
               col.data());
        CMap<T> Col(col.data(), kdim, static_cast<int64_t>(ho) * wo);
        MMap<T> O(out.data() + static_cast<int64_t>(bi) * co * ho * wo, co,
                  static_cast<int64_t>(ho) * wo);
        O.noalias() = W * Col;
      }
      break;
    }
    case Op::kRelu: {
      const T* a = arg(0);
      for (int64_t i = 0; i < n_out; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
      break;
    }
    case Op::kMaxPool2: {
      const auto& xs = n.args[0]->shape;
      const int bs = xs[0], ch = xs[1], h = xs[2], w = xs[3];
      const int ho = h / 2, wo = w / 2;
      const T* a = arg(0);
      for (int bi = 0; bi < bs; ++bi)
        for (int c = 0; c < ch; ++c) {
          const T* plane = a + (static_cast<int64_t>(bi) * ch + c) * h * w;
          T* oplane = out.data() + (static_cast<int64_t>(bi) * ch + c) * ho * wo;
          for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow) {
              T best = plane[(2 * oh) * w + 2 * ow];
              best = std::max(best, plane[(2 * oh) * w + 2 * ow + 1]);
              best = std::max(best, plane[(2 * oh + 1) * w + 2 * ow]);
              best = std::max(best, plane[(2 * oh + 1) * w + 2 * ow + 1]);
              oplane[oh * wo + ow] = best;
            }
        }
      break;
    }
    case Op::kReshape: {
      const T* a = arg(0);
      std::copy(a, a + n_out, out.begin());
      break;
    }
    case Op::kLogSumExp: {
      const int rows = n.shape[0], cols = n.args[0]->shape[1];
      const T* a = arg(0);
      for (int r = 0; r < rows; ++r) {
        const T* row = a + static_cast<int64_t>(r) * cols;
        T m = row[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
        T s = T(0);
        for (int c = 0; c < cols; ++c) s += std::exp(row[c] - m);
        out[r] = m + std::log(s);
      }
      break;
    }
    case Op::kSoftmax: {
      const int rows = n.shape[0], cols = n.shape[1];
      const T* a = arg(0);
      for (int r = 0; r < rows; ++r) {
        const T* row = a + static_cast<int64_t>(r) * cols;
        T* orow = out.data() + static_cast<int64_t>(r) * cols;
        T m = row[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
        T s = T(0);
        for (int c = 0; c < cols; ++c) {
          orow[c] = std::exp(row[c] - m);
          s += orow[c];
        }
        for (int c = 0; c < cols; ++c) orow[c] /= s;
      }
      break;
    }
    case Op::kGatherCols: {
      const int rows = n.shape[0], cols = n.args[0]->shape[1];
      const T* a = arg(0);
      for (int r = 0; r < rows; ++r) out[r] = a[static_cast<int64_t>(r) * cols + n.indices[r]];
      break;
    }
    case Op::kRowMax: {
      const int rows = n.shape[0], cols = n.args[0]->shape[1];
      const T* a = arg(0);
      for (int r = 0; r < rows; ++r) {
        const T* row = a + static_cast<int64_t>(r) * cols;
        T m = row[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
        out[r] = m;
      }
      break;
    }
    case Op::kRowSum: {
      const int rows = n.shape[0], cols = n.args[0]->shape[1];
      const T* a = arg(0);
      for (int r = 0; r < rows; ++r) {
        const T* row = a + static_cast<int64_t>(r) * cols;
        T s = T(0);
        for (int c = 0; c < cols; ++c) s += row[c];
        out[r] = s;
      }
      break;
    }
    case Op::kSum: {
      const T* a = arg(0);
      const int64_t cnt = numel(n.args[0]->shape);
      T s = T(0);
      for (int64_t i = 0; i < cnt; ++i) s += a[i];
      out[0] = s;
      break;
    }
    case Op::kMean: {
      const T* a = arg(0);
      const int64_t cnt = numel(n.args[0]->shape);
      T s = T(0);
      for (int64_t i = 0; i < cnt; ++i) s += a[i];
      out[0] = s / static_cast<T>(cnt);
      break;
    }
    case Op::kLog: {
      const T* a = arg(0);
      for (int64_t i = 0; i < n_out; ++i) out[i] = std::log(a[i]);
      break;
    }
    case Op::kClampMin: {
      const T* a = arg(0);
      const T f = static_cast<T>(n.scalar);
      for (int64_t i = 0; i < n_out; ++i) out[i] = a[i] < f ? f : a[i];
      break;
    }
  }
  return out;
}

}  // namespace

Session::Session(const Bindings& bindings) : bindings_(bindings) {}

const Tensor& Session::value(const Expr& expr) {
  auto hit = cache_.find(expr.get());
  if (hit != cache_.end()) return hit->second;
  for (const Node* node : topo_order(expr.get())) {
    if (cache_.count(node)) continue;
    auto arg = [&](size_t i) -> const float* { return cache_.at(node->args[i].get()).data(); };
    std::vector<float> data = compute_node<float>(*node, bindings_, arg);
    cache_.emplace(node, Tensor(node->shape, std::move(data)));
  }
  return cache_.at(expr.get());
}

GradientMap Session::gradients(const Expr& scalar_root, const std::vector<std::string>& wrt) {
  if (numel(scalar_root->shape) != 1)
    throw Error::numeric("backward requires a scalar root, got shape " +
                         shape_str(scalar_root->shape) + " at node " + scalar_root->label());
  if (wrt.empty()) throw Error::numeric("backward: empty wrt set");
  value(scalar_root);  // ensure forwards

  const std::vector<const Node*> order = topo_order(scalar_root.get());
  std::unordered_map<const Node*, Tensor> adj;
  adj.emplace(scalar_root.get(), Tensor::full(scalar_root->shape, 1.0f));

  auto grad_of = [&](const Node* node) -> Tensor& {
    auto it = adj.find(node);
    if (it == adj.end()) it = adj.emplace(node, Tensor(node->shape)).first;
    return it->second;
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* n = *it;
    auto have = adj.find(n);
    if (have == adj.end()) continue;  // not on a path to the root's value
    const Tensor g = have->second;    // copy: grad_of below may rehash
    const float* gd = g.data();
    auto val = [&](const Node* node) -> const Tensor& { return cache_.at(node); };
    switch (n->op) {
      case Op::kInput:
      case Op::kConst:
        break;
      case Op::kAdd: {
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i];
        Tensor& db = grad_of(n->args[1].get());
        for (int64_t i = 0; i < g.size(); ++i) db[i] += gd[i];
        break;
      }
      case Op::kSub: {
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i];
        Tensor& db = grad_of(n->args[1].get());
        for (int64_t i = 0; i < g.size(); ++i) db[i] -= gd[i];
        break;
      }
      case Op::kMul: {
        const Tensor &av = val(n->args[0].get()), &bv = val(n->args[1].get());
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i] * bv[i];
        Tensor& db = grad_of(n->args[1].get());
        for (int64_t i = 0; i < g.size(); ++i) db[i] += gd[i] * av[i];
        break;
      }
      case Op::kScale: {
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += n->scalar * gd[i];
        break;
      }
      case Op::kBiasRows: {
        const int rows = n->shape[0], cols = n->shape[1];
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i];
        Tensor& db = grad_of(n->args[1].get());
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) db[c] += gd[static_cast<int64_t>(r) * cols + c];
        break;
      }
      case Op::kBiasChan: {
        const int bs = n->shape[0], ch = n->shape[1];
        const int64_t plane = static_cast<int64_t>(n->shape[2]) * n->shape[3];
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i];
        Tensor& db = grad_of(n->args[1].get());
        int64_t i = 0;
        for (int bi = 0; bi < bs; ++bi)
          for (int c = 0; c < ch; ++c)
            for (int64_t p = 0; p < plane; ++p, ++i) db[c] += gd[i];
        break;
      }
      case Op::kMatMul: {
        const int m = n->args[0]->shape[0], k = n->args[0]->shape[1], p = n->args[1]->shape[1];
        const Tensor &av = val(n->args[0].get()), &bv = val(n->args[1].get());
        CMap<float> A(av.data(), m, k), B(bv.data(), k, p), G(gd, m, p);
        {
          Tensor& da = grad_of(n->args[0].get());
          MMap<float> dA(da.data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        {
          Tensor& db = grad_of(n->args[1].get());
          MMap<float> dB(db.data(), k, p);
          dB.noalias() += A.transpose() * G;
        }
        break;
      }
      case Op::kConv2d: {
        const auto& xs = n->args[0]->shape;
        const auto& ws = n->args[1]->shape;
        const int bs = xs[0], ci = xs[1], h = xs[2], w = xs[3];
        const int co = ws[0], kh = ws[2], kw = ws[3];
        const int ho = n->shape[2], wo = n->shape[3];
        const int64_t kdim = static_cast<int64_t>(ci) * kh * kw;
        const Tensor &xv = val(n->args[0].get()), &wv = val(n->args[1].get());
        Tensor& dx = grad_of(n->args[0].get());
        Tensor& dw = grad_of(n->args[1].get());
        std::vector<float> col(static_cast<size_t>(kdim * ho * wo));
        std::vector<float> dcol(static_cast<size_t>(kdim * ho * wo));
        CMap<float> W(wv.data(), co, kdim);
        MMap<float> dW(dw.data(), co, kdim);
        for (int bi = 0; bi < bs; ++bi) {
          im2col(xv.data() + static_cast<int64_t>(bi) * ci * h * w, ci, h, w, kh, kw, n->pad, ho,
                 wo, col.data());
          CMap<float> Col(col.data(), kdim, static_cast<int64_t>(ho) * wo);
          CMap<float> G2(gd + static_cast<int64_t>(bi) * co * ho * wo, co,
                         static_cast<int64_t>(ho) * wo);
          dW.noalias() += G2 * Col.transpose();
          MMap<float> dCol(dcol.data(), kdim, static_cast<int64_t>(ho) * wo);
          dCol.noalias() = W.transpose() * G2;
          col2im_acc(dcol.data(), ci, h, w, kh, kw, n->pad, ho, wo,
                     dx.data() + static_cast<int64_t>(bi) * ci * h * w);
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& xv = val(n->args[0].get());
        Tensor& dx = grad_of(n->args[0].get());
        // subgradient at exactly 0 is 0
        for (int64_t i = 0; i < g.size(); ++i) dx[i] += xv[i] > 0.0f ? gd[i] : 0.0f;
        break;
      }
      case Op::kMaxPool2: {
        const auto& xs = n->args[0]->shape;
        const int bs = xs[0], ch = xs[1], h = xs[2], w = xs[3];
        const int ho = h / 2, wo = w / 2;
        const Tensor& xv = val(n->args[0].get());
        Tensor& dx = grad_of(n->args[0].get());
        for (int bi = 0; bi < bs; ++bi)
          for (int c = 0; c < ch; ++c) {
            const float* plane = xv.data() + (static_cast<int64_t>(bi) * ch + c) * h * w;
            float* dplane = dx.data() + (static_cast<int64_t>(bi) * ch + c) * h * w;
            const float* gplane = gd + (static_cast<int64_t>(bi) * ch + c) * ho * wo;
            for (int oh = 0; oh < ho; ++oh)
              for (int ow = 0; ow < wo; ++ow) {
                // first max in scan order receives the gradient
                int bh = 2 * oh, bw = 2 * ow;
                float best = plane[bh * w + bw];
                const int cand[3][2] = {{2 * oh, 2 * ow + 1}, {2 * oh + 1, 2 * ow}, {2 * oh + 1, 2 * ow + 1}};
                for (auto& rc : cand) {
                  const float v = plane[rc[0] * w + rc[1]];
                  if (v > best) {
                    best = v;
                    bh = rc[0];
                    bw = rc[1];
                  }
                }
                dplane[bh * w + bw] += gplane[oh * wo + ow];
              }
          }
        break;
      }
      case Op::kReshape: {
        Tensor& da = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) da[i] += gd[i];
        break;
      }
      case Op::kLogSumExp: {
        const int rows = n->shape[0], cols = n->args[0]->shape[1];
        const Tensor& xv = val(n->args[0].get());
        const Tensor& yv = val(n);
        Tensor& dx = grad_of(n->args[0].get());
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            const int64_t i = static_cast<int64_t>(r) * cols + c;
            dx[i] += gd[r] * std::exp(xv[i] - yv[r]);
          }
        break;
      }
      case Op::kSoftmax: {
        const int rows = n->shape[0], cols = n->shape[1];
        const Tensor& yv = val(n);
        Tensor& dx = grad_of(n->args[0].get());
        for (int r = 0; r < rows; ++r) {
          float dot = 0.0f;
          for (int c = 0; c < cols; ++c) {
            const int64_t i = static_cast<int64_t>(r) * cols + c;
            dot += gd[i] * yv[i];
          }
          for (int c = 0; c < cols; ++c) {
            const int64_t i = static_cast<int64_t>(r) * cols + c;
            dx[i] += yv[i] * (gd[i] - dot);
          }
        }
        break;
      }
      case Op::kGatherCols: {
        const int rows = n->shape[0], cols = n->args[0]->shape[1];
        Tensor& dx = grad_of(n->args[0].get());
        for (int r = 0; r < rows; ++r) dx[static_cast<int64_t>(r) * cols + n->indices[r]] += gd[r];
        break;
      }
      case Op::kRowMax: {
        const int rows = n->shape[0], cols = n->args[0]->shape[1];
        const Tensor& xv = val(n->args[0].get());
        Tensor& dx = grad_of(n->args[0].get());
        for (int r = 0; r < rows; ++r) {
          const float* row = xv.data() + static_cast<int64_t>(r) * cols;
          int am = 0;
          for (int c = 1; c < cols; ++c)
            if (row[c] > row[am]) am = c;
          dx[static_cast<int64_t>(r) * cols + am] += gd[r];
        }
        break;
      }
      case Op::kRowSum: {
        const int rows = n->shape[0], cols = n->args[0]->shape[1];
        Tensor& dx = grad_of(n->args[0].get());
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) dx[static_cast<int64_t>(r) * cols + c] += gd[r];
        break;
      }
      case Op::kSum: {
        Tensor& dx = grad_of(n->args[0].get());
        const float gs = gd[0];
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] += gs;
        break;
      }
      case Op::kMean: {
        Tensor& dx = grad_of(n->args[0].get());
        const float gs = gd[0] / static_cast<float>(dx.size());
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] += gs;
        break;
      }
      case Op::kLog: {
        const Tensor& xv = val(n->args[0].get());
        Tensor& dx = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) dx[i] += gd[i] / xv[i];
        break;
      }
      case Op::kClampMin: {
        const Tensor& xv = val(n->args[0].get());
        Tensor& dx = grad_of(n->args[0].get());
        for (int64_t i = 0; i < g.size(); ++i) dx[i] += xv[i] >= n->scalar ? gd[i] : 0.0f;
        break;
      }
    }
  }

  // Accumulate per-slot adjoints across all input nodes sharing a name.
  GradientMap result;
  for (const Node* node : order) {
    if (node->op != Op::kInput) continue;
    auto it = adj.find(node);
    if (it == adj.end()) continue;
    auto res = result.find(node->name);
    if (res == result.end()) {
      result.emplace(node->name, it->second);
    } else {
      Tensor& acc = res->second;
      if (!acc.same_shape(it->second))
        throw Error::numeric("slot '" + node->name + "' declared with inconsistent shapes");
      for (int64_t i = 0; i < acc.size(); ++i) acc[i] += it->second[i];
    }
  }
  GradientMap wanted;
  for (const auto& name : wrt) {
    auto it = result.find(name);
    if (it != result.end()) {
      wanted.emplace(name, std::move(it->second));
      continue;
    }
    // Slot exists in the graph but off the gradient path: gradient is zero.
    const Node* slot = nullptr;
    for (const Node* node : order)
      if (node->op == Op::kInput && node->name == name) slot = node;
    if (!slot) throw Error::numeric("unbound slot '" + name + "' requested in backward");
    wanted.emplace(name, Tensor(slot->shape));
  }
  return wanted;
}

Tensor forward(const Expr& expr, const Bindings& bindings) {
  Session s(bindings);
  return s.value(expr);
}

GradientMap backward(const Expr& scalar_root, const Bindings& bindings,
                     const std::vector<std::string>& wrt) {
  Session s(bindings);
  return s.gradients(scalar_root, wrt);
}

double forward_scalar_f64(const Expr& expr, const Bindings& bindings) {
  if (numel(expr->shape) != 1)
    throw Error::numeric("forward_scalar_f64 requires a scalar root, got " +
                         shape_str(expr->shape));
  std::unordered_map<const Node*, std::vector<double>> cache;
  for (const Node* node : topo_order(expr.get())) {
    if (cache.count(node)) continue;
    auto arg = [&](size_t i) -> const double* { return cache.at(node->args[i].get()).data(); };
    cache.emplace(node, compute_node<double>(*node, bindings, arg));
  }
  return cache.at(expr.get())[0];
}

GradientMap fd_gradients(const Expr& scalar_root, const Bindings& bindings,
                         const std::vector<std::string>& wrt, float h) {
  if (h <= 0.0f) throw Error::numeric("fd_gradients: h must be positive");
  GradientMap out;
  Bindings work = bindings;
  for (const auto& name : wrt) {
    auto it = work.find(name);
    if (it == work.end()) throw Error::numeric("unbound slot '" + name + "' in fd_gradients");
    Tensor grad(it->second.shape());
    Tensor& slot = it->second;
    for (int64_t i = 0; i < slot.size(); ++i) {
      const float orig = slot[i];
      slot[i] = orig + h;
      const double fp = forward_scalar_f64(scalar_root, work);
      slot[i] = orig - h;
      const double fm = forward_scalar_f64(scalar_root, work);
      slot[i] = orig;
      grad[i] = static_cast<float>((fp - fm) / (2.0 * static_cast<double>(h)));
    }
    out.emplace(name, std::move(grad));
  }
  return out;
}

float max_rel_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw Error::numeric("max_rel_error: shape mismatch");
  float worst = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i) {
    const float denom = std::max({1.0f, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

CheckReport grad_check(const Expr& scalar_root, const Bindings& bindings,
                       const std::vector<std::string>& wrt, float h, float tol) {
  CheckReport report;
  const GradientMap ad = backward(scalar_root, bindings, wrt);
  const GradientMap fd = fd_gradients(scalar_root, bindings, wrt, h);
  for (const auto& [name, g] : ad) {
    const float err = max_rel_error(g, fd.at(name));
    report.max_rel_err[name] = err;
    report.worst = std::max(report.worst, err);
  }
  report.pass = report.worst <= tol;
  return report;
}

}  // namespace st

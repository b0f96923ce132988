#include "core/divergence.hpp"

#include <cmath>

#include "core/error.hpp"

namespace st {

std::string reg_kind_name(RegKind kind) {
  switch (kind) {
    case RegKind::kKl: return "kl";
    case RegKind::kSymKl: return "symkl";
    case RegKind::kJs: return "js";
    case RegKind::kSqL2: return "l2";
  }
  return "?";
}

RegKind reg_kind_from_name(const std::string& name) {
  if (name == "kl") return RegKind::kKl;
  if (name == "symkl" || name == "sym_kl") return RegKind::kSymKl;
  if (name == "js") return RegKind::kJs;
  if (name == "l2" || name == "sq_l2") return RegKind::kSqL2;
  throw Error::usage("unknown regularization kind '" + name + "' (expected kl|symkl|js|l2)");
}

bool reg_is_symmetric(RegKind kind) { return kind != RegKind::kKl; }

namespace {

void check_lengths(std::span<const float> p, std::span<const float> q) {
  if (p.size() != q.size() || p.empty())
    throw Error::numeric("divergence: probability vectors of lengths " +
                         std::to_string(p.size()) + " and " + std::to_string(q.size()));
}

double clamped(double v) { return v < kProbFloor ? kProbFloor : v; }

}  // namespace

double kl(std::span<const float> p, std::span<const float> q) {
  check_lengths(p, q);
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    s += pi * (std::log(clamped(pi)) - std::log(clamped(q[i])));
  }
  return s;
}

double reg_loss(RegKind kind, std::span<const float> p, std::span<const float> q) {
  check_lengths(p, q);
  switch (kind) {
    case RegKind::kKl:
      return kl(p, q);
    case RegKind::kSymKl:
      return 0.5 * (kl(p, q) + kl(q, p));
    case RegKind::kSqL2: {
      double s = 0.0;
      for (size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(q[i]);
        s += d * d;
      }
      return s;
    }
    case RegKind::kJs: {
      // As printed: 1/2 [ KL(m, p) + KL(m, q) ] with m = (p+q)/2.
      std::vector<float> m(p.size());
      for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5f * (p[i] + q[i]);
      return 0.5 * (kl(m, p) + kl(m, q));
    }
  }
  throw Error::usage("reg_loss: invalid kind");
}

double cross_entropy(const Tensor& logits_row, int label) {
  const int64_t c = logits_row.size();
  if (label < 0 || label >= c)
    throw Error::numeric("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(c) + " classes");
  double m = logits_row[0];
  for (int64_t i = 1; i < c; ++i) m = std::max(m, static_cast<double>(logits_row[i]));
  double s = 0.0;
  for (int64_t i = 0; i < c; ++i) s += std::exp(static_cast<double>(logits_row[i]) - m);
  return m + std::log(s) - static_cast<double>(logits_row[label]);
}

Expr ce_rows(const Expr& logits, std::vector<int> labels) {
  return sub(logsumexp_rows(logits), gather_cols(logits, std::move(labels)));
}

namespace {

// sum_c p_c (log p^_c - log q^_c) per row, with the probabilities clamped
// only inside the logs.
Expr kl_rows_impl(const Expr& p, const Expr& q) {
  const Expr lp = log_elem(clamp_min(p, static_cast<float>(kProbFloor)));
  const Expr lq = log_elem(clamp_min(q, static_cast<float>(kProbFloor)));
  return rowsum(mul(p, sub(lp, lq)));
}

}  // namespace

Expr kl_rows(const Expr& p, const Expr& q) { return kl_rows_impl(p, q); }

Expr reg_rows(RegKind kind, const Expr& p, const Expr& q) {
  switch (kind) {
    case RegKind::kKl:
      return kl_rows_impl(p, q);
    case RegKind::kSymKl:
      return scale(add(kl_rows_impl(p, q), kl_rows_impl(q, p)), 0.5f);
    case RegKind::kSqL2: {
      const Expr d = sub(p, q);
      return rowsum(mul(d, d));
    }
    case RegKind::kJs: {
      const Expr m = scale(add(p, q), 0.5f);
      return scale(add(kl_rows_impl(m, p), kl_rows_impl(m, q)), 0.5f);
    }
  }
  throw Error::usage("reg_rows: invalid kind");
}

Expr cw_rows(const Expr& logits, const std::vector<int>& labels) {
  const int rows = logits->shape[0], cols = logits->shape[1];
  if (static_cast<int>(labels.size()) != rows)
    throw Error::numeric("cw_rows: label count does not match batch");
  Tensor mask(Shape{rows, cols});
  for (int r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols)
      throw Error::numeric("cw_rows: label " + std::to_string(labels[r]) + " out of range");
    mask[static_cast<int64_t>(r) * cols + labels[r]] = -1e9f;
  }
  return sub(rowmax(add(logits, constant(std::move(mask)))), gather_cols(logits, labels));
}

}  // namespace st

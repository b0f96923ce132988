#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace st {

// Discrepancy functions between probability vectors. kl is the plain
// (asymmetric) divergence used by TRADES-style terms; the other three are
// the symmetric candidates for the squeeze regularizer.
enum class RegKind { kKl, kSymKl, kJs, kSqL2 };

std::string reg_kind_name(RegKind kind);
RegKind reg_kind_from_name(const std::string& name);
bool reg_is_symmetric(RegKind kind);

// Probabilities are clamped to >= kProbFloor before any log.
inline constexpr double kProbFloor = 1e-12;

// Numeric forms, computed in double. Inputs are raw probability vectors of
// equal length (softmax outputs).
double kl(std::span<const float> p, std::span<const float> q);
double reg_loss(RegKind kind, std::span<const float> p, std::span<const float> q);

// -log softmax(logits)[label], double log-sum-exp with max subtraction.
double cross_entropy(const Tensor& logits_row, int label);

// Graph builders. Probability arguments are expressions with rows summing
// to one (softmax_rows outputs); results are per-row vectors of shape (B).
Expr ce_rows(const Expr& logits, std::vector<int> labels);
Expr kl_rows(const Expr& p, const Expr& q);
Expr reg_rows(RegKind kind, const Expr& p, const Expr& q);
// Per-row C&W margin: max over non-label logits minus the label logit.
Expr cw_rows(const Expr& logits, const std::vector<int>& labels);

}  // namespace st

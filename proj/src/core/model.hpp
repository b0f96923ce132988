#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace st {

// Desk-scale classifiers f: X -> R^C. `mlp` flattens the input and applies
// dense+relu blocks; `small_cnn` is conv3x3/relu/pool twice, then one dense
// layer.
struct ModelSpec {
  enum class Kind { kMlp, kSmallCnn };

  Kind kind = Kind::kMlp;
  Shape input_shape;            // per-example, e.g. {1,28,28} or {2}
  std::vector<int> hidden;      // mlp hidden widths (may be empty: linear model)
  std::vector<int> channels;    // small_cnn conv channels, exactly 2 entries
  int classes = 0;

  static ModelSpec mlp(Shape input, std::vector<int> hidden, int classes);
  static ModelSpec small_cnn(Shape input, std::vector<int> channels, int classes);

  int64_t input_size() const { return numel(input_shape); }
  void validate() const;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& json);
  bool operator==(const ModelSpec&) const = default;
};

using Parameters = std::map<std::string, Tensor>;

// Kaiming-uniform fan-in weights, zero biases. Each parameter draws from its
// own stream keyed by (seed, name), so results do not depend on map order.
Parameters init_params(const ModelSpec& spec, uint64_t seed);

// Shapes the spec assigns to every parameter, keyed by name.
std::map<std::string, Shape> param_shapes(const ModelSpec& spec);

// Graph builder: logits expression over an x slot of shape (batch, ...) and
// one input slot per parameter. Callers may pass pre-built parameter slots
// so two submodels share them (gradients then accumulate).
Expr build_logits(const ModelSpec& spec, const Expr& x,
                  const std::map<std::string, Expr>& params);
std::map<std::string, Expr> param_exprs(const ModelSpec& spec);
Expr input_batch(const ModelSpec& spec, const std::string& name, int batch);

// Convenience direct evaluation.
Tensor logits(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch);
Tensor probs(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch);
std::vector<int> predict(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch);

Bindings bind_params(const Parameters& params);
std::vector<std::string> param_names(const ModelSpec& spec);

}  // namespace st

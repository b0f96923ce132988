#include "core/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace st {

using nlohmann::json;

ModelSpec ModelSpec::mlp(Shape input, std::vector<int> hidden, int classes) {
  ModelSpec s;
  s.kind = Kind::kMlp;
  s.input_shape = std::move(input);
  s.hidden = std::move(hidden);
  s.classes = classes;
  s.validate();
  return s;
}

ModelSpec ModelSpec::small_cnn(Shape input, std::vector<int> channels, int classes) {
  ModelSpec s;
  s.kind = Kind::kSmallCnn;
  s.input_shape = std::move(input);
  s.channels = std::move(channels);
  s.classes = classes;
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  if (classes < 2) throw Error::usage("model: class count must be >= 2");
  if (input_shape.empty()) throw Error::usage("model: empty input shape");
  for (int d : input_shape)
    if (d <= 0) throw Error::usage("model: input dims must be positive");
  if (kind == Kind::kMlp) {
    for (int w : hidden)
      if (w <= 0) throw Error::usage("model: mlp widths must be positive");
  } else {
    if (channels.size() != 2 || channels[0] <= 0 || channels[1] <= 0)
      throw Error::usage("model: small_cnn needs two positive channel counts");
    if (input_shape.size() != 3)
      throw Error::usage("model: small_cnn expects (C,H,W) input");
    if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
      throw Error::usage("model: small_cnn input H,W must be divisible by 4");
  }
}

std::map<std::string, Shape> param_shapes(const ModelSpec& spec) {
  std::map<std::string, Shape> shapes;
  if (spec.kind == ModelSpec::Kind::kMlp) {
    int prev = static_cast<int>(spec.input_size());
    for (size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string base = "fc" + std::to_string(i + 1);
      shapes[base + ".w"] = Shape{prev, spec.hidden[i]};
      shapes[base + ".b"] = Shape{spec.hidden[i]};
      prev = spec.hidden[i];
    }
    shapes["out.w"] = Shape{prev, spec.classes};
    shapes["out.b"] = Shape{spec.classes};
  } else {
    const int cin = spec.input_shape[0];
    const int h = spec.input_shape[1], w = spec.input_shape[2];
    shapes["conv1.w"] = Shape{spec.channels[0], cin, 3, 3};
    shapes["conv1.b"] = Shape{spec.channels[0]};
    shapes["conv2.w"] = Shape{spec.channels[1], spec.channels[0], 3, 3};
    shapes["conv2.b"] = Shape{spec.channels[1]};
    const int flat = spec.channels[1] * (h / 4) * (w / 4);
    shapes["out.w"] = Shape{flat, spec.classes};
    shapes["out.b"] = Shape{spec.classes};
  }
  return shapes;
}

std::vector<std::string> param_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (const auto& [name, shape] : param_shapes(spec)) names.push_back(name);
  return names;
}

Parameters init_params(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Parameters params;
  for (const auto& [name, shape] : param_shapes(spec)) {
    Tensor t(shape);
    const bool is_weight = name.ends_with(".w");
    if (is_weight) {
      int64_t fan_in;
      if (shape.size() == 2) {
        fan_in = shape[0];
      } else {  // conv (co,ci,kh,kw)
        fan_in = static_cast<int64_t>(shape[1]) * shape[2] * shape[3];
      }
      const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
      Rng rng(derive_stream(seed, fnv1a64(name)));
      for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

Expr input_batch(const ModelSpec& spec, const std::string& name, int batch) {
  Shape s{batch};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return input(name, std::move(s));
}

std::map<std::string, Expr> param_exprs(const ModelSpec& spec) {
  std::map<std::string, Expr> slots;
  for (const auto& [name, shape] : param_shapes(spec)) slots.emplace(name, input(name, shape));
  return slots;
}

Expr build_logits(const ModelSpec& spec, const Expr& x,
                  const std::map<std::string, Expr>& params) {
  const int batch = x->shape[0];
  if (spec.kind == ModelSpec::Kind::kMlp) {
    Expr h = x;
    if (h->shape.size() != 2) h = reshape(h, Shape{batch, static_cast<int>(spec.input_size())});
    for (size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string base = "fc" + std::to_string(i + 1);
      h = relu(bias_rows(matmul(h, params.at(base + ".w")), params.at(base + ".b")));
    }
    return bias_rows(matmul(h, params.at("out.w")), params.at("out.b"));
  }
  Expr h = x;
  h = maxpool2(relu(bias_chan(conv2d(h, params.at("conv1.w"), 1), params.at("conv1.b"))));
  h = maxpool2(relu(bias_chan(conv2d(h, params.at("conv2.w"), 1), params.at("conv2.b"))));
  const int flat = static_cast<int>(numel(h->shape)) / batch;
  h = reshape(h, Shape{batch, flat});
  return bias_rows(matmul(h, params.at("out.w")), params.at("out.b"));
}

Bindings bind_params(const Parameters& params) {
  Bindings b;
  for (const auto& [name, t] : params) b.emplace(name, t);
  return b;
}

Tensor logits(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch) {
  Shape expect{x_batch.dim(0)};
  expect.insert(expect.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (x_batch.shape() != expect)
    throw Error::numeric("logits: input shape " + shape_str(x_batch.shape()) +
                         " does not match model input " + shape_str(expect));
  const auto slots = param_exprs(spec);
  const Expr x = input_batch(spec, "x", x_batch.dim(0));
  const Expr out = build_logits(spec, x, slots);
  Bindings b = bind_params(params);
  b.emplace("x", x_batch);
  return forward(out, b);
}

Tensor probs(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch) {
  const auto slots = param_exprs(spec);
  const Expr x = input_batch(spec, "x", x_batch.dim(0));
  const Expr out = softmax_rows(build_logits(spec, x, slots));
  Bindings b = bind_params(params);
  b.emplace("x", x_batch);
  return forward(out, b);
}

std::vector<int> predict(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch) {
  const Tensor lg = logits(spec, params, x_batch);
  const int batch = lg.dim(0), classes = lg.dim(1);
  std::vector<int> out(static_cast<size_t>(batch));
  for (int r = 0; r < batch; ++r) {
    const float* row = lg.data() + static_cast<int64_t>(r) * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

std::string ModelSpec::to_json() const {
  json j;
  j["kind"] = kind == Kind::kMlp ? "mlp" : "small_cnn";
  j["input"] = input_shape;
  j["hidden"] = hidden;
  j["channels"] = channels;
  j["classes"] = classes;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error::data(std::string("model spec: bad json: ") + e.what());
  }
  ModelSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp") {
    s.kind = Kind::kMlp;
  } else if (kind == "small_cnn") {
    s.kind = Kind::kSmallCnn;
  } else {
    throw Error::data("model spec: unknown kind '" + kind + "'");
  }
  s.input_shape = j.at("input").get<Shape>();
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.channels = j.at("channels").get<std::vector<int>>();
  s.classes = j.at("classes").get<int>();
  s.validate();
  return s;
}

}  // namespace st

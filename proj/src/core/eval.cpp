#include "core/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>

#include "core/divergence.hpp"
#include "core/error.hpp"
#include "core/metrics.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"
#include "core/squeeze.hpp"

namespace st {

namespace {

constexpr int kChunk = 256;  // evaluation batch size

}  // namespace

float accuracy(const ModelSpec& spec, const Parameters& params, const Tensor& inputs,
               const std::vector<int>& labels, int workers) {
  const int n = inputs.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw Error::numeric("accuracy: label count does not match inputs");
  std::vector<long long> correct(static_cast<size_t>(std::max(1, workers)), 0);
  parallel_rows(n, workers, [&](int lo, int hi, int shard) {
    long long ok = 0;
    for (int start = lo; start < hi; start += kChunk) {
      const int count = std::min(kChunk, hi - start);
      const Tensor x = rows_slice(inputs, start, start + count);
      const std::vector<int> pred = predict(spec, params, x);
      for (int i = 0; i < count; ++i)
        if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(start + i)]) ++ok;
    }
    correct[static_cast<size_t>(shard)] = ok;
  });
  long long total = 0;
  for (long long c : correct) total += c;
  return static_cast<float>(total) / static_cast<float>(n);
}

RobustReport robust_eval(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         const std::vector<NamedAttack>& attacks, int workers) {
  if (data.size() == 0) throw Error::data("robust_eval: empty dataset");
  RobustReport report;
  report.attacks = attacks;
  report.clean_acc = accuracy(spec, params, data.inputs, data.labels, workers);
  for (const auto& atk : attacks) {
    const CraftedBatch crafted =
        craft(spec, params, data.inputs, data.labels, atk.cfg, nullptr, workers);
    report.robust.emplace_back(atk.name,
                               accuracy(spec, params, crafted.examples, data.labels, workers));
  }
  return report;
}

ValleyCurve valley_curve(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         std::vector<float> budgets, int steps, float alpha, int workers) {
  if (budgets.empty()) throw Error::usage("valley_curve: no budgets");
  for (size_t i = 0; i + 1 < budgets.size(); ++i)
    if (budgets[i] >= budgets[i + 1])
      throw Error::usage("valley_curve: budgets must be strictly increasing");
  if (budgets.front() < 0.0f) throw Error::usage("valley_curve: negative budget");
  if (budgets.front() != 0.0f) budgets.insert(budgets.begin(), 0.0f);

  ValleyCurve curve;
  curve.budgets = budgets;
  for (float eps : budgets) {
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.alpha = alpha;
    cfg.steps = steps;
    cfg.start = AttackStart::kBenign;
    cfg.loss = AttackLoss::kCe;
    cfg.direction = AttackDirection::kDescend;
    const CraftedBatch crafted =
        craft(spec, params, data.inputs, data.labels, cfg, nullptr, workers);
    double sum = 0.0;
    for (float v : crafted.final_loss) sum += v;
    const double m = sum / static_cast<double>(crafted.final_loss.size());
    double var = 0.0;
    for (float v : crafted.final_loss) var += (v - m) * (v - m);
    var /= static_cast<double>(crafted.final_loss.size());
    curve.mean_ce.push_back(static_cast<float>(m));
    curve.std_ce.push_back(static_cast<float>(std::sqrt(var)));
  }
  return curve;
}

RatioCounts collab_ratio_probe(const ModelSpec& spec, const Parameters& params,
                               const Dataset& data, const KlInnerConfig& inner, int workers) {
  if (data.size() == 0) throw Error::data("collab_ratio_probe: empty dataset");
  const Tensor neighbors = kl_ascent(spec, params, data.inputs, inner, nullptr, workers);
  const std::vector<NeighborClass> classes =
      classify_neighbor(spec, params, data.inputs, data.labels, neighbors);
  RatioCounts counts;
  for (NeighborClass c : classes) {
    switch (c) {
      case NeighborClass::kCollaborative: ++counts.collaborative; break;
      case NeighborClass::kAdversarial: ++counts.adversarial; break;
      case NeighborClass::kNeutral: ++counts.neutral; break;
    }
  }
  counts.ratio = static_cast<double>(counts.collaborative) / static_cast<double>(data.size());
  return counts;
}

std::optional<double> angle_between_deg(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error::numeric("angle_between_deg: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c) * (180.0 / 3.14159265358979323846);
}

AngleHistogram perturbation_angles(const ModelSpec& spec, const Parameters& params,
                                   const Dataset& data, const AttackConfig& adv_cfg,
                                   const AttackConfig& col_cfg, int bins, int workers) {
  if (adv_cfg.epsilon != col_cfg.epsilon)
    throw Error::usage("perturbation_angles: configs must share epsilon");
  if (bins < 1) throw Error::usage("perturbation_angles: bins must be >= 1");
  const CraftedBatch adv = craft(spec, params, data.inputs, data.labels, adv_cfg, nullptr, workers);
  const CraftedBatch col = craft(spec, params, data.inputs, data.labels, col_cfg, nullptr, workers);

  AngleHistogram hist;
  hist.bin_width = 180.0 / bins;
  hist.bin_counts.assign(static_cast<size_t>(bins), 0);
  hist.adv_steps = adv_cfg.steps;
  hist.col_steps = col_cfg.steps;
  const int n = data.size();
  const int64_t per = data.inputs.size() / n;
  for (int i = 0; i < n; ++i) {
    const std::span<const float> da(adv.perturbation.data() + i * per, static_cast<size_t>(per));
    const std::span<const float> dc(col.perturbation.data() + i * per, static_cast<size_t>(per));
    const std::optional<double> angle = angle_between_deg(da, dc);
    if (!angle) {
      ++hist.skipped;
      continue;
    }
    hist.angles_deg.push_back(*angle);
    int bin = static_cast<int>(*angle / hist.bin_width);
    bin = std::min(bin, bins - 1);
    ++hist.bin_counts[static_cast<size_t>(bin)];
  }
  return hist;
}

LandscapeSlice landscape_slice(const ModelSpec& spec, const Parameters& params,
                               const Tensor& x_row, int y, const AttackConfig& u_cfg, int grid,
                               float extent, uint64_t v_seed, int workers) {
  if (grid < 2) throw Error::usage("landscape_slice: grid must be >= 2");
  if (x_row.rank() < 1 || x_row.dim(0) != 1)
    throw Error::usage("landscape_slice: expects a single-example batch");
  AttackConfig cfg = u_cfg;
  cfg.direction = AttackDirection::kDescend;
  cfg.loss = AttackLoss::kCe;
  const CraftedBatch col = craft(spec, params, x_row, {y}, cfg);

  const int64_t d = x_row.size();
  std::vector<double> u(static_cast<size_t>(d));
  double norm = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    u[static_cast<size_t>(i)] = col.perturbation[i];
    norm += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
  }
  norm = std::sqrt(norm);
  if (norm == 0.0)
    throw Error::numeric(
        "landscape_slice: degenerate direction (collaborative crafting produced a zero "
        "perturbation)");
  for (auto& v : u) v /= norm;

  // Random v, Gram-Schmidt against u, redrawn on degeneracy.
  std::vector<double> v(static_cast<size_t>(d));
  Rng rng(derive_stream(v_seed, 0x1a2b3cull));
  for (int attempt = 0; attempt < 16; ++attempt) {
    for (auto& e : v) e = rng.gaussian();
    double dot = 0.0;
    for (int64_t i = 0; i < d; ++i) dot += v[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
    double vn = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      v[static_cast<size_t>(i)] -= dot * u[static_cast<size_t>(i)];
      vn += v[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
    }
    vn = std::sqrt(vn);
    if (vn > 1e-8) {
      for (auto& e : v) e /= vn;
      break;
    }
    if (attempt == 15) throw Error::numeric("landscape_slice: could not draw an orthogonal v");
  }

  LandscapeSlice slice;
  slice.grid = grid;
  for (int64_t i = 0; i < d; ++i) slice.uv_dot += u[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
  slice.axis.resize(static_cast<size_t>(grid));
  for (int i = 0; i < grid; ++i) {
    // symmetric axis with an exact 0 at the center of odd grids
    slice.axis[static_cast<size_t>(i)] =
        extent * (static_cast<float>(2 * i - (grid - 1)) / static_cast<float>(grid - 1));
  }

  // CE over the grid. Cells are evaluated as single-example batches so the
  // center cell goes through exactly the evaluation path of the benign
  // example itself.
  slice.ce.assign(static_cast<size_t>(grid) * grid, 0.0f);
  std::vector<std::pair<int, int>> cells;
  cells.reserve(slice.ce.size());
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) cells.emplace_back(i, j);

  parallel_rows(static_cast<int>(cells.size()), workers, [&](int lo, int hi, int) {
    Tensor point(x_row.shape());
    const std::vector<int> ys{y};
    for (int k = lo; k < hi; ++k) {
      const auto [i, j] = cells[static_cast<size_t>(k)];
      const float a = slice.axis[static_cast<size_t>(i)];
      const float b = slice.axis[static_cast<size_t>(j)];
      for (int64_t t = 0; t < d; ++t) {
        const float val = x_row[t] + a * static_cast<float>(u[static_cast<size_t>(t)]) +
                          b * static_cast<float>(v[static_cast<size_t>(t)]);
        point[t] = std::min(1.0f, std::max(0.0f, val));
      }
      slice.ce[static_cast<size_t>(i) * grid + j] = ce_values(spec, params, point, ys)[0];
    }
  });
  return slice;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error::data("cannot write '" + path + "'");
  return f;
}

}  // namespace

void write_report_csv(const std::string& path, const RobustReport& report) {
  std::ofstream f = open_out(path);
  f << "attack,accuracy,epsilon,alpha,steps,start,loss\n";
  f << "clean," << format_g6(report.clean_acc) << ",,,,,\n";
  for (size_t i = 0; i < report.robust.size(); ++i) {
    const auto& [name, acc] = report.robust[i];
    const AttackConfig& cfg = report.attacks[i].cfg;
    f << name << "," << format_g6(acc) << "," << format_g6(cfg.epsilon) << ","
      << format_g6(cfg.alpha) << "," << cfg.steps << ","
      << (cfg.start == AttackStart::kBenign ? "benign" : "random") << ","
      << (cfg.loss == AttackLoss::kCe ? "ce" : "cw") << "\n";
  }
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

void write_valley_csv(const std::string& path, const ValleyCurve& curve) {
  std::ofstream f = open_out(path);
  f << "budget,mean_ce,std_ce\n";
  for (size_t i = 0; i < curve.budgets.size(); ++i) {
    f << format_g6(curve.budgets[i]) << "," << format_g6(curve.mean_ce[i]) << ","
      << format_g6(curve.std_ce[i]) << "\n";
  }
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

void write_angles_csv(const std::string& path, const AngleHistogram& hist) {
  std::ofstream f = open_out(path);
  f << "# adv_steps=" << hist.adv_steps << " col_steps=" << hist.col_steps
    << " skipped=" << hist.skipped << "\n";
  f << "bin_lo,bin_hi,count\n";
  for (size_t i = 0; i < hist.bin_counts.size(); ++i) {
    f << format_g6(hist.bin_width * static_cast<double>(i)) << ","
      << format_g6(hist.bin_width * static_cast<double>(i + 1)) << "," << hist.bin_counts[i]
      << "\n";
  }
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

void write_landscape_csv(const std::string& path, const LandscapeSlice& slice) {
  std::ofstream f = open_out(path);
  f << "a,b,ce\n";
  for (int i = 0; i < slice.grid; ++i)
    for (int j = 0; j < slice.grid; ++j) {
      f << format_g6(slice.axis[static_cast<size_t>(i)]) << ","
        << format_g6(slice.axis[static_cast<size_t>(j)]) << ","
        << format_g6(slice.ce[static_cast<size_t>(i) * slice.grid + j]) << "\n";
    }
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

}  // namespace st

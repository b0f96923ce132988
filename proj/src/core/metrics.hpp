#pragma once

#include <map>
#include <string>
#include <vector>

namespace st {

// Per-epoch training metrics. Epoch 0 is the pre-training evaluation, so
// its train_loss is absent (NaN, printed as an empty field). Wall-clock is
// kept for reporting but never serialized: metrics files are byte-identical
// across same-seed runs.
struct MetricsRecord {
  int epoch = 0;
  float lr = 0.0f;
  float train_loss = 0.0f;
  bool has_train_loss = false;
  float clean_acc = 0.0f;
  float pgd20_acc = 0.0f;
  std::map<std::string, float> attack_accs;  // optional per-attack accuracies
  float collab_ratio = 0.0f;
  bool has_collab_ratio = false;
  double wall_seconds = 0.0;
};

// Header row, then one row per record; floats printed with 6 significant
// digits; column order is fixed (optional columns empty when absent).
void write_metrics(const std::string& path, const std::vector<MetricsRecord>& series);
std::vector<MetricsRecord> read_metrics(const std::string& path);

std::string format_g6(double v);

}  // namespace st

#include "core/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "core/error.hpp"

namespace st {

std::string format_g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<std::string> attack_columns(const std::vector<MetricsRecord>& series) {
  std::set<std::string> names;
  for (const auto& r : series)
    for (const auto& [name, acc] : r.attack_accs) names.insert(name);
  return {names.begin(), names.end()};
}

}  // namespace

void write_metrics(const std::string& path, const std::vector<MetricsRecord>& series) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error::data("cannot write '" + path + "'");
  const std::vector<std::string> extra = attack_columns(series);
  f << "epoch,lr,train_loss,clean_acc,pgd20_acc";
  for (const auto& name : extra) f << "," << name << "_acc";
  f << ",collab_ratio\n";
  for (const auto& r : series) {
    f << r.epoch << "," << format_g6(r.lr) << ",";
    if (r.has_train_loss) f << format_g6(r.train_loss);
    f << "," << format_g6(r.clean_acc) << "," << format_g6(r.pgd20_acc);
    for (const auto& name : extra) {
      f << ",";
      auto it = r.attack_accs.find(name);
      if (it != r.attack_accs.end()) f << format_g6(it->second);
    }
    f << ",";
    if (r.has_collab_ratio) f << format_g6(r.collab_ratio);
    f << "\n";
  }
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error::data("cannot open '" + path + "'");
  std::string header;
  if (!std::getline(f, header)) throw Error::data("metrics '" + path + "': empty file");
  const std::vector<std::string> cols = split_csv(header);
  if (cols.size() < 6 || cols[0] != "epoch")
    throw Error::data("metrics '" + path + "': unexpected header");

  std::vector<MetricsRecord> series;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != cols.size())
      throw Error::data("metrics '" + path + "': row with " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(cols.size()));
    MetricsRecord r;
    r.epoch = std::stoi(fields[0]);
    r.lr = std::stof(fields[1]);
    r.has_train_loss = !fields[2].empty();
    if (r.has_train_loss) r.train_loss = std::stof(fields[2]);
    r.clean_acc = std::stof(fields[3]);
    r.pgd20_acc = std::stof(fields[4]);
    for (size_t i = 5; i + 1 < cols.size(); ++i) {
      if (fields[i].empty()) continue;
      std::string name = cols[i];
      if (name.size() > 4 && name.ends_with("_acc")) name.resize(name.size() - 4);
      r.attack_accs[name] = std::stof(fields[i]);
    }
    r.has_collab_ratio = !fields.back().empty();
    if (r.has_collab_ratio) r.collab_ratio = std::stof(fields.back());
    series.push_back(std::move(r));
  }
  return series;
}

}  // namespace st

#include "squeezetrain.h"

#include <cstring>
#include <string>

#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/runner.hpp"

namespace {

thread_local std::string g_last_error;

st_status fail(st_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

st_status from_error(const st::Error& e) {
  switch (e.kind()) {
    case st::ErrorKind::kUsage: return fail(ST_ERR_USAGE, e.what());
    case st::ErrorKind::kData: return fail(ST_ERR_DATA, e.what());
    case st::ErrorKind::kNumeric: return fail(ST_ERR_NUMERIC, e.what());
  }
  return fail(ST_ERR_NUMERIC, e.what());
}

template <typename Fn>
st_status guard(Fn&& fn) {
  try {
    fn();
    return ST_OK;
  } catch (const st::Error& e) {
    return from_error(e);
  } catch (const std::exception& e) {
    return fail(ST_ERR_NUMERIC, e.what());
  }
}

}  // namespace

struct st_config {
  st::RunConfig cfg;
};

struct st_dataset {
  st::Dataset data;
};

struct st_model {
  st::Checkpoint checkpoint;
  st::ModelSpec spec;
  st::Parameters params;
};

extern "C" {

const char* st_version(void) { return "squeezetrain 1.0.0"; }

const char* st_last_error(void) { return g_last_error.c_str(); }

st_config* st_config_new(void) { return new st_config(); }

void st_config_free(st_config* cfg) { delete cfg; }

st_status st_config_load_file(st_config* cfg, const char* path) {
  if (!cfg || !path) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] {
    st::RunConfig loaded = st::RunConfig::from_file(path);
    // file values fill unset keys only: flags already set win
    for (const auto& [key, value] : loaded.entries())
      if (!cfg->cfg.has(key)) cfg->cfg.set(key, value);
  });
}

st_status st_config_set(st_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { cfg->cfg.set(key, value); });
}

st_status st_config_get(const st_config* cfg, const char* key, char* buf, size_t buf_size) {
  if (!cfg || !key || !buf || buf_size == 0) return fail(ST_ERR_USAGE, "null argument");
  if (!cfg->cfg.has(key)) return fail(ST_ERR_USAGE, std::string("key not set: ") + key);
  const std::string v = cfg->cfg.get_str(key, "");
  if (v.size() + 1 > buf_size) return fail(ST_ERR_USAGE, "buffer too small");
  std::memcpy(buf, v.c_str(), v.size() + 1);
  return ST_OK;
}

st_status st_dataset_open(const st_config* cfg, const char* role, st_dataset** out) {
  if (!cfg || !role || !out) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] {
    const std::string r = role;
    if (r != "train" && r != "test")
      throw st::Error::usage("dataset role must be 'train' or 'test'");
    auto* d = new st_dataset();
    d->data = st::open_dataset(st::resolve(cfg->cfg), r);
    *out = d;
  });
}

void st_dataset_free(st_dataset* data) { delete data; }

int64_t st_dataset_size(const st_dataset* data) { return data ? data->data.size() : 0; }

int st_dataset_classes(const st_dataset* data) { return data ? data->data.classes : 0; }

st_status st_model_load(const char* path, st_model** out) {
  if (!path || !out) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] {
    auto* m = new st_model();
    m->checkpoint = st::load_checkpoint(path);
    try {
      m->spec = st::checkpoint_spec(m->checkpoint);
      m->params = st::checkpoint_params(m->checkpoint);
    } catch (...) {
      delete m;
      throw;
    }
    *out = m;
  });
}

void st_model_free(st_model* model) { delete model; }

st_status st_model_save(const st_model* model, const char* path) {
  if (!model || !path) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::save_checkpoint(path, model->checkpoint); });
}

st_status st_model_accuracy(const st_model* model, const st_dataset* data, double* accuracy) {
  if (!model || !data || !accuracy) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] {
    *accuracy = st::accuracy(model->spec, model->params, data->data.inputs, data->data.labels);
  });
}

st_status st_run_train(const st_config* cfg, const char* out_dir) {
  if (!cfg || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_train(cfg->cfg, out_dir); });
}

st_status st_run_eval(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_eval(cfg->cfg, checkpoint, out_dir); });
}

st_status st_run_attack(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_attack(cfg->cfg, checkpoint, out_dir); });
}

st_status st_run_valley(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_valley(cfg->cfg, checkpoint, out_dir); });
}

st_status st_run_ratio(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_ratio(cfg->cfg, checkpoint, out_dir); });
}

st_status st_run_angle(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_angle(cfg->cfg, checkpoint, out_dir); });
}

st_status st_run_landscape(const st_config* cfg, const char* checkpoint, const char* out_dir) {
  if (!cfg || !checkpoint || !out_dir) return fail(ST_ERR_USAGE, "null argument");
  return guard([&] { st::run_landscape(cfg->cfg, checkpoint, out_dir); });
}

}  // extern "C"

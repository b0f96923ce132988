/* Squeeze-training toolkit: C API over the C++ core.
 *
 * All functions return st_status; on failure st_last_error() holds a
 * thread-local message. Handles are opaque and freed by their *_free
 * function. Run functions write their outputs (CSV / STCK files plus a
 * config_resolved.txt echo) under out_dir.
 */
#ifndef SQUEEZETRAIN_H
#define SQUEEZETRAIN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum st_status {
  ST_OK = 0,
  ST_ERR_USAGE = 1,   /* bad arguments, unknown config keys */
  ST_ERR_DATA = 2,    /* file/format errors */
  ST_ERR_NUMERIC = 3  /* numeric failures */
} st_status;

const char* st_version(void);
const char* st_last_error(void);

/* ---- configuration ---- */
typedef struct st_config st_config;

st_config* st_config_new(void);
void st_config_free(st_config* cfg);
st_status st_config_load_file(st_config* cfg, const char* path);
st_status st_config_set(st_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated). Missing key -> ST_ERR_USAGE. */
st_status st_config_get(const st_config* cfg, const char* key, char* buf, size_t buf_size);

/* ---- datasets ---- */
typedef struct st_dataset st_dataset;

/* role is "train" or "test"; sources and sizes come from the config. */
st_status st_dataset_open(const st_config* cfg, const char* role, st_dataset** out);
void st_dataset_free(st_dataset* data);
int64_t st_dataset_size(const st_dataset* data);
int st_dataset_classes(const st_dataset* data);

/* ---- model checkpoints ---- */
typedef struct st_model st_model;

st_status st_model_load(const char* path, st_model** out);
void st_model_free(st_model* model);
st_status st_model_save(const st_model* model, const char* path);
/* Clean accuracy of the model on a dataset, written to *accuracy. */
st_status st_model_accuracy(const st_model* model, const st_dataset* data, double* accuracy);

/* ---- runs (the CLI subcommands) ---- */
st_status st_run_train(const st_config* cfg, const char* out_dir);
st_status st_run_eval(const st_config* cfg, const char* checkpoint, const char* out_dir);
st_status st_run_attack(const st_config* cfg, const char* checkpoint, const char* out_dir);
st_status st_run_valley(const st_config* cfg, const char* checkpoint, const char* out_dir);
st_status st_run_ratio(const st_config* cfg, const char* checkpoint, const char* out_dir);
st_status st_run_angle(const st_config* cfg, const char* checkpoint, const char* out_dir);
st_status st_run_landscape(const st_config* cfg, const char* checkpoint, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* SQUEEZETRAIN_H */

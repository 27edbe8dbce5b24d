/* packetclip: traffic-semantics toolkit — C API.
 *
 * Opaque handles plus integer status codes; every function that can fail
 * takes a char** err out-parameter which, when set, carries a malloc'd
 * message to be released with pc_string_free.
 */
#ifndef PACKETCLIP_H_
#define PACKETCLIP_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pc_status {
  PC_OK = 0,
  PC_ERR_IO = 1,
  PC_ERR_UNSUPPORTED_FORMAT = 2,
  PC_ERR_CORRUPT_CAPTURE = 3,
  PC_ERR_SCHEMA = 4,
  PC_ERR_ROW = 5,
  PC_ERR_TEMPLATE = 6,
  PC_ERR_PROVIDER = 7,
  PC_ERR_CONFIG = 8,
  PC_ERR_SHAPE = 9,
  PC_ERR_GRAPH = 10,
  PC_ERR_METRIC = 11,
  PC_ERR_STATE = 12,
  PC_ERR_NUMERIC = 13,
  PC_ERR_UNKNOWN = 14
} pc_status;

typedef struct pc_config_t pc_config_t;
typedef struct pc_scorer_t pc_scorer_t;

const char* pc_version(void);
void pc_string_free(char* s);

/* Config: one declarative key = value file. */
pc_status pc_config_open(const char* path, pc_config_t** out, char** err);
pc_status pc_config_parse(const char* text, pc_config_t** out, char** err);
void pc_config_close(pc_config_t* cfg);
pc_status pc_config_set(pc_config_t* cfg, const char* key, const char* value, char** err);
/* value_out is malloc'd; empty string when the key is absent. */
pc_status pc_config_get(const pc_config_t* cfg, const char* key, char** value_out, char** err);

/* Stages: ingest, kg, corpus, pretrain, train, evaluate, plus infer. */
pc_status pc_run_stage(const pc_config_t* cfg, const char* stage, const char* out_dir,
                       char** err);
/* All six pipeline stages in order; resume != 0 skips stages whose manifest
 * entry matches the current config hash and artifact hashes.
 * executed_csv (optional) receives the comma-separated executed stage list. */
pc_status pc_run_pipeline(const pc_config_t* cfg, const char* out_dir, int resume,
                          char** executed_csv, char** err);

/* Standalone mission-graph generation; provider_kind is "stub" or "http". */
pc_status pc_kg_generate(const char* mission, int v, int n, const char* provider_kind,
                         const char* endpoint, uint64_t seed, const char* out_path, char** err);

/* Data-scarcity sweep; fractions_csv like "1.0,0.7,0.5,0.4,0.3" (NULL for the
 * configured/default set). Writes sweep.json and sweep.csv under out_dir. */
pc_status pc_sweep(const pc_config_t* cfg, const char* out_dir, const char* fractions_csv,
                   char** err);

/* Parameter/FLOP accounting for the configured model shape (JSON out). */
pc_status pc_cost(const pc_config_t* cfg, char** json_out, char** err);

/* Renders evaluation artifacts in out_dir as text tables. */
pc_status pc_report(const char* artifact_dir, char** text_out, char** err);

/* Streaming scorer over a trained artifact directory (model.json, heads.json,
 * kgs.json). Push packets in time order; each push returns the class
 * probability vector for the current packet. */
pc_status pc_scorer_open(const char* artifact_dir, pc_scorer_t** out, char** err);
void pc_scorer_close(pc_scorer_t* scorer);
pc_status pc_scorer_classes(const pc_scorer_t* scorer, char** csv_out, char** err);
pc_status pc_scorer_reset(pc_scorer_t* scorer);
pc_status pc_scorer_push(pc_scorer_t* scorer, const uint8_t* payload, size_t payload_len,
                         int64_t ts_us, double* scores_out, size_t scores_cap,
                         size_t* n_classes, char** err);

#ifdef __cplusplus
}
#endif

#endif /* PACKETCLIP_H_ */

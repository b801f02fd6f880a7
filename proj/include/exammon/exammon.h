#ifndef EXAMMON_EXAMMON_H
#define EXAMMON_EXAMMON_H

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define EXM_API __attribute__((visibility("default")))
#else
#define EXM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/*
 * exammon C interface.
 *
 * Every fallible call returns an exm_status; on failure a description of the
 * last error on the calling thread is available from exm_last_error_message().
 * Strings returned through char** out-parameters are owned by the caller and
 * must be released with exm_string_free(). Handles are released with their
 * matching *_free function; passing NULL to any *_free is a no-op.
 *
 * Structured results (metrics, reports, snapshots) are returned as JSON text.
 */

typedef enum exm_status {
  EXM_OK = 0,
  EXM_INVALID_ARGUMENT = 1,
  EXM_IO_FAILURE = 2,
  EXM_EMPTY_INPUT = 3,
  EXM_MALFORMED_RECORD = 4,
  EXM_ALL_ZERO_LANDMARKS = 5,
  EXM_WRONG_POINT_COUNT = 6,
  EXM_OUT_OF_RANGE = 7,
  EXM_BAD_METADATA = 8,
  EXM_DEGENERATE_DIAGONAL = 9,
  EXM_BAD_DIMS = 10,
  EXM_DIM_MISMATCH = 11,
  EXM_EMPTY_DATASET = 12,
  EXM_NON_FINITE_LOSS = 13,
  EXM_CORRUPT_MODEL = 14,
  EXM_INVALID_RATIO = 15,
  EXM_BAD_SPEC = 16,
  EXM_SESSION_ENDED = 17,
  EXM_INVALID_TRANSITION = 18,
  EXM_CORRUPT_LOG = 19,
  EXM_MODEL_LOAD_FAILURE = 20,
  EXM_DUPLICATE_ROOM = 21,
  EXM_AUTH_FAILURE = 22,
  EXM_UNKNOWN_ROOM = 23,
  EXM_UNKNOWN_STUDENT = 24,
  EXM_STALE_SEQ = 25,
  EXM_CONNECT_FAILURE = 26,
  EXM_BAD_SCHEDULE = 27,
  EXM_INTERNAL = 28
} exm_status;

typedef enum exm_feature_mode {
  EXM_RAW478 = 0,
  EXM_RAW19 = 1,
  EXM_DIST171 = 2
} exm_feature_mode;

typedef struct exm_dataset exm_dataset;
typedef struct exm_model exm_model;
typedef struct exm_session exm_session;
typedef struct exm_server exm_server;

EXM_API const char* exm_version(void);
/* Stable name of a status, e.g. "AllZeroLandmarks". */
EXM_API const char* exm_status_name(exm_status status);
/* Message of the last failed call on this thread ("" if none). */
EXM_API const char* exm_last_error_message(void);
EXM_API void exm_string_free(char* s);

/* ---- features ---- */

/* "RAW478", "RAW19", "DIST171" (case-insensitive). */
EXM_API exm_status exm_parse_feature_mode(const char* name, exm_feature_mode* out);
EXM_API size_t exm_feature_dims(exm_feature_mode mode);

/* Validates one frame record (JSON text) and writes its features with the
 * default keypoint selection. *len receives the dimensionality; fails with
 * EXM_INVALID_ARGUMENT if capacity is too small. */
EXM_API exm_status exm_featurize_record(const char* frame_json, exm_feature_mode mode, double* out,
                                        size_t capacity, size_t* len);

/* Converts a frame file into one JSON feature record per valid frame:
 * {"id", "mode", "features", "label"?}. Invalid frames are skipped and
 * counted in *rejected. */
EXM_API exm_status exm_featurize_file(const char* frames_path, exm_feature_mode mode,
                                      const char* out_path, size_t* written, size_t* rejected);

/* ---- datasets ---- */

EXM_API exm_status exm_dataset_load(const char* path, exm_dataset** out, size_t* rejected);
/* spec_json keys (all optional): n, abnormal_ratio, theta_deg, jitter, seed,
 * width, height. NULL means defaults. */
EXM_API exm_status exm_dataset_synthesize(const char* spec_json, exm_dataset** out);
EXM_API exm_status exm_dataset_save(const exm_dataset* ds, const char* path);
EXM_API size_t exm_dataset_size(const exm_dataset* ds);
EXM_API size_t exm_dataset_count_label(const exm_dataset* ds, int abnormal);
EXM_API exm_status exm_dataset_split(const exm_dataset* ds, double ratio, uint64_t seed,
                                     exm_dataset** train, exm_dataset** val);
EXM_API void exm_dataset_free(exm_dataset* ds);

/* ---- classifier ---- */

/* Fresh model for the mode with the default [dims, 128, 64, 2] layers. */
EXM_API exm_status exm_model_init(exm_feature_mode mode, uint64_t seed, exm_model** out);
EXM_API exm_status exm_model_load(const char* path, exm_model** out);
EXM_API exm_status exm_model_save(const exm_model* model, const char* path);
EXM_API exm_feature_mode exm_model_feature_mode(const exm_model* model);
EXM_API size_t exm_model_parameter_count(const exm_model* model);
EXM_API void exm_model_free(exm_model* model);

/* Trains in place. config_json keys (all optional): epochs, lr, momentum,
 * batch, shuffle_seed, threshold, standardize. val may be NULL. On success
 * *result_json holds {"history": [...], "final": {...}} and, when history_csv
 * is non-NULL, the per-epoch CSV is written there. */
EXM_API exm_status exm_model_train(exm_model* model, const exm_dataset* train, const exm_dataset* val,
                                   const char* config_json, const char* history_csv,
                                   char** result_json);

/* Metrics JSON: accuracy, precision, recall, tp, fp, fn, tn. */
EXM_API exm_status exm_model_evaluate(const exm_model* model, const exm_dataset* ds, double threshold,
                                      char** metrics_json);

/* Classifies one feature vector (len must match the model). */
EXM_API exm_status exm_model_predict(const exm_model* model, const double* features, size_t len,
                                     double threshold, int* abnormal, double* p_abnormal);

/* Classifies one frame record (JSON text); featurizes as the model expects. */
EXM_API exm_status exm_model_predict_record(const exm_model* model, const char* frame_json,
                                            double threshold, int* abnormal, double* p_abnormal);

/* ---- sessions ---- */

/* policy_json keys (all optional): window_frames, cooldown_ms,
 * lock_threshold, reset_on_unlock. NULL means defaults. */
EXM_API exm_status exm_session_new(const char* student_id, const char* policy_json, exm_session** out);
/* Applies one verdict. *events_json (optional) receives the emitted events. */
EXM_API exm_status exm_session_observe(exm_session* s, int abnormal, double p_abnormal,
                                       const char* frame_id, int no_face, int64_t ts_ms,
                                       char** events_json);
EXM_API exm_status exm_session_unlock(exm_session* s, const char* actor, int64_t ts_ms,
                                      char** events_json);
EXM_API exm_status exm_session_end(exm_session* s, const char* actor, int64_t ts_ms, char** events_json);
/* {"student_id", "state", "violation_count", "consecutive_abnormal", ...} */
EXM_API exm_status exm_session_state(const exm_session* s, char** state_json);
/* The session's event log, one JSON event per line. */
EXM_API exm_status exm_session_log(const exm_session* s, char** ndjson);
/* Rebuilds a session from its NDJSON event log. */
EXM_API exm_status exm_session_replay(const char* ndjson, const char* student_id, const char* policy_json,
                                      exm_session** out);
EXM_API void exm_session_free(exm_session* s);

/* ---- monitor service ---- */

/* Replays a room log file into a roster snapshot JSON. horizon < 0 replays
 * everything. */
EXM_API exm_status exm_room_log_replay(const char* path, int64_t horizon, char** snapshot_json);

/* options_json keys (all optional): host, channel_port, http_port, data_dir,
 * fsync, queue_capacity. Listeners are bound and serving on return. */
EXM_API exm_status exm_server_start(const char* options_json, exm_server** out);
EXM_API uint16_t exm_server_channel_port(const exm_server* server);
EXM_API uint16_t exm_server_http_port(const exm_server* server);
/* room_json: {"room_id", "model_path", "policy"?, "threshold"?,
 * "tokens": {"student", "proctor"}}. */
EXM_API exm_status exm_server_create_room(exm_server* server, const char* room_json);
EXM_API exm_status exm_server_snapshot(const exm_server* server, const char* room_id,
                                       char** snapshot_json);
/* Stops listeners, closes connections and frees the server. */
EXM_API void exm_server_free(exm_server* server);

/* ---- load harness ---- */

/* config_json keys: host, port, room_id, token, clients, fps, duration_s,
 * seed, schedule (inline or JSON array), features (mode name), image_every,
 * drain_s. On success *report_json holds the report; when histogram_csv is
 * non-NULL the latency histogram is written there. */
EXM_API exm_status exm_run_load(const char* config_json, const char* histogram_csv, char** report_json);

#ifdef __cplusplus
}
#endif

#endif

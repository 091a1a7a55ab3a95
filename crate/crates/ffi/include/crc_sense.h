/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef CRC_SENSE_H
#define CRC_SENSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CRC_SENSE_FEATURE_PSD 0

#define CRC_SENSE_FEATURE_LV 1

#define CRC_SENSE_METHOD_PARAMETRIC 0

#define CRC_SENSE_METHOD_NONPARAMETRIC 1

#define CRC_SENSE_METHOD_CRC 2

typedef enum CrcSenseStatus {
  CRC_SENSE_STATUS_OK = 0,
  CRC_SENSE_STATUS_NULL_POINTER = 1,
  CRC_SENSE_STATUS_INVALID_ARGUMENT = 2,
  CRC_SENSE_STATUS_CONFIG = 3,
  CRC_SENSE_STATUS_IO = 4,
  CRC_SENSE_STATUS_MODEL_FORMAT = 5,
  CRC_SENSE_STATUS_RUNTIME = 6,
  CRC_SENSE_STATUS_BUFFER_TOO_SMALL = 7,
  CRC_SENSE_STATUS_PANIC = 8,
} CrcSenseStatus;

/**
 * Opaque run configuration.
 */
typedef struct CrcSenseConfig CrcSenseConfig;

/**
 * Opaque trained LV network.
 */
typedef struct CrcSenseLvModel CrcSenseLvModel;

/**
 * One (feature, method) outcome of a trial.
 */
typedef struct CrcSenseTrialRow {
  uint32_t feature;
  uint32_t method;
  double fnr;
  double tnr;
} CrcSenseTrialRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *crc_sense_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *crc_sense_last_error(void);

/**
 * New configuration holding the default operating point.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CrcSenseStatus crc_sense_config_paper(struct CrcSenseConfig **out);

/**
 * Parses a configuration from TOML text.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` must be valid for one write.
 */
enum CrcSenseStatus crc_sense_config_from_toml(const char *text, struct CrcSenseConfig **out);

/**
 * Loads a configuration file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid for one write.
 */
enum CrcSenseStatus crc_sense_config_load(const char *path, struct CrcSenseConfig **out);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void crc_sense_config_free(struct CrcSenseConfig *config);

/**
 * Subband count M of a configuration.
 *
 * # Safety
 * `config` must be a live handle and `out` valid for one write.
 */
enum CrcSenseStatus crc_sense_config_subbands(const struct CrcSenseConfig *config, size_t *out);

/**
 * Largest number of rows [`crc_sense_run_trial`] can produce for `config`.
 *
 * # Safety
 * `config` must be a live handle and `out` valid for one write.
 */
enum CrcSenseStatus crc_sense_config_rows_per_trial(const struct CrcSenseConfig *config,
                                                    size_t *out);

/**
 * Loads an LV model file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid for one write.
 */
enum CrcSenseStatus crc_sense_model_load(const char *path, struct CrcSenseLvModel **out);

/**
 * Trains an LV model with the signal, sampling and training settings of `config`.
 *
 * # Safety
 * `config` must be a live handle; `out` must be valid for one write.
 */
enum CrcSenseStatus crc_sense_model_train(const struct CrcSenseConfig *config,
                                          struct CrcSenseLvModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum CrcSenseStatus crc_sense_model_save(const struct CrcSenseLvModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void crc_sense_model_free(struct CrcSenseLvModel *model);

/**
 * Conformal risk control threshold shared by all subbands. May be -inf or +inf.
 *
 * # Safety
 * `features` and `occupancy` must hold `n_cal * m` elements; `out_gamma`
 * must be valid for one write.
 */
enum CrcSenseStatus crc_sense_crc_threshold(const double *features,
                                            const uint8_t *occupancy,
                                            size_t n_cal,
                                            size_t m,
                                            double alpha,
                                            double *out_gamma);

/**
 * Gaussian-fit thresholds, one per subband, written to `out_gammas[0..m]`.
 *
 * # Safety
 * As [`crc_sense_crc_threshold`]; `out_gammas` must hold `m` elements.
 */
enum CrcSenseStatus crc_sense_parametric_thresholds(const double *features,
                                                    const uint8_t *occupancy,
                                                    size_t n_cal,
                                                    size_t m,
                                                    double alpha,
                                                    double *out_gammas);

/**
 * Order-statistic thresholds, one per subband, written to `out_gammas[0..m]`.
 *
 * # Safety
 * As [`crc_sense_crc_threshold`]; `out_gammas` must hold `m` elements.
 */
enum CrcSenseStatus crc_sense_nonparametric_thresholds(const double *features,
                                                       const uint8_t *occupancy,
                                                       size_t n_cal,
                                                       size_t m,
                                                       double alpha,
                                                       double *out_gammas);

/**
 * `out_zhat[j] = features[j] >= gammas[j]`.
 *
 * # Safety
 * All three arrays must hold `m` elements.
 */
enum CrcSenseStatus crc_sense_decide(const double *features,
                                     const double *gammas,
                                     size_t m,
                                     uint8_t *out_zhat);

/**
 * False negative rate of a decision; 0 when nothing is occupied.
 *
 * # Safety
 * `z` and `zhat` must hold `m` bytes each; `out` must be valid for one write.
 */
enum CrcSenseStatus crc_sense_fnr(const uint8_t *z, const uint8_t *zhat, size_t m, double *out);

/**
 * True negative rate of a decision; 1 when every subband is occupied.
 *
 * # Safety
 * As [`crc_sense_fnr`].
 */
enum CrcSenseStatus crc_sense_tnr(const uint8_t *z, const uint8_t *zhat, size_t m, double *out);

/**
 * Runs one calibrate-then-test trial from `seed`. `model` may be null when
 * the configuration disables LV features. Rows are written to
 * `rows[0..*out_len]`; if `capacity` is too small, `*out_len` receives the
 * required count and `CRC_SENSE_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `config` must be a live handle, `model` null or live, `rows` valid for
 * `capacity` writes and `out_len` for one.
 */
enum CrcSenseStatus crc_sense_run_trial(const struct CrcSenseConfig *config,
                                        const struct CrcSenseLvModel *model,
                                        uint64_t seed,
                                        struct CrcSenseTrialRow *rows,
                                        size_t capacity,
                                        size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRC_SENSE_H */

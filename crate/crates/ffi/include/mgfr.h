#ifndef MGFR_H
#define MGFR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum MgfrStatus {
  MGFR_STATUS_OK = 0,
  MGFR_STATUS_NULL_POINTER = 1,
  MGFR_STATUS_INVALID_ARGUMENT = 2,
  MGFR_STATUS_IO = 3,
  MGFR_STATUS_FORMAT = 4,
  MGFR_STATUS_UNSUPPORTED_VERSION = 5,
  MGFR_STATUS_BUFFER_TOO_SMALL = 6,
  MGFR_STATUS_RUNTIME = 7,
  MGFR_STATUS_PANIC = 8,
} MgfrStatus;

/**
 * Which driving components a reenactment transfers.
 */
typedef enum MgfrDriveMode {
  MGFR_DRIVE_MODE_BOTH = 0,
  MGFR_DRIVE_MODE_POSE = 1,
  MGFR_DRIVE_MODE_EXPRESSION = 2,
} MgfrDriveMode;

/**
 * Opaque handle to a loaded model and dataset.
 */
typedef struct MgfrSession MgfrSession;

/**
 * Static facts about an open session.
 */
typedef struct MgfrInfo {
  size_t image_size;
  size_t frame_count;
  size_t identities;
  size_t frames_per_identity;
} MgfrInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mgfr_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message length
 * plus one. Returns 0 when the last call succeeded.
 *
 * # Safety
 * `buf` is null or valid for `len` byte writes.
 */
size_t mgfr_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint and the dataset at `dataset_dir`. A null `dataset_dir`
 * regenerates the dataset described by the checkpoint's configuration.
 *
 * # Safety
 * `checkpoint` is a NUL-terminated path; `dataset_dir` is null or one;
 * `out` is valid for one pointer write.
 */
enum MgfrStatus mgfr_session_open(const char *checkpoint,
                                  const char *dataset_dir,
                                  struct MgfrSession **out);

/**
 * Releases a session. Null is ignored.
 *
 * # Safety
 * `session` is null or a handle from [`mgfr_session_open`] not yet freed.
 */
void mgfr_session_free(struct MgfrSession *session);

/**
 * # Safety
 * `session` is a live handle; `out` is valid for one write.
 */
enum MgfrStatus mgfr_session_info(const struct MgfrSession *session, struct MgfrInfo *out);

/**
 * Reenacts frame `driving` from frame `source`, transferring the components
 * selected by `mode`, into `out` (`len ≥ 3 · size²`).
 *
 * # Safety
 * `session` is a live handle; `out` is valid for `len` byte writes.
 */
enum MgfrStatus mgfr_reenact(const struct MgfrSession *session,
                             size_t source,
                             size_t driving,
                             enum MgfrDriveMode mode,
                             uint8_t *out,
                             size_t len);

/**
 * Reenacts with pose and expression blended from `source` (`alpha = 0`) to
 * `driving` (`alpha = 1`).
 *
 * # Safety
 * `session` is a live handle; `out` is valid for `len` byte writes.
 */
enum MgfrStatus mgfr_interpolate(const struct MgfrSession *session,
                                 size_t source,
                                 size_t driving,
                                 double alpha,
                                 uint8_t *out,
                                 size_t len);

/**
 * Copies dataset frame `index` into `out`.
 *
 * # Safety
 * `session` is a live handle; `out` is valid for `len` byte writes.
 */
enum MgfrStatus mgfr_frame(const struct MgfrSession *session,
                           size_t index,
                           uint8_t *out,
                           size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGFR_H */

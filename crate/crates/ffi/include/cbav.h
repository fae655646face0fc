#ifndef CBAV_H
#define CBAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CBAV_TEMPLATE_HUMANOID 0

#define CBAV_TEMPLATE_SPHERE 1

#define CBAV_KIND_GEOMETRY 1

#define CBAV_KIND_TEXTURE 2

/*
 Result of every fallible call.
 */
typedef enum CbavStatus {
  CBAV_STATUS_OK = 0,
  CBAV_STATUS_NULL_POINTER = 1,
  CBAV_STATUS_INVALID_ARGUMENT = 2,
  CBAV_STATUS_DIMENSION = 3,
  CBAV_STATUS_IO = 4,
  CBAV_STATUS_FORMAT = 5,
  CBAV_STATUS_CONFIG = 6,
  CBAV_STATUS_TEMPLATE_MISMATCH = 7,
  CBAV_STATUS_NUMERIC = 8,
  CBAV_STATUS_PANIC = 9,
} CbavStatus;

/*
 A customized avatar: codebook plus pose.
 */
typedef struct CbavAvatar CbavAvatar;

/*
 A trained checkpoint together with the template it was trained on.
 */
typedef struct CbavModel CbavModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *cbav_version(void);

/*
 Copy the calling thread's last error message into `buf` (truncated and
 NUL-terminated if `len > 0`). Returns the full message length plus one,
 or 0 when no error has been recorded.

 # Safety
 `buf` must be valid for `len` bytes or null with `len == 0`.
 */
size_t cbav_last_error(char *buf, size_t len);

/*
 Load a training checkpoint for one of the `CBAV_TEMPLATE_*` templates.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CbavStatus cbav_model_open(const char *path, uint32_t template_, struct CbavModel **out);

/*
 # Safety
 `model` must come from [`cbav_model_open`] and not be used afterwards.
 */
void cbav_model_free(struct CbavModel *model);

/*
 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CbavStatus cbav_model_subject_count(const struct CbavModel *model, size_t *out);

/*
 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CbavStatus cbav_model_vertex_count(const struct CbavModel *model, size_t *out);

/*
 Avatar from training subject `index`.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CbavStatus cbav_avatar_from_index(const struct CbavModel *model,
                                       size_t index,
                                       struct CbavAvatar **out);

/*
 New avatar drawn from the PCA models of both dictionaries.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CbavStatus cbav_avatar_sample(const struct CbavModel *model,
                                   uint64_t seed,
                                   double temperature,
                                   struct CbavAvatar **out);

/*
 Load an avatar file made for this model.

 # Safety
 `model` must be a live handle, `path` NUL-terminated, `out` writable.
 */
enum CbavStatus cbav_avatar_load(const struct CbavModel *model,
                                 const char *path,
                                 struct CbavAvatar **out);

/*
 # Safety
 `avatar` must be a live handle and `path` NUL-terminated.
 */
enum CbavStatus cbav_avatar_save(const struct CbavAvatar *avatar, const char *path);

/*
 # Safety
 `avatar` must come from this library and not be used afterwards.
 */
void cbav_avatar_free(struct CbavAvatar *avatar);

/*
 Copy the `CBAV_KIND_*` features of `vertices` from `src` into a copy of
 `dst`.

 # Safety
 Handles must be live, `vertices` valid for `count` entries, `out` writable.
 */
enum CbavStatus cbav_avatar_transfer(const struct CbavModel *model,
                                     const struct CbavAvatar *dst,
                                     const struct CbavAvatar *src,
                                     const size_t *vertices,
                                     size_t count,
                                     uint32_t kinds,
                                     struct CbavAvatar **out);

/*
 Copy of `avatar` with a new pose: `rotations` holds one axis-angle
 triple per joint, `shape` one value per blendshape, `translation` three.

 # Safety
 Handles must be live and the arrays valid for the given lengths.
 */
enum CbavStatus cbav_avatar_repose(const struct CbavModel *model,
                                   const struct CbavAvatar *avatar,
                                   const double *rotations,
                                   size_t joint_count,
                                   const double *shape,
                                   size_t shape_count,
                                   const double *translation,
                                   struct CbavAvatar **out);

/*
 Signed distances at `count` points (`xyz` interleaved) into `out`.

 # Safety
 Handles must be live, `xyz` valid for `3 * count` values and `out` for `count`.
 */
enum CbavStatus cbav_avatar_sdf(const struct CbavModel *model,
                                const struct CbavAvatar *avatar,
                                const double *xyz,
                                size_t count,
                                double *out);

/*
 RGB in `[0, 1]` at `count` points into `out` (`3 * count` values).

 # Safety
 Handles must be live, `xyz` and `out` valid for `3 * count` values.
 */
enum CbavStatus cbav_avatar_colors(const struct CbavModel *model,
                                   const struct CbavAvatar *avatar,
                                   const double *xyz,
                                   size_t count,
                                   double *out);

/*
 Extract the colored zero level set at `resolution` and write it as PLY or
 OBJ, chosen by the extension of `path`.

 # Safety
 Handles must be live and `path` NUL-terminated.
 */
enum CbavStatus cbav_avatar_extract(const struct CbavModel *model,
                                    const struct CbavAvatar *avatar,
                                    size_t resolution,
                                    const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBAV_H */

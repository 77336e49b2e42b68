#ifndef PSDF_H
#define PSDF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum PsdfStatus {
  PSDF_STATUS_OK = 0,
  PSDF_STATUS_NULL_POINTER = 1,
  PSDF_STATUS_INVALID_ARGUMENT = 2,
  PSDF_STATUS_INVALID_CONFIG = 3,
  PSDF_STATUS_INVALID_FRAME = 4,
  PSDF_STATUS_IO = 5,
  PSDF_STATUS_PARSE = 6,
  PSDF_STATUS_EMPTY_MESH = 7,
  PSDF_STATUS_PANIC = 8,
} PsdfStatus;

/**
 * Triangle mesh snapshot with flattened vertex and index buffers.
 */
typedef struct PsdfMesh PsdfMesh;

/**
 * Incremental reconstruction state.
 */
typedef struct PsdfReconstructor PsdfReconstructor;

/**
 * Pinhole camera model. Pixel centers are at integer coordinates.
 */
typedef struct PsdfIntrinsics {
  uint32_t width;
  uint32_t height;
  double fx;
  double fy;
  double cx;
  double cy;
} PsdfIntrinsics;

/**
 * Camera-to-world pose: translation and unit quaternion (x, y, z, w).
 */
typedef struct PsdfPose {
  double tx;
  double ty;
  double tz;
  double qx;
  double qy;
  double qz;
  double qw;
} PsdfPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the last
 * call succeeded. The pointer stays valid until the next call into this
 * library from the same thread.
 */
const char *psdf_last_error_message(void);

/**
 * Static, NUL-terminated description of a status code.
 */
const char *psdf_status_string(enum PsdfStatus status);

/**
 * Library version as a NUL-terminated string.
 */
const char *psdf_version(void);

/**
 * Creates a reconstructor. `config_json` may be null for defaults; otherwise
 * it is a JSON object overriding individual settings.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer to writable storage.
 */
enum PsdfStatus psdf_reconstructor_new(const char *config_json, struct PsdfReconstructor **out);

/**
 * Releases a reconstructor. Null is ignored.
 *
 * # Safety
 * `handle` must be null or a pointer returned by [`psdf_reconstructor_new`]
 * that has not been freed.
 */
void psdf_reconstructor_free(struct PsdfReconstructor *handle);

/**
 * Fuses one depth image given in meters, row-major, `width * height`
 * values. Non-positive and non-finite depths are treated as missing.
 *
 * # Safety
 * `handle`, `depth`, `intrinsics` and `pose` must be valid; `depth` must
 * point to `intrinsics->width * intrinsics->height` floats.
 */
enum PsdfStatus psdf_reconstructor_integrate(struct PsdfReconstructor *handle,
                                             const float *depth,
                                             const struct PsdfIntrinsics *intrinsics,
                                             const struct PsdfPose *pose,
                                             double timestamp);

/**
 * Number of frames fused so far.
 *
 * # Safety
 * `handle` must be null or valid.
 */
size_t psdf_reconstructor_frame_count(const struct PsdfReconstructor *handle);

/**
 * Number of allocated voxel blocks.
 *
 * # Safety
 * `handle` must be null or valid.
 */
size_t psdf_reconstructor_block_count(const struct PsdfReconstructor *handle);

/**
 * Mean inlier ratio of the most recent frame; NaN before any frame or when
 * the mode does not compute one.
 *
 * # Safety
 * `handle` must be null or valid.
 */
double psdf_reconstructor_last_mean_rho(const struct PsdfReconstructor *handle);

/**
 * Extracts the current mesh into a new handle.
 *
 * # Safety
 * `handle` must be valid and `out` writable.
 */
enum PsdfStatus psdf_reconstructor_extract(struct PsdfReconstructor *handle, struct PsdfMesh **out);

/**
 * Releases a mesh. Null is ignored.
 *
 * # Safety
 * `mesh` must be null or a pointer returned by [`psdf_reconstructor_extract`]
 * that has not been freed.
 */
void psdf_mesh_free(struct PsdfMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or valid.
 */
size_t psdf_mesh_vertex_count(const struct PsdfMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or valid.
 */
size_t psdf_mesh_triangle_count(const struct PsdfMesh *mesh);

/**
 * Vertex positions as `3 * vertex_count` doubles (x, y, z), owned by the mesh.
 *
 * # Safety
 * `mesh` must be null or valid. The pointer lives as long as the mesh.
 */
const double *psdf_mesh_positions(const struct PsdfMesh *mesh);

/**
 * Unit vertex normals as `3 * vertex_count` doubles, owned by the mesh.
 *
 * # Safety
 * `mesh` must be null or valid. The pointer lives as long as the mesh.
 */
const double *psdf_mesh_normals(const struct PsdfMesh *mesh);

/**
 * Per-vertex confidence, `vertex_count` doubles, owned by the mesh.
 *
 * # Safety
 * `mesh` must be null or valid. The pointer lives as long as the mesh.
 */
const double *psdf_mesh_confidence(const struct PsdfMesh *mesh);

/**
 * Triangle vertex indices, `3 * triangle_count` values, owned by the mesh.
 *
 * # Safety
 * `mesh` must be null or valid. The pointer lives as long as the mesh.
 */
const uint32_t *psdf_mesh_indices(const struct PsdfMesh *mesh);

/**
 * Writes the mesh as PLY, binary little-endian when `binary` is non-zero.
 *
 * # Safety
 * `mesh` must be valid and `path` a NUL-terminated string.
 */
enum PsdfStatus psdf_mesh_write_ply(const struct PsdfMesh *mesh, const char *path, int32_t binary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSDF_H */

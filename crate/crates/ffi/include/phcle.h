#ifndef PHCLE_H
#define PHCLE_H

#include <stddef.h>

// Result of every fallible call. The first four values match the command
// line exit codes.
typedef enum PhcleStatus {
  PHCLE_STATUS_OK = 0,
  PHCLE_STATUS_IO = 1,
  PHCLE_STATUS_INVALID_INPUT = 2,
  PHCLE_STATUS_DIVERGED = 3,
  PHCLE_STATUS_NULL_POINTER = 4,
  PHCLE_STATUS_BUFFER_TOO_SMALL = 5,
  PHCLE_STATUS_PANIC = 6,
} PhcleStatus;

// Trained model with its vocabularies and hyperparameters.
typedef struct PhcleModel PhcleModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *phcle_last_error(void);

// Loads a binary model file into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PhcleStatus phcle_model_load(const char *path, struct PhcleModel **out);

// Writes the model in the binary format.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum PhcleStatus phcle_model_save(const struct PhcleModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void phcle_model_free(struct PhcleModel *model);

// Trains from a sparse co-occurrence file, an optional attribute table and
// an optional config file (null for defaults).
//
// # Safety
// Path arguments must be null (where allowed) or NUL-terminated strings;
// `out` must be writable.
enum PhcleStatus phcle_train_files(const char *cooc_path,
                                   const char *attrs_path,
                                   const char *config_path,
                                   struct PhcleModel **out);

// Embedding dimension, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t phcle_model_dim(const struct PhcleModel *model);

// # Safety
// `model` must be null or a live handle.
size_t phcle_model_num_labels(const struct PhcleModel *model);

// # Safety
// `model` must be null or a live handle.
size_t phcle_model_num_attributes(const struct PhcleModel *model);

// Index of a label name.
//
// # Safety
// `model` must be a live handle, `name` a NUL-terminated string and
// `out_index` writable.
enum PhcleStatus phcle_model_label_index(const struct PhcleModel *model,
                                         const char *name,
                                         size_t *out_index);

// Copies the name of label `index` into `buf` with a trailing NUL.
// `*out_len` receives the name length in bytes without the NUL, also when
// the buffer is too small.
//
// # Safety
// `buf` must point to `buf_len` writable bytes; `out_len` may be null.
enum PhcleStatus phcle_model_label_name(const struct PhcleModel *model,
                                        size_t index,
                                        char *buf,
                                        size_t buf_len,
                                        size_t *out_len);

// Copies the embedding of label `index` into `out` (`len` >= dim).
//
// # Safety
// `out` must point to `len` writable doubles.
enum PhcleStatus phcle_model_embedding(const struct PhcleModel *model,
                                       size_t index,
                                       double *out,
                                       size_t len);

// Cosine similarity of two vectors of length `len`; 0 when either has
// near-zero norm or a pointer is null.
//
// # Safety
// `a` and `b` must point to `len` readable doubles.
double phcle_cosine_similarity(const double *a, const double *b, size_t len);

// Top `topk` labels most similar to `query`, excluding it. Indices and
// similarities go to arrays of capacity `topk`; `*out_count` receives the
// number written.
//
// # Safety
// Output arrays must hold `topk` elements.
enum PhcleStatus phcle_model_retrieve(const struct PhcleModel *model,
                                      const char *query,
                                      size_t topk,
                                      size_t *out_indices,
                                      double *out_similarities,
                                      size_t *out_count);

// Describes `vector` (length `len` = dim): related labels with their
// percentage of the covered similarity mass, then the `top_attrs`
// best-scoring attributes. Fails with `BufferTooSmall` when more related
// labels are selected than `related_cap`.
//
// # Safety
// `vector` must point to `len` doubles; related arrays must hold
// `related_cap` elements and attribute arrays `top_attrs` elements.
enum PhcleStatus phcle_model_describe(const struct PhcleModel *model,
                                      const double *vector,
                                      size_t len,
                                      double coverage,
                                      size_t top_attrs,
                                      size_t *related_indices,
                                      double *related_percent,
                                      size_t related_cap,
                                      size_t *related_count,
                                      size_t *attr_indices,
                                      double *attr_scores,
                                      size_t *attr_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHCLE_H */

#ifndef COPYGEN_H
#define COPYGEN_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Scoring modes accepted by the `mode` argument.
 */
typedef enum CgMode {
  CG_MODE_FULL = 0,
  CG_MODE_COPY_ONLY = 1,
  CG_MODE_GEN_ONLY = 2,
  CG_MODE_GEN_NEW = 3,
} CgMode;

/**
 * Result codes. Zero is success.
 */
typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_POINTER = 1,
  CG_STATUS_INVALID_ARGUMENT = 2,
  CG_STATUS_BUFFER_TOO_SMALL = 3,
  CG_STATUS_IO = 4,
  CG_STATUS_PARSE = 5,
  CG_STATUS_BOUNDS = 6,
  CG_STATUS_SEQUENCING = 7,
  CG_STATUS_CHECKPOINT = 8,
  CG_STATUS_CONFIG = 9,
  CG_STATUS_INTERNAL = 10,
} CgStatus;

/**
 * A loaded checkpoint.
 */
typedef struct CgModel CgModel;

/**
 * A historical vocabulary built snapshot by snapshot.
 */
typedef struct CgVocab CgVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a NUL-terminated
 * string, truncating if needed. Returns the full message length in bytes
 * (excluding the terminator), so a caller can size a second attempt.
 */
size_t cg_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cg_version(void);

/**
 * Loads a `CYG1` checkpoint.
 */
enum CgStatus cg_model_load(const char *path, struct CgModel **out);

void cg_model_free(struct CgModel *model);

/**
 * Entity count, relation count (reciprocals included), snapshot count and
 * embedding dimension. Any output pointer may be null.
 */
enum CgStatus cg_model_dims(const struct CgModel *model,
                            uint32_t *num_entities,
                            uint32_t *num_relations,
                            uint32_t *num_snapshots,
                            uint32_t *dim);

/**
 * Mixing weight stored in the checkpoint.
 */
enum CgStatus cg_model_alpha(const struct CgModel *model, double *alpha);

/**
 * Empty vocabulary with frontier 0.
 */
struct CgVocab *cg_vocab_new(void);

/**
 * Vocabulary of every training snapshot of a prepared dataset directory.
 */
enum CgStatus cg_vocab_from_dataset(const char *dir, struct CgVocab **out);

void cg_vocab_free(struct CgVocab *vocab);

/**
 * Index of the next snapshot the vocabulary expects.
 */
uint32_t cg_vocab_frontier(const struct CgVocab *vocab);

/**
 * Adds snapshot `step` given as parallel arrays of `len` ids. Snapshots must
 * arrive in increasing order; a gap or repeat yields `Sequencing`.
 */
enum CgStatus cg_vocab_absorb(struct CgVocab *vocab,
                              uint32_t step,
                              const uint32_t *subjects,
                              const uint32_t *relations,
                              const uint32_t *objects,
                              size_t len);

/**
 * Writes the probability of every entity for `(subject, relation, ?, step)`
 * into `probs`, which must hold at least `len >= N` floats. `mode` takes a
 * [`CgMode`] value.
 */
enum CgStatus cg_predict_probs(const struct CgModel *model,
                               const struct CgVocab *vocab,
                               uint32_t subject,
                               uint32_t relation,
                               uint32_t step,
                               double alpha,
                               uint32_t mode,
                               float *probs,
                               size_t len);

/**
 * Writes the `k` best entity ids, best first, into `ids`. Ties are broken by
 * ascending id. `k` larger than the entity count is an error.
 */
enum CgStatus cg_predict_topk(const struct CgModel *model,
                              const struct CgVocab *vocab,
                              uint32_t subject,
                              uint32_t relation,
                              uint32_t step,
                              double alpha,
                              uint32_t mode,
                              uint32_t *ids,
                              size_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COPYGEN_H */

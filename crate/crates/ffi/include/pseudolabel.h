#ifndef PSEUDOLABEL_H
#define PSEUDOLABEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlFilterMethod {
  PL_FILTER_METHOD_RATIO_KDE = 0,
  PL_FILTER_METHOD_RATIO_TO_GOLD = 1,
  PL_FILTER_METHOD_EMBEDDING_SIMILARITY = 2,
} PlFilterMethod;

typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_ARGUMENT = 1,
  PL_STATUS_INVALID_UTF8 = 2,
  PL_STATUS_INVALID_ARGUMENT = 3,
  PL_STATUS_IO = 4,
  PL_STATUS_PARSE = 5,
  PL_STATUS_MISSING_FIELD = 6,
  PL_STATUS_DIMENSION_MISMATCH = 7,
  PL_STATUS_EMPTY = 8,
  PL_STATUS_INVARIANT = 9,
  PL_STATUS_PANIC = 10,
} PlStatus;

/**
 * Opaque corpus handle.
 */
typedef struct PlCorpus PlCorpus;

/**
 * Opaque KDE handle.
 */
typedef struct PlKdeModel PlKdeModel;

/**
 * Corpus-level scores of predicted labels against gold.
 */
typedef struct PlEvalScores {
  double transcript_wer;
  double transcript_bleu;
  double translation_wer;
  double translation_bleu;
} PlEvalScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Toolkit version as a static NUL-terminated string.
 */
const char *pl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *pl_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void pl_string_free(char *s);

/**
 * Lowercases, strips diacritics and punctuation, and collapses whitespace.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum PlStatus pl_normalize_text(const char *text, char **out);

/**
 * Corpus WER (fraction) over `n` normalized sentence pairs.
 *
 * # Safety
 * `refs` and `hyps` must point to `n` NUL-terminated strings each.
 */
enum PlStatus pl_wer(const char *const *refs, const char *const *hyps, size_t n, double *out);

/**
 * Corpus BLEU (0 to 100) over `n` normalized sentence pairs. `lang`
 * selects the tokenizer; NULL means the 13a tokenizer.
 *
 * # Safety
 * `refs` and `hyps` must point to `n` NUL-terminated strings each; `lang`
 * must be NULL or NUL-terminated.
 */
enum PlStatus pl_corpus_bleu(const char *const *refs,
                             const char *const *hyps,
                             size_t n,
                             const char *lang,
                             double *out);

/**
 * # Safety
 * `u` and `v` must point to `dim` doubles each.
 */
enum PlStatus pl_cosine_similarity(const double *u, const double *v, size_t dim, double *out);

/**
 * Fits a Gaussian KDE with Scott's-rule bandwidths to `n` row-major points
 * of dimension `dim`.
 *
 * # Safety
 * `points` must point to `n * dim` doubles; `out` must be writable.
 */
enum PlStatus pl_kde_fit(const double *points, size_t n, size_t dim, struct PlKdeModel **out);

/**
 * # Safety
 * `model` must be a live handle; `x` must point to `dim` doubles.
 */
enum PlStatus pl_kde_pdf(const struct PlKdeModel *model, const double *x, size_t dim, double *out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`pl_kde_fit`] not yet freed.
 */
void pl_kde_free(struct PlKdeModel *model);

/**
 * Marks the `ceil(fraction * n)` highest scores (ties by position) with 1
 * in `keep_mask` and writes that count to `kept`.
 *
 * # Safety
 * `scores` must point to `n` doubles and `keep_mask` to `n` writable bytes.
 */
enum PlStatus pl_keep_top_fraction(const double *scores,
                                   size_t n,
                                   double fraction,
                                   uint8_t *keep_mask,
                                   size_t *kept);

/**
 * # Safety
 * `text` must be NUL-terminated; `flagged` and `repeats` must be writable.
 */
enum PlStatus pl_detect_looping(const char *text,
                                size_t max_n,
                                size_t min_repeats,
                                bool *flagged,
                                size_t *repeats);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum PlStatus pl_corpus_load(const char *path, struct PlCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle; `path` must be NUL-terminated.
 */
enum PlStatus pl_corpus_save(const struct PlCorpus *corpus, const char *path);

/**
 * Number of samples; 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t pl_corpus_len(const struct PlCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle from this library not yet freed.
 */
void pl_corpus_free(struct PlCorpus *corpus);

/**
 * Filters pseudo-labels into a new corpus handle. `a` is the keep fraction
 * for the fraction filters and the lower ratio bound for `RatioToGold`,
 * whose upper bound is `b`. `b` is ignored otherwise.
 *
 * # Safety
 * `corpus` must be a live handle; `kept` must be writable.
 */
enum PlStatus pl_corpus_filter(const struct PlCorpus *corpus,
                               enum PlFilterMethod method,
                               double a,
                               double b,
                               struct PlCorpus **kept);

/**
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum PlStatus pl_corpus_evaluate(const struct PlCorpus *corpus, struct PlEvalScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEUDOLABEL_H */

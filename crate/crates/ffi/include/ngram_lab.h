#ifndef NGRAM_LAB_H
#define NGRAM_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_POINTER = 1,
  NL_STATUS_INPUT = 2,
  NL_STATUS_SPEC = 3,
  NL_STATUS_RESOURCE = 4,
  NL_STATUS_SAMPLING = 5,
  NL_STATUS_PROTOCOL = 6,
  NL_STATUS_MODEL = 7,
  NL_STATUS_TRAINING = 8,
  NL_STATUS_DIVERGENCE = 9,
  NL_STATUS_STATISTICS = 10,
  NL_STATUS_FORMAT = 11,
  NL_STATUS_IO = 12,
  NL_STATUS_INTERNAL = 13,
} NlStatus;

// Ground-truth LM family for `nl_generate_lm`.
typedef enum NlFamily {
  NL_FAMILY_GENERAL = 0,
  NL_FAMILY_SPARSE = 1,
  NL_FAMILY_DENSE = 2,
} NlFamily;

// Count-based estimator for `nl_fit_classic`.
typedef enum NlMethod {
  NL_METHOD_MLE = 0,
  NL_METHOD_ADD_LAMBDA = 1,
  NL_METHOD_ABSOLUTE_DISCOUNTING = 2,
  NL_METHOD_WITTEN_BELL = 3,
} NlMethod;

// A list of symbol strings with its provenance.
typedef struct NlCorpus NlCorpus;

// Any loadable model: a ground-truth LM, a count-based estimator, or a trained network.
typedef struct NlModel NlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *nl_last_error(void);

// Draws a ground-truth LM. `rank` is read only for `NL_FAMILY_DENSE`.
enum NlStatus nl_generate_lm(enum NlFamily family,
                             size_t order,
                             size_t alphabet_size,
                             size_t rank,
                             uint64_t seed,
                             struct NlModel **out);

// Loads any model file written by the lab.
enum NlStatus nl_model_load(const char *path, struct NlModel **out);

enum NlStatus nl_model_save(const struct NlModel *model, const char *path);

// Frees a model handle; null is ignored.
void nl_model_free(struct NlModel *model);

enum NlStatus nl_model_order(const struct NlModel *model, size_t *out);

// |Σ|, the number of plain symbols.
enum NlStatus nl_model_alphabet_size(const struct NlModel *model, size_t *out);

// Natural-log probability of the string `symbols[0..len]` (EOS included implicitly).
enum NlStatus nl_model_logprob(const struct NlModel *model,
                               const uint32_t *symbols,
                               size_t len,
                               double *out);

// Draws `count` i.i.d. strings.
enum NlStatus nl_sample(const struct NlModel *model,
                        size_t count,
                        uint64_t seed,
                        size_t max_len,
                        struct NlCorpus **out);

// Loads a corpus file and its sidecar; `alphabet_size` of 0 skips symbol validation.
enum NlStatus nl_corpus_load(const char *path, size_t alphabet_size, struct NlCorpus **out);

enum NlStatus nl_corpus_save(const struct NlCorpus *corpus, const char *path);

void nl_corpus_free(struct NlCorpus *corpus);

enum NlStatus nl_corpus_len(const struct NlCorpus *corpus, size_t *out);

// Copies string `index` into `buf`, which holds `capacity` ids; `out_len`
// always receives the full length, so a first call with `capacity` 0 sizes the buffer.
enum NlStatus nl_corpus_string(const struct NlCorpus *corpus,
                               size_t index,
                               uint32_t *buf,
                               size_t capacity,
                               size_t *out_len);

// Fits a count-based estimator of the given order. `hyper` is λ or δ and
// is ignored by MLE and Witten-Bell.
enum NlStatus nl_fit_classic(const struct NlCorpus *corpus,
                             size_t alphabet_size,
                             size_t order,
                             enum NlMethod method,
                             double hyper,
                             struct NlModel **out);

// Writes ln q(y) for every corpus string into `out[0..len]`; `len` must equal the corpus size.
enum NlStatus nl_score(const struct NlModel *model,
                       const struct NlCorpus *corpus,
                       double *out,
                       size_t len);

// Exact string-level entropy H(p) in nats.
enum NlStatus nl_exact_entropy(const struct NlModel *p, double *out);

// Exact KL(p‖q) in nats; may be +inf.
enum NlStatus nl_exact_kl(const struct NlModel *p, const struct NlModel *q, double *out);

// Empirical KL and its standard error from paired log-probabilities of the same test strings.
enum NlStatus nl_empirical_kl(const double *truth,
                              const double *model,
                              size_t len,
                              double *out_kl,
                              double *out_stderr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NGRAM_LAB_H */

#ifndef MISO_MA_H
#define MISO_MA_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum MmaMetric {
  MMA_METRIC_SUM = 0,
  MMA_METRIC_MMF = 1,
} MmaMetric;

typedef enum MmaObjective {
  MMA_OBJECTIVE_SUM = 0,
  MMA_OBJECTIVE_MAX_MIN = 1,
} MmaObjective;

typedef enum MmaStatus {
  MMA_STATUS_OK = 0,
  MMA_STATUS_NULL_POINTER = 1,
  MMA_STATUS_INVALID_ARGUMENT = 2,
  MMA_STATUS_DIMENSION = 3,
  MMA_STATUS_INFEASIBLE = 4,
  MMA_STATUS_SOLVER = 5,
  MMA_STATUS_INVARIANT = 6,
  MMA_STATUS_IO = 7,
  MMA_STATUS_PANIC = 8,
} MmaStatus;

// Channels, estimates and per-user variances.
typedef struct MmaChannels MmaChannels;

// Precoders of every stream; the common stream, if any, is last.
typedef struct MmaPrecoders MmaPrecoders;

// Optimized precoders with their rates and iteration count.
typedef struct MmaSolution MmaSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Owned by the
// library; valid until the next failing call on this thread.
const char *mma_last_error(void);

// Library version as a static NUL-terminated string.
const char *mma_version(void);

// I.i.d. Rayleigh channels with perfect CSIT. `variances` has `k` entries.
//
// # Safety
// `variances` must point to `k` doubles and `out` to writable storage.
enum MmaStatus mma_channels_sample(uintptr_t k,
                                   uintptr_t m,
                                   const double *variances,
                                   uint64_t seed,
                                   struct MmaChannels **out);

// Channels known exactly to the transmitter, from `k x m` row-major real
// and imaginary parts.
//
// # Safety
// `re`, `im` must point to `k * m` doubles, `variances` to `k`.
enum MmaStatus mma_channels_from_arrays(uintptr_t k,
                                        uintptr_t m,
                                        const double *re,
                                        const double *im,
                                        const double *variances,
                                        struct MmaChannels **out);

// Fresh estimate/error split with error variance `sigma2 * P^-alpha` at
// SNR `snr_db`.
//
// # Safety
// `cs` must be a live handle and `out` writable.
enum MmaStatus mma_channels_with_csit_error(const struct MmaChannels *cs,
                                            double alpha,
                                            double snr_db,
                                            uint64_t seed,
                                            struct MmaChannels **out);

// # Safety
// `cs` must be a live handle and `k`, `m` writable.
enum MmaStatus mma_channels_dims(const struct MmaChannels *cs, uintptr_t *k, uintptr_t *m);

// # Safety
// `cs` must be null or a handle not yet freed.
void mma_channels_free(struct MmaChannels *cs);

// MRT/SVD initialization at total power `power` for a strategy such as
// `"noma:3"`, `"mulp"`, `"rs1"` or `"oma"`.
//
// # Safety
// `cs` must be a live handle, `strategy` a NUL-terminated string and
// `out` writable.
enum MmaStatus mma_precoders_init(const struct MmaChannels *cs,
                                  const char *strategy_name,
                                  double power,
                                  struct MmaPrecoders **out);

// Precoders from `n_streams x m` row-major arrays; with `has_common` the
// last row is the common stream.
//
// # Safety
// `re`, `im` must point to `n_streams * m` doubles and `out` be writable.
enum MmaStatus mma_precoders_from_arrays(uintptr_t n_streams,
                                         uintptr_t m,
                                         const double *re,
                                         const double *im,
                                         bool has_common,
                                         double power,
                                         struct MmaPrecoders **out);

// # Safety
// `ps` must be a live handle.
uintptr_t mma_precoders_num_streams(const struct MmaPrecoders *ps);

// Copies stream `stream` into `re` and `im`, each of length `m`.
//
// # Safety
// `ps` must be a live handle and `re`, `im` point to `m` doubles.
enum MmaStatus mma_precoders_stream(const struct MmaPrecoders *ps,
                                    uintptr_t stream,
                                    double *re,
                                    double *im,
                                    uintptr_t m);

// # Safety
// `ps` must be null or a handle not yet freed.
void mma_precoders_free(struct MmaPrecoders *ps);

// Rates of `ps` on the true channels of `cs`, in bits/s/Hz. Any of
// `common`, `sum`, `mmf` may be null.
//
// # Safety
// Handles must be live, `strategy` NUL-terminated and `per_user` point to
// `k` doubles.
enum MmaStatus mma_evaluate(const struct MmaChannels *cs,
                            const char *strategy_name,
                            const struct MmaPrecoders *ps,
                            double *per_user,
                            uintptr_t k,
                            double *common,
                            double *sum,
                            double *mmf);

// Optimizes precoders at SNR `snr_db` from the MRT/SVD start. With
// `alpha` in `[0, 1]` the channels are treated as estimates and the
// ergodic objective over `n_samples` conditional draws is optimized;
// pass a negative `alpha` for perfect CSIT.
//
// # Safety
// `cs` must be a live handle, `strategy` NUL-terminated and `out`
// writable.
enum MmaStatus mma_solve(const struct MmaChannels *cs,
                         const char *strategy_name,
                         enum MmaObjective obj,
                         double snr_db,
                         double alpha,
                         uintptr_t n_samples,
                         uintptr_t max_iterations,
                         uint64_t seed,
                         struct MmaSolution **out);

// Rates reported by the optimizer. Any of `common`, `sum`, `mmf` may be
// null.
//
// # Safety
// `sol` must be a live handle and `per_user` point to `k` doubles.
enum MmaStatus mma_solution_rates(const struct MmaSolution *sol,
                                  double *per_user,
                                  uintptr_t k,
                                  double *common,
                                  double *sum,
                                  double *mmf);

// # Safety
// `sol` must be a live handle.
uintptr_t mma_solution_iterations(const struct MmaSolution *sol);

// Copy of the optimized precoders as a new handle.
//
// # Safety
// `sol` must be a live handle and `out` writable.
enum MmaStatus mma_solution_precoders(const struct MmaSolution *sol, struct MmaPrecoders **out);

// # Safety
// `sol` must be null or a handle not yet freed.
void mma_solution_free(struct MmaSolution *sol);

// Closed-form multiplexing gain as the reduced fraction `num / den`.
// `groups` is ignored except for NOMA strategies given without a count.
//
// # Safety
// `strategy` must be NUL-terminated and `num`, `den` writable.
enum MmaStatus mma_dof(const char *strategy_name,
                       uintptr_t m,
                       uintptr_t k,
                       int64_t alpha_num,
                       int64_t alpha_den,
                       enum MmaMetric metric,
                       int64_t *num,
                       int64_t *den);

// Runs the campaign described by a TOML config and writes the per-cell CSV
// to `csv_path` and the summary next to it. `violations` receives the
// number of invariant violations and may be null.
//
// # Safety
// `config_toml` and `csv_path` must be NUL-terminated.
enum MmaStatus mma_run_experiment(const char *config_toml,
                                  const char *csv_path,
                                  uintptr_t *violations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MISO_MA_H */

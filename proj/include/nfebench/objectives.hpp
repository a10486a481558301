#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "nfebench/coupling.hpp"
#include "nfebench/models.hpp"

namespace nfe {

struct Batch {
    Tensor y;     // [B, data_dim]
    Tensor cond;  // [B, cond_dim]
    Tensor eps;   // [B, data_dim]
    std::vector<double> t_or_sigma;  // one level per row
    std::vector<int> level;          // CD: index i of the pair (t_i, t_{i+1}) on the ascending grid

    std::size_t size() const { return y.rows(); }
    void validate(const char* op) const;
};

// FM-family time draws are kept away from the endpoints.
inline constexpr double kFmTimeClamp = 1e-5;
std::vector<double> sample_fm_times(Rng& rng, std::size_t n);

// Every loss is mean_b |target_b - prediction_b|^2 (per-row squared norm,
// averaged over the batch), optionally weighted per row.

// t in batch.t_or_sigma is an integer step in 0..T-1.
Var ddpm_loss(Tape& tape, const TapePredictor& eps_model, const DdpmSchedule& sched, const Batch& batch);

// lambda(sigma) |D(y + sigma eps, sigma) - y|^2.
Var edm_loss(Tape& tape, const TapePredictor& denoiser, double sigma_data, const Batch& batch);

// |v(t y + (1 - t) eps, t) - (y - eps)|^2.
Var fm_loss(Tape& tape, const TapePredictor& v, const Batch& batch);

// fm_loss with eps reordered so that row i uses eps[coupling.permutation[i]].
Var multisample_fm_loss(Tape& tape, const TapePredictor& v, const Batch& batch, const Coupling& coupling);
Batch apply_coupling(const Batch& batch, const Coupling& coupling);

// Noise/endpoint pairs produced by integrating a trained flow.
struct PairSet {
    Tensor eps;
    Tensor y_hat;
    Tensor cond;
    std::size_t size() const { return eps.rows(); }
};

// Pairs reuse fm_loss with y := y_hat and the stored eps.
Var reflow_loss(Tape& tape, const TapePredictor& v, const PairSet& pairs, std::span<const double> t);

// n = cond.rows() pairs: eps ~ N(0, I) from rng, y_hat = solver_steps-step Euler endpoint.
PairSet reflow_pairs(const FieldFn& v, int data_dim, const Tensor& cond, int solver_steps, Rng& rng);
void save_pairs(const std::filesystem::path& path, const PairSet& p, const nlohmann::json& info = {});
PairSet load_pairs(const std::filesystem::path& path);

// Ascending CD level grid t_0 < ... < t_{N-1}: the Karras grid reversed.
std::vector<double> cd_levels(const SigmaGrid& grid);

enum class TeacherSolver { euler, heun };

// One step of dx/dt = (x - D(x, t)) / t from t_hi down to t_lo, per row.
Tensor teacher_step(const FieldFn& teacher, const Tensor& x, std::span<const double> t_hi,
                    std::span<const double> t_lo, const Tensor& cond, TeacherSolver solver = TeacherSolver::euler);

// |D_student(x_{i+1}, t_{i+1}) - sg(D_ema(x_hat_i, t_i))|^2 with x_{i+1} = y + t_{i+1} eps
// and x_hat_i the teacher step. batch.level holds i per row.
Var cd_loss(Tape& tape, const TapePredictor& student, const TapePredictor& ema, const FieldFn& teacher,
            const Batch& batch, const SigmaGrid& grid, TeacherSolver solver = TeacherSolver::euler);

}  // namespace nfe

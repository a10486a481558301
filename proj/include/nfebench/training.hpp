#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nfebench/bespoke.hpp"
#include "nfebench/config.hpp"
#include "nfebench/models.hpp"
#include "nfebench/objectives.hpp"
#include "nfebench/toydata.hpp"

namespace nfe {

struct RunConfig {
    std::string method = "fm";  // ddpm | edm | fm | multiflow | cd | reflow | bespoke
    DatasetSpec data;
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
    std::uint64_t split_seed = 0;

    TrunkConfig trunk;  // data_dim / cond_dim are taken from the dataset
    ModelHyper hyper;
    bool estimate_sigma_data = true;  // EDM: replace hyper.edm.sigma_data by the pooled std of the training data

    int iterations = 8000;
    int batch_size = 0;  // 0: 16, or 64 for multiflow
    double lr = 1e-3;
    std::vector<int> lr_milestones{800, 1600, 3200, 4800};
    double lr_decay = 0.5;
    std::uint64_t seed = 0;
    bool milestone_checkpoints = true;

    // consistency distillation
    double ema_mu = 0.95;
    int cd_levels = 18;
    TeacherSolver cd_solver = TeacherSolver::euler;
    int early_stop_window = 500;
    double early_stop_rise = 0.2;

    // reflow
    int reflow_steps = 100;
    int reflow_pairs = 0;  // 0: one pair per training row
    double reflow_warn_loss = 5.0;

    // bespoke
    int bespoke_n = 5;
    int bespoke_iterations = 400;
    double bespoke_lr = 0.02;
    int bespoke_trajectories = 512;
    int bespoke_dense_steps = 512;
    BespokeWeights bespoke_weights = BespokeWeights::scale_ratio;

    void validate() const;
    int effective_batch_size() const;
    double lr_at(int iteration) const;  // lr * decay^(milestones passed)
};

RunConfig run_config_from_doc(const ConfigDoc& doc);
nlohmann::json to_json(const RunConfig& c);

struct TrainResult {
    ConditionalModel model;
    nlohmann::json manifest;
    std::vector<double> losses;
    std::vector<double> lrs;
    bool ok = true;
};

// Stops once the running mean of the last `window` losses rises more than
// `rise` (relative) above the lowest running mean seen so far.
class EarlyStopper {
public:
    EarlyStopper(int window, double rise);
    // Returns true when training should stop.
    bool push(double loss);
    bool improved() const noexcept { return improved_; }
    bool full() const noexcept { return static_cast<int>(recent_.size()) == window_; }
    double running() const noexcept { return running_; }
    double best() const noexcept { return best_; }

private:
    int window_;
    double rise_;
    std::vector<double> recent_;
    std::size_t head_ = 0;
    double sum_ = 0.0;
    double running_ = 0.0;
    double best_ = 0.0;
    bool have_best_ = false;
    bool improved_ = false;
};

// Files written next to a non-empty `out`: the checkpoint itself,
// <out>.manifest.json, and <out>.m<iteration> at LR milestones.
TrainResult train(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out = {});
TrainResult distill_cd(const ConditionalModel& teacher, const RunConfig& cfg, const Dataset& data,
                       const std::filesystem::path& out = {});
TrainResult reflow_retrain(const ConditionalModel& base, const RunConfig& cfg, const Dataset& data,
                           const std::filesystem::path& out = {});

struct BespokeRun {
    BespokeFitResult fit;
    nlohmann::json manifest;
};
BespokeRun fit_bespoke(const ConditionalModel& base, const RunConfig& cfg, const Dataset& data,
                       const std::filesystem::path& out = {});

// sqrt of the mean per-component variance of the rows of y.
double pooled_std(const Tensor& y);

// Content hashes used in manifests.
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_dataset(const Dataset& d);
std::uint64_t hash_params(const ParamSet& p);
std::string hex64(std::uint64_t v);

std::filesystem::path manifest_path(const std::filesystem::path& out);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace nfe

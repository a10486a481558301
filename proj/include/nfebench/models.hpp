#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>

#include "json.hpp"

#include "nfebench/blob.hpp"
#include "nfebench/params.hpp"
#include "nfebench/rng.hpp"
#include "nfebench/schedules.hpp"

namespace nfe {

struct TrunkConfig {
    int data_dim = 2;
    int cond_dim = 1;
    int hidden_dim = 256;
    int depth = 4;
    int time_embed_dim = 16;

    void validate() const;
    int input_dim() const { return data_dim + time_embed_dim + cond_dim; }
    friend bool operator==(const TrunkConfig&, const TrunkConfig&) = default;
};

// What the trunk output means and how it is wrapped.
//   noise_pred    epsilon prediction, time input t/T
//   edm_denoiser  D = c_skip x + c_out F(c_in x, c_noise) with EDM coefficients
//   vector_field  v(x, t), t in [0,1], t = 0 noise and t = 1 data
//   consistency   denoiser with the boundary-respecting coefficients; D(x, sigma_min) = x
enum class Head { noise_pred, edm_denoiser, vector_field, consistency };

std::string to_string(Head h);
Head head_from_string(const std::string& s);

struct ModelHyper {
    int ddpm_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    EdmParams edm;
    friend bool operator==(const ModelHyper&, const ModelHyper&) = default;
};

struct ConditionalModel {
    ParamSet params;
    TrunkConfig config;
    Head head = Head::vector_field;
    std::string method;  // training recipe tag, e.g. "fm", "reflow", "cd"
    ModelHyper hyper;
    nlohmann::json info = nlohmann::json::object();  // final loss etc.
};

ConditionalModel make_model(const TrunkConfig& config, Head head, const ModelHyper& hyper, Rng& rng,
                            std::string method = {});

// Sinusoidal embedding of one scalar per row: [sin(f_k tau), cos(f_k tau)],
// frequencies geometric from 1 to 64. Odd dims append tau itself.
Tensor time_embedding(std::span<const double> tau, int dim);

// Raw MLP on the tape: input concat(x, temb, cond) -> SiLU hidden layers -> data_dim.
Var trunk_forward(Tape& tape, const VarMap& params, const TrunkConfig& cfg, Var x, const Tensor& temb,
                  const Tensor& cond);
// Same network evaluated without a tape.
Tensor trunk_eval(const ParamSet& params, const TrunkConfig& cfg, const Tensor& x, const Tensor& temb,
                  const Tensor& cond);

// Head output on the tape, one time/noise level per row.
using TapePredictor = std::function<Var(Tape&, Var x, std::span<const double> times, const Tensor& cond)>;
// Head output by value.
using FieldFn = std::function<Tensor(const Tensor& x, std::span<const double> times, const Tensor& cond)>;

TapePredictor tape_predictor(const ConditionalModel& model, const VarMap& params);
FieldFn model_field(const ConditionalModel& model);

// Wraps a raw-network predictor F with EDM or consistency preconditioning.
TapePredictor precondition(TapePredictor raw, Head head, const EdmParams& edm);

Tensor predict_noise(const ConditionalModel& m, const Tensor& x, int t, const Tensor& cond);
Tensor denoise(const ConditionalModel& m, const Tensor& x, double sigma, const Tensor& cond);
Tensor velocity(const ConditionalModel& m, const Tensor& x, double t, const Tensor& cond);

Blob model_to_blob(const ConditionalModel& m);
ConditionalModel model_from_blob(const Blob& b);
void save_model(const std::filesystem::path& path, const ConditionalModel& m);
ConditionalModel load_model(const std::filesystem::path& path);

nlohmann::json to_json(const TrunkConfig& c);
TrunkConfig trunk_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelHyper& h);
ModelHyper hyper_from_json(const nlohmann::json& j);

}  // namespace nfe

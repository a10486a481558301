#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nfebench/bespoke.hpp"
#include "nfebench/config.hpp"
#include "nfebench/models.hpp"
#include "nfebench/toydata.hpp"

namespace nfe {

const std::vector<std::string>& sweep_method_names();  // flow reflow multiflow bespoke ddpm_ddim edm cd
std::vector<int> default_nfe_list();

struct SweepConfig {
    std::vector<std::string> methods;
    std::vector<int> nfe_list = default_nfe_list();
    std::size_t n_eval_samples = 10000;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool timing = false;  // wall_clock_ms is left empty unless set, keeping the CSV byte-stable
    int straightness_samples = 1000;

    std::map<std::string, std::filesystem::path> checkpoints;  // method -> checkpoint
    std::map<int, std::filesystem::path> transforms;           // bespoke n -> transform file
    std::filesystem::path test_data;

    void validate() const;
};

SweepConfig sweep_config_from_doc(const ConfigDoc& doc);

// In-memory sources for a sweep; checkpoints are loaded into this form.
struct SweepInputs {
    std::map<std::string, ConditionalModel> models;  // bespoke uses the "flow" model with a transform
    std::map<int, BespokeTransform> transforms;
    std::map<std::string, std::string> load_errors;   // method -> reason
    Dataset test;
};

SweepInputs load_sweep_inputs(const SweepConfig& cfg);

struct MetricRow {
    std::string method;
    int nfe = 0;
    double frechet = 0.0;
    double similarity = 0.0;
    double transport_cost = 0.0;
    std::optional<double> straightness;
    std::optional<double> wall_clock_ms;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    long audited_nfe = 0;
    bool frechet_regularized = false;
};

struct SkipRecord {
    std::string method;
    int nfe = 0;
    std::string reason;
};

struct SweepResult {
    std::vector<MetricRow> rows;
    std::vector<SkipRecord> skips;
    nlohmann::json provenance = nlohmann::json::object();
};

std::uint64_t cell_seed(std::uint64_t master, const std::string& method, int nfe);

// Runs the sampler matching the model head; a transform is only valid for a
// vector-field model. f is normally model_field(model), possibly counted.
Tensor sample_model(const FieldFn& f, const ConditionalModel& model, const SampleRequest& req,
                    const BespokeTransform* transform = nullptr);

// Draws n_eval samples per (method, nfe) cell in a worker pool; rows come
// back in (method, nfe) order of the config. A cell whose audited
// forward-evaluation count differs from nfe is a hard error.
SweepResult run_sweep(const SweepConfig& cfg, const SweepInputs& inputs);

extern const char* const kCsvHeader;
std::string sweep_csv(const SweepResult& r);
std::string skips_csv(const SweepResult& r);
std::string format_number(double v);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
// Throws naming the 1-based data row on malformed input.
CsvTable parse_sweep_csv(const std::string& text);

std::string report_markdown(const CsvTable& t, const std::string& metric = "frechet");
std::string report_svg(const CsvTable& t, const std::string& metric = "frechet", bool log_y = false);

}  // namespace nfe

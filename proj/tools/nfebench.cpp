#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "nfebench/error.hpp"
#include "nfebench/harness.hpp"
#include "nfebench/samplers.hpp"
#include "nfebench/training.hpp"

namespace fs = std::filesystem;
using namespace nfe;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    int jobs = 1;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void check_writable(const fs::path& p, bool force) {
    if (p.empty()) throw UsageError("--out is required");
    if (fs::exists(p) && !force) throw Error("'" + p.string() + "' exists; pass --force to overwrite");
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f || !(f << s)) throw IoError("cannot write '" + p.string() + "'");
}

RunConfig load_run_config(const Globals& g) {
    RunConfig c = g.config.empty() ? RunConfig{} : run_config_from_doc(load_config(g.config));
    if (g.seed) c.seed = *g.seed;
    return c;
}

// Training rows: an explicit dataset file as-is, else the train split of the configured dataset.
Dataset training_data(const RunConfig& c, const std::string& data_path) {
    if (!data_path.empty()) return load_dataset(data_path);
    return split(generate(c.data), c.split_fractions, c.split_seed).train;
}

void report_run(const nlohmann::json& manifest, const fs::path& out) {
    std::cout << manifest.value("method", "") << ": status " << manifest.value("status", "") << ", final loss "
              << manifest.value("final_loss", nlohmann::json(nullptr)).dump() << ", wrote " << out.string() << '\n';
}

int run_gen_data(const Globals& g, const std::string& kind, std::optional<std::size_t> n, const std::string& split_arg,
                 std::uint64_t split_seed) {
    RunConfig c = g.config.empty() ? RunConfig{} : run_config_from_doc(load_config(g.config));
    if (!kind.empty()) c.data.kind = dataset_kind_from_string(kind);
    if (n) c.data.n = *n;
    if (g.seed) c.data.seed = *g.seed;
    const fs::path out = g.out;
    check_writable(out, g.force);
    const Dataset d = generate(c.data);
    save_dataset(out, d);
    std::cout << "wrote " << d.size() << " rows of " << to_string(c.data.kind) << " to " << out.string() << '\n';
    if (!split_arg.empty()) {
        std::array<double, 3> fr{};
        std::istringstream ss(split_arg);
        std::string tok;
        std::size_t i = 0;
        while (std::getline(ss, tok, ',')) {
            if (i >= 3) throw UsageError("--split takes three comma-separated fractions");
            fr[i++] = std::stod(tok);
        }
        if (i != 3) throw UsageError("--split takes three comma-separated fractions");
        const DatasetSplit s = split(d, fr, split_seed);
        const std::pair<const char*, const Dataset*> parts[] = {{".train", &s.train}, {".eval", &s.eval}, {".test", &s.test}};
        for (const auto& [suffix, part] : parts) {
            const fs::path p = out.string() + suffix;
            check_writable(p, g.force);
            save_dataset(p, *part);
            std::cout << "wrote " << part->size() << " rows to " << p.string() << '\n';
        }
    }
    return 0;
}

int run_sample(const Globals& g, const std::string& ckpt, int nfe, std::size_t n, const std::string& data_path,
               const std::string& transform_path) {
    const ConditionalModel m = load_model(ckpt);
    check_writable(g.out, g.force);
    SampleRequest req;
    req.nfe = nfe;
    req.data_dim = m.config.data_dim;
    req.n_samples = n;
    req.seed = g.seed.value_or(0);
    if (!data_path.empty()) {
        const Dataset d = load_dataset(data_path);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i % d.size();
        req.cond = d.cond.gather_rows(idx);
    } else {
        if (m.config.cond_dim != 1) throw UsageError("conditional checkpoint: pass --data to supply conditions");
        req.cond = Tensor::matrix(n, 1);
    }
    if (req.cond.cols() != static_cast<std::size_t>(m.config.cond_dim))
        throw Error("dataset cond_dim does not match the checkpoint");
    EvalCounter counter;
    const FieldFn f = counted(model_field(m), counter);
    std::optional<BespokeTransform> transform;
    if (!transform_path.empty()) transform = load_transform(transform_path);
    const Tensor x = sample_model(f, m, req, transform ? &*transform : nullptr);
    Blob b;
    b.header["kind"] = "samples";
    b.header["method"] = m.method;
    b.header["nfe"] = nfe;
    b.header["audited_nfe"] = counter.count();
    b.header["seed"] = req.seed;
    b.tensors.emplace("x", x);
    b.tensors.emplace("cond", req.cond);
    write_blob(g.out, b);
    std::cout << "wrote " << n << " samples (" << counter.count() << " forward evaluations) to " << g.out << '\n';
    return 0;
}

int run_sweep_cmd(const Globals& g, bool timing, bool jobs_given) {
    if (g.config.empty()) throw UsageError("sweep requires --config");
    SweepConfig c = sweep_config_from_doc(load_config(g.config));
    if (g.seed) c.seed = *g.seed;
    if (jobs_given) c.jobs = g.jobs;
    if (timing) c.timing = true;
    const fs::path out = g.out;
    check_writable(out, g.force);
    const SweepInputs in = load_sweep_inputs(c);
    const SweepResult r = run_sweep(c, in);
    write_file(out, sweep_csv(r));
    write_file(out.string() + ".skips.csv", skips_csv(r));
    write_json(out.string() + ".provenance.json", r.provenance);
    std::cout << r.rows.size() << " cells, " << r.skips.size() << " skipped; wrote " << out.string() << '\n';
    for (const auto& s : r.skips) std::cerr << "skip " << s.method << " nfe=" << s.nfe << ": " << s.reason << '\n';
    return r.rows.empty() ? 2 : 0;
}

int run_report(const Globals& g, const std::string& csv, const std::string& format, const std::string& metric, bool log_y) {
    const CsvTable t = parse_sweep_csv(read_file(csv));
    if (format == "md" || format == "both") {
        const std::string md = report_markdown(t, metric);
        if (g.out.empty()) {
            std::cout << md;
        } else {
            const fs::path p = format == "both" ? fs::path(g.out + ".md") : fs::path(g.out);
            check_writable(p, g.force);
            write_file(p, md);
        }
    }
    if (format == "svg" || format == "both") {
        if (g.out.empty()) throw UsageError("svg output requires --out");
        const fs::path p = format == "both" ? fs::path(g.out + ".svg") : fs::path(g.out);
        check_writable(p, g.force);
        write_file(p, report_svg(t, metric, log_y));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train, sample and benchmark few-step generative samplers on synthetic data"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Sectioned key-value config file");
    app.add_option("--seed", g.seed, "Seed override");
    app.add_option("--out", g.out, "Output path");
    app.add_flag("--force", g.force, "Overwrite existing outputs");
    auto* jobs_opt = app.add_option("--jobs", g.jobs, "Worker threads for sweeps")->check(CLI::PositiveNumber);

    std::string kind, split_arg;
    std::optional<std::size_t> n_rows;
    std::uint64_t split_seed = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--kind", kind, "two_gaussians | gaussian_ring | checkerboard | cond_upsample");
    gen->add_option("--n", n_rows, "Number of rows");
    gen->add_option("--split", split_arg, "Also write <out>.train/.eval/.test with these fractions, e.g. 0.8,0.1,0.1");
    gen->add_option("--split-seed", split_seed, "Seed of the split permutation");

    std::string data_path, teacher, base, ckpt, transform, csv, format = "md", metric = "frechet";
    std::optional<int> bespoke_n;
    int nfe = 1;
    std::size_t n_samples = 1000;
    bool timing = false, log_y = false;

    auto* train_cmd = app.add_subcommand("train", "Train a ddpm, edm, fm or multiflow model");
    train_cmd->add_option("--data", data_path, "Training dataset file (default: train split of [data])");

    auto* distill = app.add_subcommand("distill", "Consistency-distill an EDM teacher");
    distill->add_option("--teacher", teacher, "Teacher checkpoint")->required();
    distill->add_option("--data", data_path, "Training dataset file");

    auto* reflow = app.add_subcommand("reflow", "Retrain a flow model on its own noise/sample pairs");
    reflow->add_option("--base", base, "Base flow checkpoint")->required();
    reflow->add_option("--data", data_path, "Dataset supplying conditions");

    auto* bespoke = app.add_subcommand("fit-bespoke", "Fit a bespoke scale-time solver to a flow model");
    bespoke->add_option("--base", base, "Base flow checkpoint")->required();
    bespoke->add_option("--data", data_path, "Dataset supplying conditions");
    bespoke->add_option("--n", bespoke_n, "Number of solver steps");

    auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
    sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
    sample->add_option("--nfe", nfe, "Forward evaluations")->check(CLI::PositiveNumber);
    sample->add_option("--n", n_samples, "Number of samples");
    sample->add_option("--data", data_path, "Dataset whose conditions are cycled");
    sample->add_option("--transform", transform, "Bespoke transform for a flow checkpoint");

    auto* sweep = app.add_subcommand("sweep", "Evaluate every (method, NFE) cell");
    sweep->add_flag("--timing", timing, "Record wall_clock_ms (makes the CSV run-dependent)");

    auto* report = app.add_subcommand("report", "Render a sweep CSV as markdown and/or SVG");
    report->add_option("csv", csv, "Sweep CSV")->required();
    report->add_option("--format", format, "md | svg | both")->check(CLI::IsMember({"md", "svg", "both"}));
    report->add_option("--metric", metric, "Column to tabulate");
    report->add_flag("--log-y", log_y, "Logarithmic metric axis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen_data(g, kind, n_rows, split_arg, split_seed);
        if (sample->parsed()) return run_sample(g, ckpt, nfe, n_samples, data_path, transform);
        if (sweep->parsed()) return run_sweep_cmd(g, timing, jobs_opt->count() > 0);
        if (report->parsed()) return run_report(g, csv, format, metric, log_y);

        if (g.config.empty()) throw UsageError("--config is required");
        RunConfig c = load_run_config(g);
        const fs::path out = g.out;
        check_writable(out, g.force);
        if (train_cmd->parsed()) {
            const TrainResult r = train(c, training_data(c, data_path), out);
            report_run(r.manifest, out);
            return r.ok ? 0 : 2;
        }
        if (distill->parsed()) {
            const TrainResult r = distill_cd(load_model(teacher), c, training_data(c, data_path), out);
            report_run(r.manifest, out);
            return r.ok ? 0 : 2;
        }
        if (reflow->parsed()) {
            const TrainResult r = reflow_retrain(load_model(base), c, training_data(c, data_path), out);
            report_run(r.manifest, out);
            for (const auto& w : r.manifest["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
            return r.ok ? 0 : 2;
        }
        if (bespoke->parsed()) {
            if (bespoke_n) c.bespoke_n = *bespoke_n;
            const BespokeRun r = fit_bespoke(load_model(base), c, training_data(c, data_path), out);
            std::cout << "bespoke n=" << c.bespoke_n << ": val loss " << r.fit.val_loss << " (identity "
                      << r.fit.identity_val_loss << "), wrote " << out.string() << '\n';
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

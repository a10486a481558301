#include "nfebench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "nfebench/error.hpp"
#include "nfebench/metrics.hpp"
#include "nfebench/samplers.hpp"
#include "nfebench/training.hpp"

namespace nfe {

using nlohmann::json;

const char* const kCsvHeader = "method,nfe,frechet,similarity,transport_cost,straightness,wall_clock_ms,n_samples,seed";

namespace {

bool flow_family(const std::string& m) { return m == "flow" || m == "reflow" || m == "multiflow" || m == "bespoke"; }

// Checkpoint a sweep method reads, and the head it must carry.
std::string model_key(const std::string& method) { return method == "bespoke" ? "flow" : method; }

Head required_head(const std::string& method) {
    if (flow_family(method)) return Head::vector_field;
    if (method == "ddpm_ddim") return Head::noise_pred;
    if (method == "edm") return Head::edm_denoiser;
    return Head::consistency;
}

struct CellOutcome {
    std::optional<MetricRow> row;
    std::optional<SkipRecord> skip;
    std::string audit_error;
};

std::vector<std::size_t> eval_rows(std::uint64_t seed, std::size_t n_test, std::size_t n) {
    Rng rng = Rng(seed).split("rows");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.index(n_test);
    return idx;
}

CellOutcome eval_cell(const SweepConfig& cfg, const SweepInputs& in, const std::string& method, int nfe,
                      const std::map<std::string, double>& straight) {
    CellOutcome out;
    auto skip = [&](std::string reason) {
        out.skip = SkipRecord{method, nfe, std::move(reason)};
        return out;
    };
    const std::string key = model_key(method);
    if (auto e = in.load_errors.find(key); e != in.load_errors.end()) return skip(e->second);
    auto mit = in.models.find(key);
    if (mit == in.models.end()) return skip("no checkpoint configured for '" + key + "'");
    const ConditionalModel& model = mit->second;
    const BespokeTransform* transform = nullptr;
    if (method == "bespoke") {
        auto t = in.transforms.find(nfe);
        if (t == in.transforms.end()) return skip("no bespoke transform fitted for n=" + std::to_string(nfe));
        transform = &t->second;
    }

    const std::uint64_t seed = cell_seed(cfg.seed, method, nfe);
    const auto idx = eval_rows(seed, in.test.size(), cfg.n_eval_samples);
    SampleRequest req;
    req.nfe = nfe;
    req.data_dim = model.config.data_dim;
    req.cond = in.test.cond.gather_rows(idx);
    req.n_samples = idx.size();
    req.seed = seed;

    EvalCounter counter;
    const FieldFn f = counted(model_field(model), counter);
    const auto t0 = std::chrono::steady_clock::now();
    Tensor x;
    try {
        if (method == "bespoke") {
            x = bespoke_euler_sample(f, *transform, req);
        } else if (flow_family(method)) {
            x = fm_euler_sample(f, req);
        } else if (method == "ddpm_ddim") {
            const ModelHyper& h = model.hyper;
            x = ddim_sample(f, make_ddpm_schedule(h.ddpm_T, h.beta_start, h.beta_end), req);
        } else if (method == "edm") {
            x = edm_euler_sample(f, edm_sampling_sigmas(nfe, model.hyper.edm), req);
        } else {
            const EdmParams& e = model.hyper.edm;
            x = consistency_sample(f, karras_sigma_grid(nfe + 1, e.sigma_min, e.sigma_max, e.rho), req);
        }
    } catch (const InvalidArgument& e) {
        return skip(e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (counter.count() != nfe) {
        out.audit_error = method + " at nfe " + std::to_string(nfe) + ": audited " + std::to_string(counter.count()) +
                          " forward evaluations";
        return out;
    }

    MetricRow row;
    row.method = method;
    row.nfe = nfe;
    const FrechetResult fr = frechet_distance(x, in.test.y);
    row.frechet = fr.value;
    row.frechet_regularized = fr.regularized;
    row.similarity = similarity_score(x, in.test.y.gather_rows(idx)).value;
    row.transport_cost = transport_cost(sampler_noise(req), x);
    if (auto s = straight.find(key); s != straight.end() && flow_family(method)) row.straightness = s->second;
    if (cfg.timing) row.wall_clock_ms = ms;
    row.n_samples = idx.size();
    row.seed = seed;
    row.audited_nfe = counter.count();
    out.row = row;
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_double(const std::string& s, double& v) {
    if (s.empty()) return false;
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(v);
}

std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::size_t column_of(const CsvTable& t, const std::string& name) {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw InvalidArgument("report: unknown metric column '" + name + "'");
    return static_cast<std::size_t>(it - t.header.begin());
}

struct Grid {
    std::vector<std::string> methods;
    std::vector<int> nfes;
    std::map<std::pair<std::string, int>, std::string> cells;
};

Grid to_grid(const CsvTable& t, const std::string& metric) {
    const std::size_t col = column_of(t, metric);
    Grid g;
    std::set<int> nfes;
    for (const auto& r : t.rows) {
        if (std::find(g.methods.begin(), g.methods.end(), r[0]) == g.methods.end()) g.methods.push_back(r[0]);
        const int nfe = std::stoi(r[1]);
        nfes.insert(nfe);
        g.cells[{r[0], nfe}] = r[col];
    }
    g.nfes.assign(nfes.begin(), nfes.end());
    return g;
}

}  // namespace

const std::vector<std::string>& sweep_method_names() {
    static const std::vector<std::string> names{"flow", "reflow", "multiflow", "bespoke", "ddpm_ddim", "edm", "cd"};
    return names;
}

std::vector<int> default_nfe_list() { return {1, 2, 3, 4, 5, 6, 8, 10, 20, 30, 40, 50, 60, 80, 100}; }

void SweepConfig::validate() const {
    if (methods.empty()) throw InvalidArgument("sweep: no methods");
    std::set<std::string> seen;
    for (const auto& m : methods) {
        if (std::find(sweep_method_names().begin(), sweep_method_names().end(), m) == sweep_method_names().end())
            throw InvalidArgument("sweep: unknown method '" + m + "'");
        if (!seen.insert(m).second) throw InvalidArgument("sweep: method '" + m + "' listed twice");
    }
    if (nfe_list.empty()) throw InvalidArgument("sweep: empty nfe list");
    for (std::size_t i = 0; i < nfe_list.size(); ++i)
        if (nfe_list[i] < 1 || (i && nfe_list[i] <= nfe_list[i - 1]))
            throw InvalidArgument("sweep: nfe list must be positive and strictly ascending");
    if (n_eval_samples < 2) throw InvalidArgument("sweep: n_eval_samples must be >= 2");
    if (jobs < 1) throw InvalidArgument("sweep: jobs must be >= 1");
    if (straightness_samples < 1) throw InvalidArgument("sweep: straightness_samples must be >= 1");
}

SweepConfig sweep_config_from_doc(const ConfigDoc& doc) {
    reject_unknown_sections(doc);
    SweepConfig c;
    const json& s = doc.section("sweep");
    auto line = [&](const std::string& k) { return doc.line_of("sweep", k); };
    const std::set<std::string> known{"methods", "nfe", "n_eval_samples", "seed", "jobs", "timing",
                                      "straightness_samples", "test_data"};
    for (const auto& [k, v] : s.items()) {
        if (!known.count(k)) throw ConfigError(line(k), "unknown key '" + k + "' in [sweep]");
        try {
            if (k == "methods") c.methods = v.get<std::vector<std::string>>();
            if (k == "nfe") c.nfe_list = v.get<std::vector<int>>();
            if (k == "n_eval_samples") c.n_eval_samples = v.get<std::size_t>();
            if (k == "seed") c.seed = v.get<std::uint64_t>();
            if (k == "jobs") c.jobs = v.get<int>();
            if (k == "timing") c.timing = v.get<bool>();
            if (k == "straightness_samples") c.straightness_samples = v.get<int>();
            if (k == "test_data") c.test_data = v.get<std::string>();
        } catch (const json::exception&) {
            throw ConfigError(line(k), k + ": wrong value type");
        }
    }
    if (c.methods.empty()) c.methods = sweep_method_names();
    for (const auto& [k, v] : doc.section("checkpoints").items()) {
        if (!v.is_string()) throw ConfigError(doc.line_of("checkpoints", k), k + ": expected a path string");
        if (k == "bespoke") throw ConfigError(doc.line_of("checkpoints", k), "bespoke reads [transforms] and the flow checkpoint");
        c.checkpoints[k] = v.get<std::string>();
    }
    for (const auto& [k, v] : doc.section("transforms").items()) {
        const int ln = doc.line_of("transforms", k);
        int n = 0;
        try {
            std::size_t pos = 0;
            n = std::stoi(k, &pos);
            if (pos != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
            throw ConfigError(ln, "transform keys are step counts, got '" + k + "'");
        }
        if (!v.is_string()) throw ConfigError(ln, k + ": expected a path string");
        c.transforms[n] = v.get<std::string>();
    }
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(0, e.what());
    }
    return c;
}

SweepInputs load_sweep_inputs(const SweepConfig& cfg) {
    SweepInputs in;
    if (cfg.test_data.empty()) throw InvalidArgument("sweep: test_data is not set");
    in.test = load_dataset(cfg.test_data);
    std::set<std::string> needed;
    for (const auto& m : cfg.methods) needed.insert(model_key(m));
    for (const auto& key : needed) {
        auto it = cfg.checkpoints.find(key);
        if (it == cfg.checkpoints.end()) {
            in.load_errors[key] = "no checkpoint configured for '" + key + "'";
            continue;
        }
        try {
            ConditionalModel m = load_model(it->second);
            const Head want = required_head(key);
            if (m.head != want)
                throw InvalidArgument("checkpoint head " + to_string(m.head) + ", expected " + to_string(want));
            in.models.emplace(key, std::move(m));
        } catch (const Error& e) {
            in.load_errors[key] = "checkpoint '" + it->second.string() + "': " + e.what();
        }
    }
    for (const auto& [n, path] : cfg.transforms) {
        try {
            in.transforms.emplace(n, load_transform(path));
        } catch (const Error& e) {
            in.load_errors["bespoke@" + std::to_string(n)] = e.what();
        }
    }
    return in;
}

std::uint64_t cell_seed(std::uint64_t master, const std::string& method, int nfe) {
    return splitmix64(master ^ fnv1a64(method + ":" + std::to_string(nfe)));
}

Tensor sample_model(const FieldFn& f, const ConditionalModel& model, const SampleRequest& req,
                    const BespokeTransform* transform) {
    if (transform && model.head != Head::vector_field)
        throw InvalidArgument("a bespoke transform needs a vector-field model");
    switch (model.head) {
        case Head::vector_field:
            return transform ? bespoke_euler_sample(f, *transform, req) : fm_euler_sample(f, req);
        case Head::noise_pred: {
            const ModelHyper& h = model.hyper;
            return ddim_sample(f, make_ddpm_schedule(h.ddpm_T, h.beta_start, h.beta_end), req);
        }
        case Head::edm_denoiser:
            return edm_euler_sample(f, edm_sampling_sigmas(req.nfe, model.hyper.edm), req);
        case Head::consistency: {
            const EdmParams& e = model.hyper.edm;
            return consistency_sample(f, karras_sigma_grid(req.nfe + 1, e.sigma_min, e.sigma_max, e.rho), req);
        }
    }
    throw InvalidArgument("unknown model head");
}

SweepResult run_sweep(const SweepConfig& cfg, const SweepInputs& inputs) {
    cfg.validate();
    if (inputs.test.size() == 0) throw InvalidArgument("sweep: empty test data");

    // Straightness is a per-model property: measured once on a fixed noise set.
    std::map<std::string, double> straight;
    for (const auto& m : cfg.methods) {
        const std::string key = model_key(m);
        auto it = inputs.models.find(key);
        if (!flow_family(m) || it == inputs.models.end() || straight.count(key)) continue;
        const std::uint64_t s = cell_seed(cfg.seed, key, 0);
        const auto idx = eval_rows(s, inputs.test.size(), static_cast<std::size_t>(cfg.straightness_samples));
        Rng rng = Rng(s).split("noise");
        const Tensor x0 = rng.normal_tensor(idx.size(), static_cast<std::size_t>(it->second.config.data_dim));
        straight[key] = straightness(model_field(it->second), x0, inputs.test.cond.gather_rows(idx), 64);
    }

    std::vector<std::pair<std::string, int>> cells;
    for (const auto& m : cfg.methods)
        for (int n : cfg.nfe_list) cells.emplace_back(m, n);
    std::vector<CellOutcome> outcomes(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                outcomes[i] = eval_cell(cfg, inputs, cells[i].first, cells[i].second, straight);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult r;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        if (!outcomes[i].audit_error.empty()) throw Error("NFE audit failed: " + outcomes[i].audit_error);
        if (outcomes[i].row) r.rows.push_back(*outcomes[i].row);
        if (outcomes[i].skip) r.skips.push_back(*outcomes[i].skip);
    }
    for (const auto& [key, m] : inputs.models) {
        json p;
        p["method_tag"] = m.method;
        p["head"] = to_string(m.head);
        p["param_hash"] = hex64(hash_params(m.params));
        p["info"] = m.info;
        if (auto c = cfg.checkpoints.find(key); c != cfg.checkpoints.end()) p["checkpoint"] = c->second.string();
        r.provenance["models"][key] = p;
    }
    for (const auto& [n, path] : cfg.transforms) r.provenance["transforms"][std::to_string(n)] = path.string();
    r.provenance["test_data_hash"] = hex64(hash_dataset(inputs.test));
    r.provenance["cells_requested"] = cells.size();
    r.provenance["rows"] = r.rows.size();
    r.provenance["skips"] = r.skips.size();
    return r;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string sweep_csv(const SweepResult& r) {
    std::ostringstream o;
    o << kCsvHeader << '\n';
    for (const auto& row : r.rows) {
        o << row.method << ',' << row.nfe << ',' << format_number(row.frechet) << ',' << format_number(row.similarity)
          << ',' << format_number(row.transport_cost) << ','
          << (row.straightness ? format_number(*row.straightness) : std::string()) << ','
          << (row.wall_clock_ms ? format_number(*row.wall_clock_ms) : std::string()) << ',' << row.n_samples << ','
          << row.seed << '\n';
    }
    return o.str();
}

std::string skips_csv(const SweepResult& r) {
    std::ostringstream o;
    o << "method,nfe,reason\n";
    for (const auto& s : r.skips) {
        std::string reason = s.reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        std::replace(reason.begin(), reason.end(), '\n', ' ');
        o << s.method << ',' << s.nfe << ',' << reason << '\n';
    }
    return o.str();
}

CsvTable parse_sweep_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    CsvTable t;
    if (!std::getline(in, line)) throw InvalidArgument("csv: empty input");
    t.header = split_csv_line(line);
    if (t.header != split_csv_line(kCsvHeader))
        throw InvalidArgument(std::string("csv: header must be '") + kCsvHeader + "'");
    int row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        const std::string where = "csv row " + std::to_string(row_no) + ": ";
        if (f.size() != t.header.size())
            throw InvalidArgument(where + "expected " + std::to_string(t.header.size()) + " fields, got " +
                                  std::to_string(f.size()));
        if (f[0].empty()) throw InvalidArgument(where + "empty method");
        try {
            std::size_t pos = 0;
            const int nfe = std::stoi(f[1], &pos);
            if (pos != f[1].size() || nfe < 1) throw std::invalid_argument(f[1]);
        } catch (const std::exception&) {
            throw InvalidArgument(where + "nfe '" + f[1] + "' is not a positive integer");
        }
        for (std::size_t c = 2; c < f.size(); ++c) {
            double v = 0.0;
            if (!f[c].empty() && !parse_double(f[c], v))
                throw InvalidArgument(where + t.header[c] + " '" + f[c] + "' is not a number");
        }
        t.rows.push_back(std::move(f));
    }
    return t;
}

std::string report_markdown(const CsvTable& t, const std::string& metric) {
    const Grid g = to_grid(t, metric);
    std::ostringstream o;
    o << "| " << metric << " \\ NFE |";
    for (int n : g.nfes) o << ' ' << n << " |";
    o << "\n|---|";
    for (std::size_t i = 0; i < g.nfes.size(); ++i) o << "---|";
    o << '\n';
    for (const auto& m : g.methods) {
        o << "| " << m << " |";
        for (int n : g.nfes) {
            auto it = g.cells.find({m, n});
            o << ' ' << (it == g.cells.end() ? std::string() : it->second) << " |";
        }
        o << '\n';
    }
    return o.str();
}

std::string report_svg(const CsvTable& t, const std::string& metric, bool log_y) {
    const Grid g = to_grid(t, metric);
    const double W = 720, H = 440, L = 70, R = 150, T = 30, B = 50;
    struct Pt {
        double x, y;
    };
    std::map<std::string, std::vector<Pt>> series;
    double ymin = INFINITY, ymax = -INFINITY;
    for (const auto& m : g.methods)
        for (int n : g.nfes) {
            auto it = g.cells.find({m, n});
            double v = 0.0;
            if (it == g.cells.end() || !parse_double(it->second, v)) continue;
            if (log_y && !(v > 0.0)) continue;
            const double y = log_y ? std::log10(v) : v;
            series[m].push_back({std::log10(static_cast<double>(n)), y});
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(ymin <= ymax)) ymin = 0.0, ymax = 1.0;
    if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
    const double xmin = g.nfes.empty() ? 0.0 : std::log10(static_cast<double>(g.nfes.front()));
    double xmax = g.nfes.empty() ? 1.0 : std::log10(static_cast<double>(g.nfes.back()));
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
                                   "#7f7f7f", "#bcbd22", "#17becf"};

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int n : g.nfes) {
        const double x = px(std::log10(static_cast<double>(n)));
        o << "<text x=\"" << format_number(x) << "\" y=\"" << H - B + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
          << n << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double y = ymin + (ymax - ymin) * k / 4.0;
        const double shown = log_y ? std::pow(10.0, y) : y;
        o << "<text x=\"" << L - 6 << "\" y=\"" << format_number(py(y) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
          << tick_label(shown) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" font-size=\"12\" text-anchor=\"middle\">NFE</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << xml_escape(metric) << (log_y ? " (log)" : "") << "</text>\n";
    std::size_t ci = 0;
    for (const auto& m : g.methods) {
        const char* color = colors[ci % 10];
        const auto& pts = series[m];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" data-method=\"" << xml_escape(m)
          << "\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i)
            o << (i ? " " : "") << format_number(px(pts[i].x)) << ',' << format_number(py(pts[i].y));
        o << "\"/>\n";
        const double ly = T + 16.0 * static_cast<double>(ci);
        o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << xml_escape(m) << "</text>\n";
        ++ci;
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace nfe

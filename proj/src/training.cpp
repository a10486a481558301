#include "nfebench/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "nfebench/error.hpp"
#include "nfebench/samplers.hpp"

namespace nfe {

using nlohmann::json;

namespace {

const std::set<std::string> kMethods{"ddpm", "edm", "fm", "multiflow", "cd", "reflow", "bespoke"};

// Typed lookup that reports the offending line.
class Reader {
public:
    explicit Reader(const ConfigDoc& doc) : doc_(doc) {}

    template <class T>
    void get(const std::string& sec, const std::string& key, T& out) {
        seen_.insert(sec + "." + key);
        if (!doc_.has(sec, key)) return;
        const json& v = doc_.root.at(sec).at(key);
        const int line = doc_.line_of(sec, key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(line, key + ": expected a number");
                out = v.get<double>();
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(line, key + ": expected true or false");
                out = v.get<bool>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(line, key + ": expected a string");
                out = v.get<std::string>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError(line, key + ": expected an integer");
                if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)
                    throw ConfigError(line, key + ": expected a non-negative integer");
                out = v.get<T>();
            } else {
                out = v.get<T>();
            }
        } catch (const json::exception&) {
            throw ConfigError(line, key + ": wrong value type");
        }
    }

    int line(const std::string& sec, const std::string& key) const { return doc_.line_of(sec, key); }

    // Every key of the listed sections must have been consumed.
    void reject_unknown(const std::set<std::string>& sections) const {
        for (const auto& [sec, body] : doc_.root.items()) {
            if (!sections.count(sec)) continue;
            for (const auto& [key, _] : body.items())
                if (!seen_.count(sec + "." + key))
                    throw ConfigError(doc_.line_of(sec, key), "unknown key '" + key + "' in [" + sec + "]");
        }
    }

private:
    const ConfigDoc& doc_;
    std::set<std::string> seen_;
};

std::string solver_name(TeacherSolver s) { return s == TeacherSolver::heun ? "heun" : "euler"; }
std::string weights_name(BespokeWeights w) { return w == BespokeWeights::uniform ? "uniform" : "scale_ratio"; }

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

std::vector<std::size_t> draw_rows(Rng& rng, std::size_t n, std::size_t b) {
    std::vector<std::size_t> idx(b);
    for (auto& i : idx) i = rng.index(n);
    return idx;
}

TrunkConfig trunk_for(const RunConfig& cfg, const Dataset& data) {
    TrunkConfig t = cfg.trunk;
    t.data_dim = static_cast<int>(data.y.cols());
    t.cond_dim = static_cast<int>(data.cond.cols());
    return t;
}

// Shared optimization loop. `step` builds the loss graph for one iteration.
struct LoopState {
    std::vector<double> losses;
    std::vector<double> lrs;
    std::vector<std::string> milestone_files;
    std::string status = "ok";
    int iterations_run = 0;
};

using StepFn = std::function<LossAndGrads(int iteration, ParamSet& params)>;
using AfterFn = std::function<bool(int iteration, double loss)>;  // true: stop

LoopState run_loop(const RunConfig& cfg, ConditionalModel& model, const StepFn& step, const AfterFn& after,
                   const std::filesystem::path& out) {
    LoopState st;
    int bad = 0;
    std::size_t next_milestone = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        const double lr = cfg.lr_at(it);
        st.lrs.push_back(lr);
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
            LossAndGrads lg = step(it, model.params);
            loss = lg.loss;
            if (std::isfinite(loss)) adam_step(model.params, lg.grads, lr, 0.9, 0.999, 1e-8);
        } catch (const NonFiniteError&) {
            loss = std::numeric_limits<double>::quiet_NaN();
        }
        st.losses.push_back(loss);
        st.iterations_run = it + 1;
        if (!std::isfinite(loss)) {
            if (++bad >= 3) {
                st.status = "diverged";
                break;
            }
            continue;
        }
        bad = 0;
        const bool stop = after && after(it, loss);
        while (next_milestone < cfg.lr_milestones.size() && it + 1 >= cfg.lr_milestones[next_milestone]) {
            if (!out.empty() && cfg.milestone_checkpoints) {
                const std::filesystem::path p = out.string() + ".m" + std::to_string(cfg.lr_milestones[next_milestone]);
                save_model(p, model);
                st.milestone_files.push_back(p.string());
            }
            ++next_milestone;
        }
        if (stop) {
            st.status = "early_stopped";
            break;
        }
    }
    return st;
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t i = v.size(); i > 0 && used < n; --i)
        if (std::isfinite(v[i - 1])) {
            acc += v[i - 1];
            ++used;
        }
    return used ? acc / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json make_manifest(const RunConfig& cfg, const std::string& input_hash, const LoopState& st, double wall_ms,
                   const std::filesystem::path& out) {
    json m;
    m["kind"] = "run_manifest";
    m["method"] = cfg.method;
    m["config"] = to_json(cfg);
    m["input_hash"] = input_hash;
    m["status"] = st.status;
    m["iterations_run"] = st.iterations_run;
    json losses = json::array();
    for (double l : st.losses) losses.push_back(finite_or_null(l));
    m["loss_curve"] = losses;
    m["lr_curve"] = st.lrs;
    m["final_loss"] = finite_or_null(tail_mean(st.losses, 100));
    m["wall_clock_ms"] = wall_ms;
    m["checkpoint"] = out.empty() ? json(nullptr) : json(out.string());
    m["milestone_checkpoints"] = st.milestone_files;
    return m;
}

std::string input_hash(const RunConfig& cfg, const Dataset& data, std::uint64_t extra = 0) {
    std::uint64_t h = fnv1a64(to_json(cfg).dump());
    h = fnv1a64(hex64(hash_dataset(data)), h);
    if (extra) h = fnv1a64(hex64(extra), h);
    return hex64(h);
}

void finish(TrainResult& r, const LoopState& st, const RunConfig& cfg, const std::string& hash, double t0,
            const std::filesystem::path& out) {
    r.ok = st.status != "diverged";
    r.losses = st.losses;
    r.lrs = st.lrs;
    r.model.info["final_loss"] = finite_or_null(tail_mean(st.losses, 100));
    r.model.info["status"] = st.status;
    r.model.info["iterations_run"] = st.iterations_run;
    r.model.info["input_hash"] = hash;
    if (!out.empty() && r.ok) save_model(out, r.model);
    r.manifest = make_manifest(cfg, hash, st, now_ms() - t0, r.ok ? out : std::filesystem::path{});
    if (!out.empty()) write_json(manifest_path(out), r.manifest);
}

}  // namespace

void RunConfig::validate() const {
    if (!kMethods.count(method)) throw InvalidArgument("unknown method '" + method + "'");
    data.validate();
    if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
    if (batch_size < 0) throw InvalidArgument("batch_size must be >= 0");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be > 0");
    if (!(lr_decay > 0.0)) throw InvalidArgument("lr_decay must be > 0");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i)
        if (lr_milestones[i] < 1 || (i && lr_milestones[i] <= lr_milestones[i - 1]))
            throw InvalidArgument("lr_milestones must be positive and strictly increasing");
    if (!(ema_mu >= 0.0 && ema_mu <= 1.0)) throw InvalidArgument("ema_mu must lie in [0, 1]");
    if (cd_levels < 2) throw InvalidArgument("cd levels must be >= 2");
    if (early_stop_window < 1 || !(early_stop_rise > 0.0)) throw InvalidArgument("bad early-stop settings");
    if (reflow_steps < 1 || reflow_pairs < 0) throw InvalidArgument("bad reflow settings");
    if (bespoke_n < 1 || bespoke_iterations < 0 || bespoke_trajectories < 2 || bespoke_dense_steps < 1)
        throw InvalidArgument("bad bespoke settings");
    TrunkConfig t = trunk;
    t.data_dim = data.data_dim();
    t.cond_dim = data.cond_dim();
    t.validate();
}

int RunConfig::effective_batch_size() const {
    if (batch_size > 0) return batch_size;
    return method == "multiflow" ? 64 : 16;
}

double RunConfig::lr_at(int iteration) const {
    int passed = 0;
    for (int m : lr_milestones)
        if (iteration >= m) ++passed;
    return lr * std::pow(lr_decay, passed);
}

RunConfig run_config_from_doc(const ConfigDoc& doc) {
    RunConfig c;
    Reader r(doc);
    r.get("run", "method", c.method);
    r.get("run", "iterations", c.iterations);
    r.get("run", "batch_size", c.batch_size);
    r.get("run", "lr", c.lr);
    r.get("run", "lr_milestones", c.lr_milestones);
    r.get("run", "lr_decay", c.lr_decay);
    r.get("run", "seed", c.seed);
    r.get("run", "milestone_checkpoints", c.milestone_checkpoints);

    std::string kind = to_string(c.data.kind);
    r.get("data", "kind", kind);
    try {
        c.data.kind = dataset_kind_from_string(kind);
    } catch (const InvalidArgument& e) {
        throw ConfigError(r.line("data", "kind"), e.what());
    }
    r.get("data", "n", c.data.n);
    r.get("data", "seed", c.data.seed);
    r.get("data", "mode_offset", c.data.mode_offset);
    r.get("data", "mode_std", c.data.mode_std);
    r.get("data", "ring_count", c.data.ring_count);
    r.get("data", "ring_radius", c.data.ring_radius);
    r.get("data", "ring_std", c.data.ring_std);
    r.get("data", "checker_cells", c.data.checker_cells);
    r.get("data", "K", c.data.K);
    r.get("data", "d", c.data.d);
    r.get("data", "anchor_seed", c.data.anchor_seed);
    r.get("data", "anchor_scale", c.data.anchor_scale);
    r.get("data", "noise_var", c.data.noise_var);
    std::vector<double> fr(c.split_fractions.begin(), c.split_fractions.end());
    r.get("data", "split", fr);
    if (fr.size() != 3) throw ConfigError(r.line("data", "split"), "split: expected three fractions");
    std::copy(fr.begin(), fr.end(), c.split_fractions.begin());
    r.get("data", "split_seed", c.split_seed);

    r.get("model", "hidden_dim", c.trunk.hidden_dim);
    r.get("model", "depth", c.trunk.depth);
    r.get("model", "time_embed_dim", c.trunk.time_embed_dim);

    r.get("schedule", "ddpm_T", c.hyper.ddpm_T);
    r.get("schedule", "beta_start", c.hyper.beta_start);
    r.get("schedule", "beta_end", c.hyper.beta_end);
    r.get("schedule", "sigma_data", c.hyper.edm.sigma_data);
    if (doc.has("schedule", "sigma_data")) c.estimate_sigma_data = false;
    r.get("schedule", "sigma_min", c.hyper.edm.sigma_min);
    r.get("schedule", "sigma_max", c.hyper.edm.sigma_max);
    r.get("schedule", "rho", c.hyper.edm.rho);
    r.get("schedule", "p_mean", c.hyper.edm.p_mean);
    r.get("schedule", "p_std", c.hyper.edm.p_std);

    r.get("cd", "ema_mu", c.ema_mu);
    r.get("cd", "levels", c.cd_levels);
    std::string solver = solver_name(c.cd_solver);
    r.get("cd", "solver", solver);
    if (solver != "euler" && solver != "heun") throw ConfigError(r.line("cd", "solver"), "solver must be euler or heun");
    c.cd_solver = solver == "heun" ? TeacherSolver::heun : TeacherSolver::euler;
    r.get("cd", "early_stop_window", c.early_stop_window);
    r.get("cd", "early_stop_rise", c.early_stop_rise);

    r.get("reflow", "steps", c.reflow_steps);
    r.get("reflow", "pairs", c.reflow_pairs);
    r.get("reflow", "warn_loss", c.reflow_warn_loss);

    r.get("bespoke", "n", c.bespoke_n);
    r.get("bespoke", "iterations", c.bespoke_iterations);
    r.get("bespoke", "lr", c.bespoke_lr);
    r.get("bespoke", "trajectories", c.bespoke_trajectories);
    r.get("bespoke", "dense_steps", c.bespoke_dense_steps);
    std::string w = weights_name(c.bespoke_weights);
    r.get("bespoke", "weights", w);
    if (w != "scale_ratio" && w != "uniform")
        throw ConfigError(r.line("bespoke", "weights"), "weights must be scale_ratio or uniform");
    c.bespoke_weights = w == "uniform" ? BespokeWeights::uniform : BespokeWeights::scale_ratio;

    reject_unknown_sections(doc);
    r.reject_unknown({"run", "data", "model", "schedule", "cd", "reflow", "bespoke"});
    if (!kMethods.count(c.method)) throw ConfigError(r.line("run", "method"), "unknown method '" + c.method + "'");
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(0, e.what());
    }
    return c;
}

json to_json(const RunConfig& c) {
    TrunkConfig t = c.trunk;
    t.data_dim = c.data.data_dim();
    t.cond_dim = c.data.cond_dim();
    return {
        {"method", c.method},
        {"data", to_json(c.data)},
        {"split_fractions", c.split_fractions},
        {"split_seed", c.split_seed},
        {"trunk", to_json(t)},
        {"hyper", to_json(c.hyper)},
        {"estimate_sigma_data", c.estimate_sigma_data},
        {"iterations", c.iterations},
        {"batch_size", c.effective_batch_size()},
        {"lr", c.lr},
        {"lr_milestones", c.lr_milestones},
        {"lr_decay", c.lr_decay},
        {"seed", c.seed},
        {"milestone_checkpoints", c.milestone_checkpoints},
        {"cd", {{"ema_mu", c.ema_mu}, {"levels", c.cd_levels}, {"solver", solver_name(c.cd_solver)},
                {"early_stop_window", c.early_stop_window}, {"early_stop_rise", c.early_stop_rise}}},
        {"reflow", {{"steps", c.reflow_steps}, {"pairs", c.reflow_pairs}, {"warn_loss", c.reflow_warn_loss}}},
        {"bespoke", {{"n", c.bespoke_n}, {"iterations", c.bespoke_iterations}, {"lr", c.bespoke_lr},
                     {"trajectories", c.bespoke_trajectories}, {"dense_steps", c.bespoke_dense_steps},
                     {"weights", weights_name(c.bespoke_weights)}}},
    };
}

EarlyStopper::EarlyStopper(int window, double rise) : window_(window), rise_(rise) {
    if (window < 1 || !(rise > 0.0)) throw InvalidArgument("EarlyStopper: need window >= 1 and rise > 0");
    recent_.reserve(static_cast<std::size_t>(window));
}

bool EarlyStopper::push(double loss) {
    improved_ = false;
    if (!full()) {
        recent_.push_back(loss);
        sum_ += loss;
    } else {
        sum_ += loss - recent_[head_];
        recent_[head_] = loss;
        head_ = (head_ + 1) % recent_.size();
    }
    if (!full()) return false;
    running_ = sum_ / window_;
    if (!have_best_ || running_ < best_) {
        best_ = running_;
        have_best_ = true;
        improved_ = true;
        return false;
    }
    return running_ > (1.0 + rise_) * best_;
}

TrainResult train(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out) {
    cfg.validate();
    if (cfg.method != "ddpm" && cfg.method != "edm" && cfg.method != "fm" && cfg.method != "multiflow")
        throw InvalidArgument("train: method must be ddpm, edm, fm or multiflow, got '" + cfg.method + "'");
    if (data.size() == 0) throw InvalidArgument("train: empty dataset");
    const double t0 = now_ms();
    const Rng root(cfg.seed);
    Rng init = root.split("init");
    Rng batches = root.split("batches");

    const Head head = cfg.method == "ddpm" ? Head::noise_pred
                      : cfg.method == "edm" ? Head::edm_denoiser
                                            : Head::vector_field;
    ModelHyper hyper = cfg.hyper;
    if (cfg.method == "edm" && cfg.estimate_sigma_data) hyper.edm.sigma_data = pooled_std(data.y);
    TrainResult r;
    r.model = make_model(trunk_for(cfg, data), head, hyper, init, cfg.method);
    const DdpmSchedule sched = make_ddpm_schedule(cfg.hyper.ddpm_T, cfg.hyper.beta_start, cfg.hyper.beta_end);
    const auto B = static_cast<std::size_t>(cfg.effective_batch_size());
    const auto d = data.y.cols();
    const ConditionalModel& model = r.model;

    auto step = [&](int, ParamSet& params) {
        Batch b;
        const auto idx = draw_rows(batches, data.size(), B);
        b.y = data.y.gather_rows(idx);
        b.cond = data.cond.gather_rows(idx);
        b.eps = batches.normal_tensor(B, d);
        b.t_or_sigma.resize(B);
        if (cfg.method == "ddpm") {
            for (double& t : b.t_or_sigma) t = static_cast<double>(batches.index(static_cast<std::size_t>(sched.T)));
        } else if (cfg.method == "edm") {
            for (double& s : b.t_or_sigma) s = sample_sigma_lognormal(batches, cfg.hyper.edm.p_mean, cfg.hyper.edm.p_std);
        } else {
            b.t_or_sigma = sample_fm_times(batches, B);
        }
        if (cfg.method == "multiflow") b = apply_coupling(b, optimal_coupling(b.y, b.eps));
        GraphFn g = [&](Tape& tape, const VarMap& p, std::span<const Var>) {
            const TapePredictor pred = tape_predictor(model, p);
            if (cfg.method == "ddpm") return ddpm_loss(tape, pred, sched, b);
            if (cfg.method == "edm") return edm_loss(tape, pred, model.hyper.edm.sigma_data, b);
            return fm_loss(tape, pred, b);
        };
        return forward_backward(g, params);
    };
    const std::string hash = input_hash(cfg, data);
    const LoopState st = run_loop(cfg, r.model, step, nullptr, out);
    finish(r, st, cfg, hash, t0, out);
    return r;
}

TrainResult distill_cd(const ConditionalModel& teacher, const RunConfig& cfg, const Dataset& data,
                       const std::filesystem::path& out) {
    cfg.validate();
    if (teacher.head != Head::edm_denoiser)
        throw InvalidArgument("distill_cd: teacher must have head edm_denoiser, got " + to_string(teacher.head));
    if (teacher.config.data_dim != static_cast<int>(data.y.cols()) ||
        teacher.config.cond_dim != static_cast<int>(data.cond.cols()))
        throw ShapeError("distill_cd", "teacher dimensions do not match the dataset");
    const double t0 = now_ms();
    const Rng root(cfg.seed);
    Rng batches = root.split("batches");

    RunConfig eff = cfg;
    eff.method = "cd";
    TrainResult r;
    r.model = teacher;
    r.model.head = Head::consistency;
    r.model.method = "cd";
    r.model.info = json::object();
    r.model.params = ParamSet{};
    for (const auto& [name, v] : teacher.params.values()) r.model.params.add(name, v);
    ConditionalModel ema = r.model;
    ConditionalModel best = ema;

    const EdmParams& edm = teacher.hyper.edm;
    const SigmaGrid grid = karras_sigma_grid(cfg.cd_levels, edm.sigma_min, edm.sigma_max, edm.rho);
    const FieldFn teacher_fn = model_field(teacher);
    const auto B = static_cast<std::size_t>(eff.effective_batch_size());
    const auto d = data.y.cols();
    EarlyStopper stopper(cfg.early_stop_window, cfg.early_stop_rise);
    const ConditionalModel& student = r.model;

    auto step = [&](int, ParamSet& params) {
        Batch b;
        const auto idx = draw_rows(batches, data.size(), B);
        b.y = data.y.gather_rows(idx);
        b.cond = data.cond.gather_rows(idx);
        b.eps = batches.normal_tensor(B, d);
        b.t_or_sigma.assign(B, 0.0);
        b.level.resize(B);
        for (int& l : b.level) l = static_cast<int>(batches.index(static_cast<std::size_t>(cfg.cd_levels - 1)));
        GraphFn g = [&](Tape& tape, const VarMap& p, std::span<const Var>) {
            const VarMap ema_vars = ema.params.bind(tape, false);
            return cd_loss(tape, tape_predictor(student, p), tape_predictor(ema, ema_vars), teacher_fn, b, grid,
                           cfg.cd_solver);
        };
        return forward_backward(g, params);
    };
    bool stopped = false;
    auto after = [&](int, double loss) {
        ema_update(ema.params, r.model.params, cfg.ema_mu);
        const bool stop = stopper.push(loss);
        if (stopper.improved()) best.params = ema.params;
        stopped = stop;
        return stop;
    };
    const std::string hash = input_hash(eff, data, hash_params(teacher.params));
    const LoopState st = run_loop(eff, r.model, step, after, out);
    // The returned weights are the EMA target: the best snapshot when the run was cut short.
    const ParamSet& chosen = stopped ? best.params : ema.params;
    r.model.params = ParamSet{};
    for (const auto& [name, v] : chosen.values()) r.model.params.add(name, v);
    finish(r, st, eff, hash, t0, out);
    r.manifest["early_stop"] = {{"triggered", stopped},
                                {"window", cfg.early_stop_window},
                                {"rise", cfg.early_stop_rise},
                                {"best_running_loss", finite_or_null(stopper.best())}};
    if (!out.empty()) write_json(manifest_path(out), r.manifest);
    return r;
}

TrainResult reflow_retrain(const ConditionalModel& base, const RunConfig& cfg, const Dataset& data,
                           const std::filesystem::path& out) {
    cfg.validate();
    if (base.head != Head::vector_field)
        throw InvalidArgument("reflow_retrain: base must have head vector_field, got " + to_string(base.head));
    const double t0 = now_ms();
    const Rng root(cfg.seed);
    Rng init = root.split("init");
    Rng batches = root.split("batches");
    Rng pair_rng = root.split("pairs");

    RunConfig eff = cfg;
    eff.method = "reflow";
    std::vector<std::string> warnings;
    const json base_loss = base.info.value("final_loss", json(nullptr));
    if (base_loss.is_number() && base_loss.get<double>() > cfg.reflow_warn_loss)
        warnings.push_back("base model final loss " + std::to_string(base_loss.get<double>()) +
                           " exceeds warn_loss; pairs may be poor");

    const std::size_t n_pairs = cfg.reflow_pairs > 0 ? static_cast<std::size_t>(cfg.reflow_pairs) : data.size();
    const Tensor cond = data.cond.gather_rows(draw_rows(pair_rng, data.size(), n_pairs));
    const PairSet pairs = reflow_pairs(model_field(base), base.config.data_dim, cond, cfg.reflow_steps, pair_rng);
    if (!out.empty()) save_pairs(out.string() + ".pairs", pairs, {{"solver_steps", cfg.reflow_steps}});

    TrainResult r;
    r.model = make_model(base.config, Head::vector_field, base.hyper, init, "reflow");
    const auto B = static_cast<std::size_t>(eff.effective_batch_size());
    const ConditionalModel& model = r.model;
    auto step = [&](int, ParamSet& params) {
        const auto idx = draw_rows(batches, pairs.size(), B);
        const PairSet pb{pairs.eps.gather_rows(idx), pairs.y_hat.gather_rows(idx), pairs.cond.gather_rows(idx)};
        const std::vector<double> t = sample_fm_times(batches, B);
        GraphFn g = [&](Tape& tape, const VarMap& p, std::span<const Var>) {
            return reflow_loss(tape, tape_predictor(model, p), pb, t);
        };
        return forward_backward(g, params);
    };
    const std::string hash = input_hash(eff, data, hash_params(base.params));
    const LoopState st = run_loop(eff, r.model, step, nullptr, out);
    finish(r, st, eff, hash, t0, out);
    r.manifest["warnings"] = warnings;
    r.manifest["pairs"] = {{"count", pairs.size()}, {"solver_steps", cfg.reflow_steps},
                           {"file", out.empty() ? json(nullptr) : json(out.string() + ".pairs")}};
    if (!out.empty()) write_json(manifest_path(out), r.manifest);
    return r;
}

BespokeRun fit_bespoke(const ConditionalModel& base, const RunConfig& cfg, const Dataset& data,
                       const std::filesystem::path& out) {
    cfg.validate();
    if (base.head != Head::vector_field)
        throw InvalidArgument("fit_bespoke: base must have head vector_field, got " + to_string(base.head));
    const double t0 = now_ms();
    const Rng root(cfg.seed);
    Rng traj_rng = root.split("trajectories");
    const auto n_traj = static_cast<std::size_t>(cfg.bespoke_trajectories);
    const Tensor cond = data.cond.gather_rows(draw_rows(traj_rng, data.size(), n_traj));
    const FieldFn u = model_field(base);
    const TrajectorySet traj = generate_trajectories(u, base.config.data_dim, cond, traj_rng, cfg.bespoke_dense_steps);

    BespokeFitConfig fc;
    fc.iterations = cfg.bespoke_iterations;
    fc.lr = cfg.bespoke_lr;
    fc.weights = cfg.bespoke_weights;
    fc.seed = root.split("split").seed();
    BespokeRun run;
    run.fit = bespoke_fit(u, traj, cfg.bespoke_n, fc);

    RunConfig eff = cfg;
    eff.method = "bespoke";
    json& m = run.manifest;
    m["kind"] = "run_manifest";
    m["method"] = "bespoke";
    m["config"] = to_json(eff);
    m["input_hash"] = input_hash(eff, data, hash_params(base.params));
    m["status"] = "ok";
    m["n"] = cfg.bespoke_n;
    m["train_loss"] = run.fit.train_loss;
    m["val_loss"] = run.fit.val_loss;
    m["identity_train_loss"] = run.fit.identity_train_loss;
    m["identity_val_loss"] = run.fit.identity_val_loss;
    m["best_iteration"] = run.fit.best_iteration;
    m["loss_curve"] = run.fit.train_curve;
    m["t_knots"] = run.fit.transform.t_of_r;
    m["s_knots"] = run.fit.transform.s_of_r;
    m["wall_clock_ms"] = now_ms() - t0;
    m["checkpoint"] = out.empty() ? json(nullptr) : json(out.string());
    if (!out.empty()) {
        save_transform(out, run.fit.transform,
                       {{"base_hash", hex64(hash_params(base.params))}, {"val_loss", run.fit.val_loss}});
        write_json(manifest_path(out), m);
    }
    return run;
}

double pooled_std(const Tensor& y) {
    if (y.rank() != 2 || y.rows() < 2) throw InvalidArgument("pooled_std: need at least 2 rows");
    double acc = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) mean += y(r, c);
        mean /= static_cast<double>(y.rows());
        double var = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) var += (y(r, c) - mean) * (y(r, c) - mean);
        acc += var / static_cast<double>(y.rows() - 1);
    }
    return std::sqrt(acc / static_cast<double>(y.cols()));
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h) {
    const auto bytes = std::as_bytes(t.data());
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
}

std::uint64_t hash_dataset(const Dataset& d) { return hash_tensor(d.cond, hash_tensor(d.y)); }

std::uint64_t hash_params(const ParamSet& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : p.values()) h = hash_tensor(v, fnv1a64(name, h));
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::filesystem::path manifest_path(const std::filesystem::path& out) { return out.string() + ".manifest.json"; }

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace nfe

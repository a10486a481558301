#include "nfebench/models.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;

MapC view(const Tensor& t) {
    return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

std::string layer_name(int i) { return "l" + std::to_string(i); }

void check_rows(const char* op, const Tensor& x, std::span<const double> times, const Tensor& cond,
                const TrunkConfig& cfg) {
    if (x.rank() != 2 || x.cols() != static_cast<std::size_t>(cfg.data_dim))
        throw ShapeError(op, "x has shape " + shape_str(x.shape()) + ", data_dim " + std::to_string(cfg.data_dim));
    if (times.size() != x.rows()) throw ShapeError(op, "one time value per row required");
    if (cond.rank() != 2 || cond.rows() != x.rows() || cond.cols() != static_cast<std::size_t>(cfg.cond_dim))
        throw ShapeError(op, "cond has shape " + shape_str(cond.shape()) + ", cond_dim " + std::to_string(cfg.cond_dim));
}

struct RowCoeffs {
    std::vector<double> skip, in, out, noise;
};

RowCoeffs row_coeffs(std::span<const double> sigmas, Head head, const EdmParams& edm) {
    RowCoeffs c;
    for (double s : sigmas) {
        if (!(s > 0.0)) throw InvalidArgument("denoise: sigma must be > 0");
        const PrecondCoeffs p = head == Head::consistency ? consistency_precond(s, edm.sigma_data, edm.sigma_min)
                                                          : edm_precond(s, edm.sigma_data);
        c.skip.push_back(p.c_skip);
        c.in.push_back(p.c_in);
        c.out.push_back(p.c_out);
        c.noise.push_back(p.c_noise);
    }
    return c;
}

std::vector<double> ddpm_tau(std::span<const double> times, int T) {
    std::vector<double> tau;
    tau.reserve(times.size());
    for (double t : times) {
        if (!(t >= 0.0 && t < T)) throw InvalidArgument("predict_noise: t outside [0, T)");
        tau.push_back(t / T);
    }
    return tau;
}

void check_unit_interval(std::span<const double> times) {
    for (double t : times)
        if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("velocity: t outside [0, 1]");
}

void require_head(const ConditionalModel& m, Head h, const char* op) {
    if (m.head != h)
        throw InvalidArgument(std::string(op) + ": model head is " + to_string(m.head) + ", expected " + to_string(h));
}

}  // namespace

void TrunkConfig::validate() const {
    if (data_dim < 1 || cond_dim < 1 || hidden_dim < 1 || depth < 1 || time_embed_dim < 1)
        throw InvalidArgument("TrunkConfig: all dimensions must be >= 1");
}

std::string to_string(Head h) {
    switch (h) {
        case Head::noise_pred: return "noise_pred";
        case Head::edm_denoiser: return "edm_denoiser";
        case Head::vector_field: return "vector_field";
        case Head::consistency: return "consistency";
    }
    return "unknown";
}

Head head_from_string(const std::string& s) {
    if (s == "noise_pred") return Head::noise_pred;
    if (s == "edm_denoiser") return Head::edm_denoiser;
    if (s == "vector_field") return Head::vector_field;
    if (s == "consistency") return Head::consistency;
    throw InvalidArgument("unknown head '" + s + "'");
}

ConditionalModel make_model(const TrunkConfig& config, Head head, const ModelHyper& hyper, Rng& rng,
                            std::string method) {
    config.validate();
    ConditionalModel m;
    m.config = config;
    m.head = head;
    m.hyper = hyper;
    m.method = std::move(method);
    int fan_in = config.input_dim();
    for (int i = 0; i < config.depth; ++i) {
        Tensor w = rng.normal_tensor(static_cast<std::size_t>(fan_in), static_cast<std::size_t>(config.hidden_dim));
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w.data()) v *= s;
        m.params.add(layer_name(i) + ".w", std::move(w));
        m.params.add(layer_name(i) + ".b", Tensor::matrix(1, static_cast<std::size_t>(config.hidden_dim)));
        fan_in = config.hidden_dim;
    }
    Tensor w = rng.normal_tensor(static_cast<std::size_t>(fan_in), static_cast<std::size_t>(config.data_dim));
    const double s = 0.1 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.data()) v *= s;
    m.params.add("out.w", std::move(w));
    m.params.add("out.b", Tensor::matrix(1, static_cast<std::size_t>(config.data_dim)));
    return m;
}

Tensor time_embedding(std::span<const double> tau, int dim) {
    if (dim < 1) throw InvalidArgument("time_embedding: dim must be >= 1");
    const int half = dim / 2;
    std::vector<double> freqs(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k)
        freqs[static_cast<std::size_t>(k)] = half > 1 ? std::exp(std::log(64.0) * k / (half - 1)) : 1.0;
    Tensor out = Tensor::matrix(tau.size(), static_cast<std::size_t>(dim));
    for (std::size_t r = 0; r < tau.size(); ++r) {
        auto row = out.row_span(r);
        for (int k = 0; k < half; ++k) {
            row[static_cast<std::size_t>(k)] = std::sin(freqs[static_cast<std::size_t>(k)] * tau[r]);
            row[static_cast<std::size_t>(half + k)] = std::cos(freqs[static_cast<std::size_t>(k)] * tau[r]);
        }
        if (dim % 2) row[static_cast<std::size_t>(dim - 1)] = tau[r];
    }
    return out;
}

Var trunk_forward(Tape& tape, const VarMap& params, const TrunkConfig& cfg, Var x, const Tensor& temb,
                  const Tensor& cond) {
    Var h = concat_cols({x, tape.constant(temb), tape.constant(cond)});
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string n = layer_name(i);
        h = silu(add_bias(matmul(h, params.at(n + ".w")), params.at(n + ".b")));
    }
    return add_bias(matmul(h, params.at("out.w")), params.at("out.b"));
}

Tensor trunk_eval(const ParamSet& params, const TrunkConfig& cfg, const Tensor& x, const Tensor& temb,
                  const Tensor& cond) {
    const auto rows = static_cast<Eigen::Index>(x.rows());
    RowMat h(rows, cfg.input_dim());
    h.leftCols(cfg.data_dim) = view(x);
    h.middleCols(cfg.data_dim, cfg.time_embed_dim) = view(temb);
    h.rightCols(cfg.cond_dim) = view(cond);
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string n = layer_name(i);
        RowMat z = h * view(params.at(n + ".w"));
        z.rowwise() += view(params.at(n + ".b")).row(0);
        h = z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
    }
    RowMat out = h * view(params.at("out.w"));
    out.rowwise() += view(params.at("out.b")).row(0);
    return Tensor({x.rows(), static_cast<std::size_t>(cfg.data_dim)},
                  std::vector<double>(out.data(), out.data() + out.size()));
}

TapePredictor precondition(TapePredictor raw, Head head, const EdmParams& edm) {
    return [raw = std::move(raw), head, edm](Tape& tape, Var x, std::span<const double> sigmas, const Tensor& cond) {
        const RowCoeffs c = row_coeffs(sigmas, head, edm);
        Var f = raw(tape, scale_rows(x, c.in), c.noise, cond);
        return add(scale_rows(x, c.skip), scale_rows(f, c.out));
    };
}

TapePredictor tape_predictor(const ConditionalModel& model, const VarMap& params) {
    const TrunkConfig cfg = model.config;
    auto raw = [&params, cfg](Tape& tape, Var x, std::span<const double> tau, const Tensor& cond) {
        return trunk_forward(tape, params, cfg, x, time_embedding(tau, cfg.time_embed_dim), cond);
    };
    switch (model.head) {
        case Head::noise_pred: {
            const int T = model.hyper.ddpm_T;
            return [raw, T](Tape& tape, Var x, std::span<const double> t, const Tensor& cond) {
                return raw(tape, x, ddpm_tau(t, T), cond);
            };
        }
        case Head::vector_field:
            return [raw](Tape& tape, Var x, std::span<const double> t, const Tensor& cond) {
                check_unit_interval(t);
                return raw(tape, x, t, cond);
            };
        case Head::edm_denoiser:
        case Head::consistency:
            return precondition(raw, model.head, model.hyper.edm);
    }
    throw InvalidArgument("tape_predictor: unknown head");
}

FieldFn model_field(const ConditionalModel& model) {
    auto m = std::make_shared<const ConditionalModel>(model);
    return [m](const Tensor& x, std::span<const double> times, const Tensor& cond) -> Tensor {
        const TrunkConfig& cfg = m->config;
        check_rows("model_field", x, times, cond, cfg);
        switch (m->head) {
            case Head::noise_pred:
                return trunk_eval(m->params, cfg, x, time_embedding(ddpm_tau(times, m->hyper.ddpm_T), cfg.time_embed_dim), cond);
            case Head::vector_field:
                check_unit_interval(times);
                return trunk_eval(m->params, cfg, x, time_embedding(times, cfg.time_embed_dim), cond);
            case Head::edm_denoiser:
            case Head::consistency: {
                const RowCoeffs c = row_coeffs(times, m->head, m->hyper.edm);
                Tensor xin = x;
                for (std::size_t r = 0; r < x.rows(); ++r)
                    for (double& v : xin.row_span(r)) v *= c.in[r];
                const Tensor f = trunk_eval(m->params, cfg, xin, time_embedding(c.noise, cfg.time_embed_dim), cond);
                Tensor out = x;
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    auto o = out.row_span(r);
                    auto fr = f.row_span(r);
                    for (std::size_t j = 0; j < o.size(); ++j) o[j] = c.skip[r] * o[j] + c.out[r] * fr[j];
                }
                return out;
            }
        }
        throw InvalidArgument("model_field: unknown head");
    };
}

Tensor predict_noise(const ConditionalModel& m, const Tensor& x, int t, const Tensor& cond) {
    require_head(m, Head::noise_pred, "predict_noise");
    const std::vector<double> times(x.rows(), static_cast<double>(t));
    return model_field(m)(x, times, cond);
}

Tensor denoise(const ConditionalModel& m, const Tensor& x, double sigma, const Tensor& cond) {
    if (m.head != Head::edm_denoiser && m.head != Head::consistency)
        throw InvalidArgument("denoise: model head is " + to_string(m.head) + ", expected a denoiser");
    if (!(sigma > 0.0)) throw InvalidArgument("denoise: sigma must be > 0");
    const std::vector<double> sig(x.rows(), sigma);
    return model_field(m)(x, sig, cond);
}

Tensor velocity(const ConditionalModel& m, const Tensor& x, double t, const Tensor& cond) {
    require_head(m, Head::vector_field, "velocity");
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("velocity: t outside [0, 1]");
    const std::vector<double> times(x.rows(), t);
    return model_field(m)(x, times, cond);
}

nlohmann::json to_json(const TrunkConfig& c) {
    return {{"data_dim", c.data_dim},   {"cond_dim", c.cond_dim},           {"hidden_dim", c.hidden_dim},
            {"depth", c.depth},         {"time_embed_dim", c.time_embed_dim}};
}

TrunkConfig trunk_from_json(const nlohmann::json& j) {
    TrunkConfig c;
    c.data_dim = j.at("data_dim").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.depth = j.at("depth").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.validate();
    return c;
}

nlohmann::json to_json(const ModelHyper& h) {
    return {{"ddpm_T", h.ddpm_T},
            {"beta_start", h.beta_start},
            {"beta_end", h.beta_end},
            {"sigma_data", h.edm.sigma_data},
            {"sigma_min", h.edm.sigma_min},
            {"sigma_max", h.edm.sigma_max},
            {"rho", h.edm.rho},
            {"p_mean", h.edm.p_mean},
            {"p_std", h.edm.p_std}};
}

ModelHyper hyper_from_json(const nlohmann::json& j) {
    ModelHyper h;
    h.ddpm_T = j.at("ddpm_T").get<int>();
    h.beta_start = j.at("beta_start").get<double>();
    h.beta_end = j.at("beta_end").get<double>();
    h.edm.sigma_data = j.at("sigma_data").get<double>();
    h.edm.sigma_min = j.at("sigma_min").get<double>();
    h.edm.sigma_max = j.at("sigma_max").get<double>();
    h.edm.rho = j.at("rho").get<double>();
    h.edm.p_mean = j.at("p_mean").get<double>();
    h.edm.p_std = j.at("p_std").get<double>();
    return h;
}

Blob model_to_blob(const ConditionalModel& m) {
    Blob b;
    b.header["kind"] = "checkpoint";
    b.header["method"] = m.method;
    b.header["head"] = to_string(m.head);
    b.header["trunk"] = to_json(m.config);
    b.header["hyperparameters"] = to_json(m.hyper);
    b.header["info"] = m.info;
    b.header["step_count"] = m.params.step_count();
    for (const auto& [k, v] : m.params.values()) b.tensors.emplace("param/" + k, v);
    return b;
}

ConditionalModel model_from_blob(const Blob& b) {
    if (b.header.value("kind", "") != "checkpoint") throw IoError("blob is not a model checkpoint");
    ConditionalModel m;
    m.method = b.header.at("method").get<std::string>();
    m.head = head_from_string(b.header.at("head").get<std::string>());
    m.config = trunk_from_json(b.header.at("trunk"));
    m.hyper = hyper_from_json(b.header.at("hyperparameters"));
    m.info = b.header.value("info", nlohmann::json::object());
    const std::string prefix = "param/";
    for (const auto& [k, v] : b.tensors)
        if (k.rfind(prefix, 0) == 0) m.params.add(k.substr(prefix.size()), v);
    TensorMap zeros;
    for (const auto& [k, v] : m.params.values()) zeros.emplace(k, Tensor(v.shape(), 0.0));
    ParamSetAccess::set_state(m.params, zeros, zeros, b.header.value("step_count", std::uint64_t{0}));
    // Shapes must match what the trunk config implies.
    Rng probe(0);
    const ConditionalModel fresh = make_model(m.config, m.head, m.hyper, probe);
    if (!fresh.params.congruent(m.params)) throw IoError("checkpoint parameters do not match its trunk config");
    return m;
}

void save_model(const std::filesystem::path& path, const ConditionalModel& m) { write_blob(path, model_to_blob(m)); }

ConditionalModel load_model(const std::filesystem::path& path) { return model_from_blob(read_blob(path)); }

}  // namespace nfe

#include "nfebench/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nfebench/blob.hpp"
#include "nfebench/error.hpp"
#include "nfebench/rng.hpp"

namespace nfe {

const std::vector<std::string>& dataset_kind_names() {
    static const std::vector<std::string> names = {"two_gaussians", "gaussian_ring", "checkerboard", "cond_upsample"};
    return names;
}

std::string to_string(DatasetKind k) { return dataset_kind_names()[static_cast<std::size_t>(k)]; }

DatasetKind dataset_kind_from_string(const std::string& s) {
    const auto& names = dataset_kind_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == s) return static_cast<DatasetKind>(i);
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw InvalidArgument("unknown dataset kind '" + s + "' (valid kinds: " + valid + ")");
}

void DatasetSpec::validate() const {
    if (n < 1) throw InvalidArgument("DatasetSpec: n must be >= 1");
    switch (kind) {
        case DatasetKind::two_gaussians:
            if (!(mode_std > 0.0)) throw InvalidArgument("two_gaussians: mode_std must be > 0");
            break;
        case DatasetKind::gaussian_ring:
            if (ring_count < 1 || !(ring_radius > 0.0) || !(ring_std > 0.0))
                throw InvalidArgument("gaussian_ring: need ring_count >= 1, ring_radius > 0, ring_std > 0");
            break;
        case DatasetKind::checkerboard:
            if (checker_cells < 2) throw InvalidArgument("checkerboard: checker_cells must be >= 2");
            break;
        case DatasetKind::cond_upsample:
            if (K < 1 || d < 1 || !(noise_var > 0.0))
                throw InvalidArgument("cond_upsample: need K >= 1, d >= 1, noise_var > 0");
            break;
    }
}

int DatasetSpec::data_dim() const { return kind == DatasetKind::cond_upsample ? d : 2; }
int DatasetSpec::cond_dim() const { return kind == DatasetKind::cond_upsample ? K : 1; }

nlohmann::json to_json(const DatasetSpec& s) {
    return {{"kind", to_string(s.kind)},
            {"n", s.n},
            {"seed", s.seed},
            {"mode_offset", s.mode_offset},
            {"mode_std", s.mode_std},
            {"ring_count", s.ring_count},
            {"ring_radius", s.ring_radius},
            {"ring_std", s.ring_std},
            {"checker_cells", s.checker_cells},
            {"K", s.K},
            {"d", s.d},
            {"anchor_seed", s.anchor_seed},
            {"anchor_scale", s.anchor_scale},
            {"noise_var", s.noise_var}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
    s.n = j.value("n", s.n);
    s.seed = j.value("seed", s.seed);
    s.mode_offset = j.value("mode_offset", s.mode_offset);
    s.mode_std = j.value("mode_std", s.mode_std);
    s.ring_count = j.value("ring_count", s.ring_count);
    s.ring_radius = j.value("ring_radius", s.ring_radius);
    s.ring_std = j.value("ring_std", s.ring_std);
    s.checker_cells = j.value("checker_cells", s.checker_cells);
    s.K = j.value("K", s.K);
    s.d = j.value("d", s.d);
    s.anchor_seed = j.value("anchor_seed", s.anchor_seed);
    s.anchor_scale = j.value("anchor_scale", s.anchor_scale);
    s.noise_var = j.value("noise_var", s.noise_var);
    return s;
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.spec = spec;
    out.spec.n = idx.size();
    out.y = y.gather_rows(idx);
    out.cond = cond.gather_rows(idx);
    for (std::size_t i : idx) out.token.push_back(token[i]);
    return out;
}

TokenAnchors cond_upsample_anchors(const DatasetSpec& spec) {
    Rng rng(spec.anchor_seed);
    TokenAnchors a;
    const auto d = static_cast<std::size_t>(spec.d);
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(spec.d));
    for (int k = 0; k < spec.K; ++k) {
        std::vector<double> mu(d);
        for (double& v : mu) v = spec.anchor_scale * rng.normal();
        std::vector<double> A(d * d);
        for (double& v : A) v = mix_scale * rng.normal();
        a.mean.push_back(std::move(mu));
        a.mixing.push_back(std::move(A));
    }
    return a;
}

bool checkerboard_occupied(double x, double y, int cells) {
    const double half = cells / 2.0;
    if (x < -half || x >= half || y < -half || y >= half) return false;
    const auto cx = static_cast<long>(std::floor(x + half));
    const auto cy = static_cast<long>(std::floor(y + half));
    return (cx + cy) % 2 == 0;
}

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset out;
    out.spec = spec;
    const std::size_t dd = static_cast<std::size_t>(spec.data_dim());
    const std::size_t cd = static_cast<std::size_t>(spec.cond_dim());
    out.y = Tensor::matrix(spec.n, dd);
    out.cond = Tensor::matrix(spec.n, cd);
    out.token.assign(spec.n, 0);

    switch (spec.kind) {
        case DatasetKind::two_gaussians:
            for (std::size_t i = 0; i < spec.n; ++i) {
                const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                out.y(i, 0) = sign * spec.mode_offset + spec.mode_std * rng.normal();
                out.y(i, 1) = spec.mode_std * rng.normal();
            }
            break;
        case DatasetKind::gaussian_ring:
            for (std::size_t i = 0; i < spec.n; ++i) {
                const std::size_t m = rng.index(static_cast<std::size_t>(spec.ring_count));
                const double a = 2.0 * std::numbers::pi * static_cast<double>(m) / spec.ring_count;
                out.y(i, 0) = spec.ring_radius * std::cos(a) + spec.ring_std * rng.normal();
                out.y(i, 1) = spec.ring_radius * std::sin(a) + spec.ring_std * rng.normal();
            }
            break;
        case DatasetKind::checkerboard: {
            const int c = spec.checker_cells;
            std::vector<std::pair<int, int>> occupied;
            for (int ix = 0; ix < c; ++ix)
                for (int iy = 0; iy < c; ++iy)
                    if ((ix + iy) % 2 == 0) occupied.emplace_back(ix, iy);
            const double half = c / 2.0;
            for (std::size_t i = 0; i < spec.n; ++i) {
                const auto [ix, iy] = occupied[rng.index(occupied.size())];
                out.y(i, 0) = ix - half + rng.uniform();
                out.y(i, 1) = iy - half + rng.uniform();
            }
            break;
        }
        case DatasetKind::cond_upsample: {
            const TokenAnchors anchors = cond_upsample_anchors(spec);
            const double zs = std::sqrt(spec.noise_var);
            std::vector<double> z(dd);
            for (std::size_t i = 0; i < spec.n; ++i) {
                const std::size_t k = rng.index(static_cast<std::size_t>(spec.K));
                out.token[i] = static_cast<int>(k) + 1;
                out.cond(i, k) = 1.0;
                for (double& v : z) v = zs * rng.normal();
                const auto& mu = anchors.mean[k];
                const auto& A = anchors.mixing[k];
                for (std::size_t r = 0; r < dd; ++r) {
                    double acc = mu[r];
                    for (std::size_t c = 0; c < dd; ++c) acc += A[r * dd + c] * z[c];
                    out.y(i, r) = acc;
                }
            }
            break;
        }
    }
    return out;
}

DatasetSplit split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (f < 0.0) throw InvalidArgument("split: fractions must be non-negative");
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split: fractions must sum to 1");

    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    const auto n_eval = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
    if (n_eval + n_test > n) throw InvalidArgument("split: fractions exceed dataset size");
    const std::size_t n_train = n - n_eval - n_test;
    const std::array<std::size_t, 3> counts = {n_train, n_eval, n_test};
    const char* names[] = {"train", "eval", "test"};
    for (std::size_t s = 0; s < 3; ++s)
        if (fractions[s] > 0.0 && counts[s] == 0)
            throw InvalidArgument(std::string("split: ") + names[s] + " split would be empty");

    std::span<const std::size_t> all(order);
    DatasetSplit out;
    out.train = data.subset(all.subspan(0, n_train));
    out.eval = data.subset(all.subspan(n_train, n_eval));
    out.test = data.subset(all.subspan(n_train + n_eval, n_test));
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    Blob b;
    b.header["kind"] = "dataset";
    b.header["spec"] = to_json(d.spec);
    b.tensors.emplace("y", d.y);
    b.tensors.emplace("cond", d.cond);
    std::vector<double> tok(d.token.begin(), d.token.end());
    b.tensors.emplace("token", Tensor({d.token.size()}, std::move(tok)));
    write_blob(path, b);
}

Dataset load_dataset(const std::filesystem::path& path) {
    const Blob b = read_blob(path);
    if (b.header.value("kind", "") != "dataset") throw IoError("'" + path.string() + "' is not a dataset file");
    Dataset d;
    d.spec = dataset_spec_from_json(b.header.at("spec"));
    d.y = b.tensors.at("y");
    d.cond = b.tensors.at("cond");
    for (double v : b.tensors.at("token").data()) d.token.push_back(static_cast<int>(v));
    if (d.y.rows() != d.token.size() || d.cond.rows() != d.token.size())
        throw IoError("dataset tensors disagree on row count");
    return d;
}

}  // namespace nfe

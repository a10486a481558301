#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nfebench/config.hpp"
#include "nfebench/error.hpp"
#include "nfebench/metrics.hpp"
#include "nfebench/samplers.hpp"
#include "nfebench/training.hpp"

using namespace nfe;
namespace fs = std::filesystem;

namespace {

int error_line(const std::string& text) {
    try {
        run_config_from_doc(parse_config(text));
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

RunConfig small_run(const std::string& method, int iterations = 200) {
    RunConfig c;
    c.method = method;
    c.data.kind = DatasetKind::two_gaussians;
    c.data.n = 2000;
    c.trunk.hidden_dim = 32;
    c.trunk.depth = 2;
    c.trunk.time_embed_dim = 8;
    c.iterations = iterations;
    c.lr_milestones = {iterations / 2};
    c.seed = 5;
    return c;
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("nfebench_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
    double s = 0;
    for (std::size_t i = begin; i < end; ++i) s += v[i];
    return s / static_cast<double>(end - begin);
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("values, arrays and comments") {
        auto doc = parse_config(R"(# header
"top" = 1
[run]
method = "edm"   # trailing
iterations = 300
lr = 2.5e-4
lr_milestones = [10, 20]
milestone_checkpoints = false
[data]
kind = "cond_upsample"
split = [0.5, 0.25, 0.25]
)");
        CHECK(doc.section("").at("top") == 1);
        CHECK(doc.section("run").at("method") == "edm");
        CHECK(doc.line_of("run", "iterations") == 5);
        CHECK(doc.has("data", "split"));
        CHECK_FALSE(doc.has("data", "n"));
        CHECK(doc.section("missing").empty());
    }

    TEST_CASE("run config from a document") {
        auto c = run_config_from_doc(parse_config(R"([run]
method = "multiflow"
iterations = 300
lr_milestones = [100, 200]
[data]
kind = "checkerboard"
split = [0.5, 0.25, 0.25]
[cd]
solver = "heun"
[schedule]
sigma_data = 0.9
)"));
        CHECK(c.method == "multiflow");
        CHECK(c.iterations == 300);
        CHECK(c.effective_batch_size() == 64);
        CHECK(c.lr_milestones == std::vector<int>{100, 200});
        CHECK(c.data.kind == DatasetKind::checkerboard);
        CHECK(c.split_fractions[1] == 0.25);
        CHECK(c.cd_solver == TeacherSolver::heun);
        CHECK(c.hyper.edm.sigma_data == 0.9);
        CHECK_FALSE(c.estimate_sigma_data);
        CHECK(run_config_from_doc(parse_config("")).estimate_sigma_data);
    }

    TEST_CASE("errors carry line numbers") {
        CHECK(error_line("[run]\nmethod = \"fm\"\nbogus = 1\n") == 3);
        CHECK(error_line("[run]\n\niterations = \"many\"\n") == 3);
        CHECK(error_line("[run]\niterations = 1\niterations = 2\n") == 3);
        CHECK(error_line("[data]\nkind = \"moons\"\n") == 2);
        CHECK(error_line("[run]\nmethod = \"sde\"\n") == 2);
        CHECK(error_line("[run]\nlr = \n") == 2);
        CHECK(error_line("[run\n") == 1);
        CHECK(error_line("[cd]\nsolver = \"rk4\"\n") == 2);
        CHECK(error_line("[run]\nx = \"unterminated\n") == 2);
        CHECK(error_line("[nonsense]\nx = 1\n") == 1);
        CHECK(error_line("[run]\nmethod = \"fm\"\n\n[shedule]\nrho = 7\n") == 4);
    }
}

TEST_SUITE("training") {
    TEST_CASE("learning rate follows the milestones in the manifest") {
        RunConfig c = small_run("fm", 60);
        c.lr = 0.01;
        c.lr_milestones = {10, 25, 40};
        c.lr_decay = 0.5;
        auto r = train(c, generate(c.data));
        const auto& lrs = r.manifest.at("lr_curve");
        REQUIRE(lrs.size() == 60);
        for (int i = 0; i < 60; ++i) {
            const int k = (i >= 10) + (i >= 25) + (i >= 40);
            CHECK(lrs[i].get<double>() == doctest::Approx(0.01 * std::pow(0.5, k)).epsilon(1e-15));
        }
    }

    TEST_CASE("every base method lowers its loss") {
        for (const char* method : {"ddpm", "edm", "fm", "multiflow"}) {
            RunConfig c = small_run(method, 2000);
            c.lr_milestones = {800, 1600};
            if (std::string(method) == "multiflow") c.batch_size = 32;
            auto r = train(c, generate(c.data));
            CAPTURE(method);
            REQUIRE(r.losses.size() == 2000);
            CHECK(r.ok);
            CHECK(window_mean(r.losses, 1800, 2000) < window_mean(r.losses, 0, 50));
        }
    }

    TEST_CASE("same config and seed give identical files") {
        RunConfig c = small_run("edm", 80);
        const Dataset data = generate(c.data);
        auto dir = scratch("determinism");
        train(c, data, dir / "a.ckpt");
        train(c, data, dir / "b.ckpt");
        CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
        CHECK(fs::exists(dir / "a.ckpt.m40"));
        auto ma = nlohmann::json::parse(slurp(manifest_path(dir / "a.ckpt")));
        auto mb = nlohmann::json::parse(slurp(manifest_path(dir / "b.ckpt")));
        ma.erase("wall_clock_ms");
        mb.erase("wall_clock_ms");
        ma.erase("checkpoint");
        mb.erase("checkpoint");
        ma.erase("milestone_checkpoints");
        mb.erase("milestone_checkpoints");
        CHECK(ma == mb);
        fs::remove_all(dir);
    }

    TEST_CASE("manifest echoes the full effective config") {
        RunConfig c = small_run("fm", 5);
        auto r = train(c, generate(c.data));
        const auto& cfg = r.manifest.at("config");
        for (const char* key : {"method", "data", "split_fractions", "trunk", "hyper", "iterations", "batch_size", "lr",
                                "lr_milestones", "lr_decay", "seed", "cd", "reflow", "bespoke"})
            CHECK(cfg.contains(key));
        CHECK(cfg.at("batch_size") == 16);
        CHECK(cfg.at("hyper").at("ddpm_T") == 1000);
        CHECK(r.manifest.at("input_hash").is_string());
    }

    TEST_CASE("multiflow at batch size one repeats the fm loss sequence") {
        RunConfig fm = small_run("fm", 50);
        fm.batch_size = 1;
        RunConfig mf = fm;
        mf.method = "multiflow";
        const Dataset data = generate(fm.data);
        CHECK(train(fm, data).losses == train(mf, data).losses);
    }

    TEST_CASE("EDM sigma_data is estimated from the training data") {
        RunConfig c = small_run("edm", 2);
        const Dataset data = generate(c.data);
        CHECK(train(c, data).model.hyper.edm.sigma_data == pooled_std(data.y));
        c.estimate_sigma_data = false;
        c.hyper.edm.sigma_data = 0.77;
        CHECK(train(c, data).model.hyper.edm.sigma_data == 0.77);
        Tensor y({3, 2}, {0, 0, 1, 2, 2, 4});
        // per-component unbiased variances 1 and 4
        CHECK(pooled_std(y) == doctest::Approx(std::sqrt(2.5)));
    }

    TEST_CASE("early stopping fires on a loss spike") {
        EarlyStopper s(10, 0.2);
        int stop_at = -1;
        for (int i = 0; i < 200 && stop_at < 0; ++i) {
            const double loss = i < 100 ? 1.0 / (1 + 0.01 * i) : 5.0;
            if (s.push(loss)) stop_at = i;
        }
        CHECK(stop_at >= 100);
        CHECK(stop_at < 105);

        EarlyStopper calm(10, 0.2);
        bool fired = false;
        for (int i = 0; i < 500; ++i) fired = fired || calm.push(1.0 + 0.05 * std::sin(i));
        CHECK_FALSE(fired);
    }

    TEST_CASE("distillation keeps the boundary identity and checks the teacher head") {
        RunConfig tc = small_run("edm", 150);
        const Dataset data = generate(tc.data);
        auto teacher = train(tc, data).model;

        RunConfig cc = small_run("cd", 120);
        cc.early_stop_window = 20;
        auto check_boundary = [&](const ConditionalModel& m) {
            Rng rng(3);
            Tensor x = rng.normal_tensor(32, 2);
            for (auto& v : x.data()) v *= 10;
            Tensor out = denoise(m, x, m.hyper.edm.sigma_min, Tensor::matrix(32, 1));
            double worst = 0;
            for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(out[i] - x[i]));
            return worst;
        };
        ConditionalModel init = teacher;
        init.head = Head::consistency;
        CHECK(check_boundary(init) <= 1e-12);
        auto student = distill_cd(teacher, cc, data);
        CHECK(student.model.head == Head::consistency);
        CHECK(student.model.method == "cd");
        CHECK(check_boundary(student.model) <= 1e-12);
        CHECK(student.manifest.contains("early_stop"));
        CHECK(student.model.params.congruent(teacher.params));
        CHECK(student.model.params != teacher.params);

        auto fm = train(small_run("fm", 5), data).model;
        CHECK_THROWS_AS(distill_cd(fm, cc, data), InvalidArgument);
    }

    TEST_CASE("reflow retraining is reproducible and checks the base head") {
        RunConfig bc = small_run("fm", 100);
        const Dataset data = generate(bc.data);
        auto base = train(bc, data).model;
        RunConfig rc = small_run("reflow", 50);
        rc.reflow_pairs = 256;
        rc.reflow_steps = 20;
        auto dir = scratch("reflow");
        auto a = reflow_retrain(base, rc, data, dir / "a.ckpt");
        auto b = reflow_retrain(base, rc, data, dir / "b.ckpt");
        CHECK(a.model.params == b.model.params);
        CHECK(a.model.method == "reflow");
        CHECK(a.model.head == Head::vector_field);
        auto pa = load_pairs(dir / "a.ckpt.pairs"), pb = load_pairs(dir / "b.ckpt.pairs");
        CHECK(pa.eps == pb.eps);
        CHECK(pa.y_hat == pb.y_hat);
        CHECK(pa.size() == 256);
        CHECK(a.manifest.contains("warnings"));
        fs::remove_all(dir);

        auto ddpm = train(small_run("ddpm", 2), data).model;
        CHECK_THROWS_AS(reflow_retrain(ddpm, rc, data), InvalidArgument);
        CHECK_THROWS_AS(fit_bespoke(ddpm, rc, data), InvalidArgument);
    }

    TEST_CASE("bespoke fitting through the driver") {
        RunConfig bc = small_run("fm", 150);
        const Dataset data = generate(bc.data);
        auto base = train(bc, data).model;
        RunConfig fc = small_run("bespoke", 10);
        fc.bespoke_n = 4;
        fc.bespoke_iterations = 20;
        fc.bespoke_trajectories = 64;
        fc.bespoke_dense_steps = 64;
        auto run = fit_bespoke(base, fc, data);
        CHECK(run.fit.transform.n == 4);
        CHECK(run.fit.train_loss <= run.fit.identity_train_loss);
        CHECK(run.manifest.at("status") == "ok");
    }

    TEST_CASE("invalid configs are rejected") {
        RunConfig c = small_run("fm");
        c.lr_milestones = {50, 20};
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
        c = small_run("fm");
        c.iterations = 0;
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
        c = small_run("cd");
        CHECK_THROWS_AS(train(c, generate(c.data)), InvalidArgument);
    }
}

#include <algorithm>
#include <set>

#include "doctest.h"
#include "nfebench/error.hpp"
#include "nfebench/harness.hpp"
#include "nfebench/rng.hpp"

using namespace nfe;

namespace {

ConditionalModel tiny(Head h, std::uint64_t seed, const std::string& method) {
    TrunkConfig c;
    c.data_dim = 2;
    c.cond_dim = 1;
    c.hidden_dim = 8;
    c.depth = 2;
    c.time_embed_dim = 4;
    Rng rng(seed);
    return make_model(c, h, ModelHyper{}, rng, method);
}

SweepInputs random_inputs() {
    SweepInputs in;
    in.models.emplace("flow", tiny(Head::vector_field, 1, "fm"));
    in.models.emplace("reflow", tiny(Head::vector_field, 2, "reflow"));
    in.models.emplace("multiflow", tiny(Head::vector_field, 3, "multiflow"));
    in.models.emplace("ddpm_ddim", tiny(Head::noise_pred, 4, "ddpm"));
    in.models.emplace("edm", tiny(Head::edm_denoiser, 5, "edm"));
    in.models.emplace("cd", tiny(Head::consistency, 6, "cd"));
    in.transforms.emplace(5, BespokeTransform::identity(5));
    DatasetSpec s;
    s.n = 300;
    s.seed = 2;
    in.test = generate(s);
    return in;
}

SweepConfig small_sweep() {
    SweepConfig c;
    c.methods = sweep_method_names();
    c.nfe_list = {1, 2, 5};
    c.n_eval_samples = 64;
    c.straightness_samples = 16;
    c.seed = 11;
    return c;
}

// Minimal well-formedness check: balanced tags, one root element.
bool balanced_xml(const std::string& s) {
    std::vector<std::string> stack;
    int roots = 0;
    std::size_t i = 0;
    while ((i = s.find('<', i)) != std::string::npos) {
        const std::size_t j = s.find('>', i);
        if (j == std::string::npos) return false;
        std::string tag = s.substr(i + 1, j - i - 1);
        i = j + 1;
        if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
        if (tag[0] == '/') {
            const std::string name = tag.substr(1);
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
            continue;
        }
        const std::string name = tag.substr(0, tag.find_first_of(" \n/"));
        if (stack.empty()) ++roots;
        if (tag.back() != '/') stack.push_back(name);
    }
    return stack.empty() && roots == 1;
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("cell accounting balances and every row is audited") {
        const SweepConfig cfg = small_sweep();
        const SweepInputs in = random_inputs();
        auto r = run_sweep(cfg, in);
        CHECK(r.rows.size() + r.skips.size() == cfg.methods.size() * cfg.nfe_list.size());
        CHECK(r.skips.size() == 2);
        for (const auto& s : r.skips) {
            CHECK(s.method == "bespoke");
            CHECK(s.nfe != 5);
            CHECK(s.reason.find("n=") != std::string::npos);
        }
        for (const auto& row : r.rows) {
            CHECK(row.audited_nfe == row.nfe);
            CHECK(row.n_samples == 64);
            CHECK(row.frechet >= 0.0);
            CHECK(row.similarity >= -1.0);
            CHECK(row.similarity <= 1.0);
            CHECK_FALSE(row.wall_clock_ms.has_value());
            const bool flow = row.method == "flow" || row.method == "reflow" || row.method == "multiflow" ||
                              row.method == "bespoke";
            CHECK(row.straightness.has_value() == flow);
            CHECK(row.seed == cell_seed(cfg.seed, row.method, row.nfe));
        }
        const std::string csv = sweep_csv(r);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.rows.size() + 1));
        CHECK(skips_csv(r).find("bespoke,1,") != std::string::npos);
    }

    TEST_CASE("identity bespoke matches flow at its step count") {
        const SweepInputs in = random_inputs();
        SweepConfig cfg = small_sweep();
        cfg.methods = {"flow", "bespoke"};
        cfg.nfe_list = {5};
        auto r = run_sweep(cfg, in);
        REQUIRE(r.rows.size() == 2);
        CHECK(r.rows[0].straightness == r.rows[1].straightness);
    }

    TEST_CASE("missing checkpoints become skip records") {
        SweepInputs in = random_inputs();
        in.models.erase("edm");
        in.load_errors["cd"] = "cannot read 'cd.ckpt'";
        SweepConfig cfg = small_sweep();
        auto r = run_sweep(cfg, in);
        CHECK(r.rows.size() + r.skips.size() == 21);
        std::set<std::string> skipped;
        for (const auto& s : r.skips) skipped.insert(s.method);
        CHECK(skipped == std::set<std::string>{"bespoke", "cd", "edm"});
        CHECK(r.provenance.at("skips") == r.skips.size());
    }

    TEST_CASE("same master seed gives the same CSV for any job count") {
        const SweepInputs in = random_inputs();
        SweepConfig a = small_sweep();
        SweepConfig b = a;
        b.jobs = 3;
        const std::string csv = sweep_csv(run_sweep(a, in));
        CHECK(csv == sweep_csv(run_sweep(b, in)));
        SweepConfig c = a;
        c.seed = 12;
        CHECK(csv != sweep_csv(run_sweep(c, in)));
        // adding a method leaves other cells untouched
        SweepConfig d = a;
        d.methods = {"flow"};
        const std::string only_flow = sweep_csv(run_sweep(d, in));
        const std::string first_rows = csv.substr(0, only_flow.size());
        CHECK(first_rows == only_flow);
    }

    TEST_CASE("cell seeds differ across cells") {
        std::set<std::uint64_t> seeds;
        for (const auto& m : sweep_method_names())
            for (int n : default_nfe_list()) seeds.insert(cell_seed(7, m, n));
        CHECK(seeds.size() == sweep_method_names().size() * default_nfe_list().size());
    }

    TEST_CASE("sweep config validation") {
        SweepConfig c = small_sweep();
        c.nfe_list = {2, 1};
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
        c = small_sweep();
        c.methods = {"flow", "sde"};
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
        auto doc = parse_config("[sweep]\nmethods = [\"flow\"]\nnfe = [1, 4]\n[checkpoints]\nflow = \"f.ckpt\"\n"
                                "[transforms]\n\"4\" = \"t4.bin\"\n");
        SweepConfig p = sweep_config_from_doc(doc);
        CHECK(p.methods == std::vector<std::string>{"flow"});
        CHECK(p.nfe_list == std::vector<int>{1, 4});
        CHECK(p.checkpoints.at("flow") == "f.ckpt");
        CHECK(p.transforms.at(4) == "t4.bin");
        try {
            sweep_config_from_doc(parse_config("[sweep]\nseed = 1\nnfe_lst = [1]\n"));
            FAIL("no throw");
        } catch (const ConfigError& e) {
            CHECK(e.line() == 3);
        }
    }

    TEST_CASE("markdown report of a hand-written 2x2 CSV") {
        const std::string csv = std::string(kCsvHeader) +
                                "\nflow,1,0.5,0.9,1.2,0.01,,100,1\nflow,10,0.125,0.95,1.3,0.01,,100,2\n"
                                "edm,1,7.75,0.1,2,,,100,3\nedm,10,0.3333333333,0.8,2.1,,,100,4\n";
        const auto t = parse_sweep_csv(csv);
        const std::string md = report_markdown(t);
        for (const char* v : {"0.5", "0.125", "7.75", "0.3333333333"}) CHECK(md.find(v) != std::string::npos);
        CHECK(md.find("| flow | 0.5 | 0.125 |") != std::string::npos);
        CHECK(md.find("| edm | 7.75 | 0.3333333333 |") != std::string::npos);
        CHECK(report_markdown(t, "similarity").find("| edm | 0.1 | 0.8 |") != std::string::npos);
    }

    TEST_CASE("missing cells render blank") {
        const std::string csv = std::string(kCsvHeader) +
                                "\nflow,4,1,0,0,,,10,1\nflow,5,2,0,0,,,10,1\nflow,8,3,0,0,,,10,1\n"
                                "bespoke,5,4,0,0,,,10,1\nbespoke,8,5,0,0,,,10,1\n";
        const std::string md = report_markdown(parse_sweep_csv(csv));
        CHECK(md.find("| bespoke |  | 4 | 5 |") != std::string::npos);
        CHECK(md.find("| flow | 1 | 2 | 3 |") != std::string::npos);
    }

    TEST_CASE("SVG has one polyline per method and balanced tags") {
        const std::string csv = std::string(kCsvHeader) +
                                "\nflow,1,0.5,0,0,,,10,1\nflow,10,0.1,0,0,,,10,1\nedm,1,9,0,0,,,10,1\n"
                                "edm,10,0.2,0,0,,,10,1\ncd,1,0.4,0,0,,,10,1\n";
        const auto t = parse_sweep_csv(csv);
        for (bool log_y : {false, true}) {
            const std::string svg = report_svg(t, "frechet", log_y);
            CHECK(count(svg, "<polyline") == 3);
            CHECK(balanced_xml(svg));
            CHECK(svg.find("data-method=\"edm\"") != std::string::npos);
        }
    }

    TEST_CASE("malformed CSV names the row") {
        const std::string head = std::string(kCsvHeader) + "\n";
        auto message = [](const std::string& text) {
            try {
                parse_sweep_csv(text);
            } catch (const InvalidArgument& e) {
                return std::string(e.what());
            }
            return std::string();
        };
        CHECK(message(head + "flow,1,0.5,0,0,,,10,1\nflow,2,abc,0,0,,,10,1\n").find("row 2") != std::string::npos);
        CHECK(message(head + "flow,1,0.5,0,0\n").find("row 1") != std::string::npos);
        CHECK(message(head + "flow,1,0.5,0,0,,,10,1\nflow,1,0.5,0,0,,,10,1\nflow,x,1,0,0,,,10,1\n").find("row 3") !=
              std::string::npos);
        CHECK_FALSE(message("a,b\n").empty());
    }
}

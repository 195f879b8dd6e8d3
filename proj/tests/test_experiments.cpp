#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace trackmpc;
using fixtures::vec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("trackmpc_test_" + name);
    fs::remove_all(dir);
    return dir;
}

ExperimentConfig small_scalar(const fs::path& out) {
    ExperimentConfig c = preset("scalar-lq");
    c.N_list = {2, 5};
    c.eta_list = {100.0};
    c.K = 20;
    c.constants.horizon = 10;
    c.output_dir = out.string();
    return c;
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("ini documents") {
    const IniDocument doc = IniDocument::parse("# comment\n[a]\nx = 1\n; other\ny=two words \n\n[b]\nz = 3\n");
    CHECK(doc.get("a", "x") == "1");
    CHECK(doc.get("a", "y") == "two words");
    CHECK(doc.has("b", "z"));
    CHECK_FALSE(doc.has("b", "x"));
    CHECK(doc.get_or("b", "q", "fallback") == "fallback");
    CHECK(doc.sections() == std::vector<std::string>{"a", "b"});
    CHECK(IniDocument::parse(doc.serialize()).serialize() == doc.serialize());

    try {
        (void)doc.get("b", "missing");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("b.missing") != std::string::npos);
    }
    CHECK_THROWS_AS((void)IniDocument::parse("key outside a section = 1\n"), ConfigError);
    CHECK_THROWS_AS((void)IniDocument::parse("[a]\nno equals sign\n"), ConfigError);
}

TEST_CASE("presets survive a serialize and parse round trip") {
    for (const std::string& name : preset_names()) {
        const ExperimentConfig c = preset(name);
        CHECK_NOTHROW(c.validate());
        const std::string text = serialize_config(c);
        const ExperimentConfig back = parse_config(text);
        CHECK(serialize_config(back) == text);
        CHECK(back.N_list == c.N_list);
        CHECK(back.eta_list == c.eta_list);
        CHECK((back.x0 - c.x0).norm() == 0.0);
        CHECK(back.ablations.size() == c.ablations.size());
    }
    CHECK_THROWS_AS((void)preset("no-such-preset"), ConfigError);
}

TEST_CASE("the cstr preset carries the reference setup") {
    const ExperimentConfig c = preset("cstr-paper");
    CHECK(c.model == "cstr");
    CHECK(c.x0[0] == 0.9492);
    CHECK(c.x0[1] == 0.43);
    CHECK(c.K == 300);
    CHECK(c.N_list == std::vector<int>{10, 20, 30, 50, 100});
    CHECK(c.eta_list == std::vector<double>{0.5, 10.0});
    CHECK(c.offset_weights[1] == 1000.0);
    REQUIRE(c.ablations.size() == 1);
    CHECK(c.ablations[0].N == 1000);
    CHECK(c.ablations[0].lambda.kind == ScalingFn::Kind::constant);
    CHECK(c.spec.ref_input.upper[0] == 0.7687);
}

TEST_CASE("config errors name the field") {
    std::string text = serialize_config(preset("scalar-lq"));
    const auto pos = text.find("model = scalar_lq\n");
    REQUIRE(pos != std::string::npos);
    const std::string no_model = std::string(text).erase(pos, std::string("model = scalar_lq\n").size());
    try {
        (void)parse_config(no_model);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("experiment.model") != std::string::npos);
    }

    std::string bad_model = text;
    bad_model.replace(pos, std::string("model = scalar_lq").size(), "model = pendulum");
    CHECK_THROWS_AS((void)parse_config(bad_model).validate(), ConfigError);

    std::string bad_number = text;
    bad_number.replace(bad_number.find("K = 60"), 6, "K = sixty");
    CHECK_THROWS_AS((void)parse_config(bad_number), ConfigError);
    CHECK_THROWS_AS((void)load_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("an empty N list writes only the summary") {
    const fs::path out = scratch_dir("empty");
    ExperimentConfig c = small_scalar(out);
    c.N_list.clear();
    c.ablations.clear();
    c.oracle_enabled = false;
    c.constants_enabled = false;
    const ExperimentSummary s = run_experiment(c);
    CHECK(s.rows.empty());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(out)) {
        names.push_back(entry.path().filename().string());
    }
    CHECK(names == std::vector<std::string>{"summary.txt"});
}

TEST_CASE("scalar sweep approaches the Riccati cost and writes the csv schemas") {
    const fs::path out = scratch_dir("sweep");
    ExperimentConfig c = small_scalar(out);
    c.N_list = {2, 30};
    c.K = 60;
    c.constants_enabled = false;
    const ExperimentSummary s = run_experiment(c);
    const double riccati = fixtures::golden_ratio() * 4.0;
    bool found = false;
    for (const SweepRow& row : s.rows) {
        CHECK(row.status == "completed");
        if (row.scheme == "tracking" && row.N == 30) {
            CHECK(row.J == doctest::Approx(riccati).epsilon(0.01));
            found = true;
        }
    }
    CHECK(found);
    REQUIRE(s.oracle.has_value());
    CHECK(s.oracle->J_inf == doctest::Approx(riccati).epsilon(1e-6));

    std::istringstream sweep(slurp(out / "sweep.csv"));
    std::string header;
    std::getline(sweep, header);
    CHECK(header == "scheme,N,eta,lambda,J_K_d,sup_r,gamma_fit,bound_rhs,status");
    std::istringstream manifold(slurp(out / "manifold.csv"));
    std::getline(manifold, header);
    CHECK(header == "x,xr_1,ur_1,T");
    std::istringstream oracle(slurp(out / "oracle.csv"));
    std::getline(oracle, header);
    CHECK(header == "t,x_1,u_1,ell");
    CHECK(fs::exists(out / "tracking_N30_eta100.csv"));
    CHECK(fs::exists(out / "standard_N2.csv"));
}

TEST_CASE("outputs do not depend on the number of jobs") {
    const fs::path a = scratch_dir("jobs1");
    const fs::path b = scratch_dir("jobs4");
    (void)run_experiment(small_scalar(a), RunOptions{1});
    (void)run_experiment(small_scalar(b), RunOptions{4});
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        const fs::path other = b / entry.path().filename();
        REQUIRE(fs::exists(other));
        const std::string lhs = slurp(entry.path());
        std::string rhs = slurp(other);
        if (entry.path().filename() == "summary.txt") {
            // The summary records its own output directory.
            const std::string from = b.string();
            for (auto pos = rhs.find(from); pos != std::string::npos; pos = rhs.find(from, pos)) {
                rhs.replace(pos, from.size(), a.string());
            }
        }
        CHECK_MESSAGE(lhs == rhs, entry.path().filename().string());
        ++compared;
    }
    CHECK(compared >= 8);
}

}  // TEST_SUITE

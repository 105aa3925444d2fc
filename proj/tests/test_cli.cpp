#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_helpers.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MBSMA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

}  // namespace

TEST_CASE("cli: parse errors exit 2, help exits 0") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("frobnicate") == 2);
}

TEST_CASE("cli: simulate") {
    const std::string dir = mbsma::test::temp_dir("cli_sim");

    SUBCASE("malformed config exits 2") {
        write_file(dir + "/bad.json", "{not json");
        CHECK(run_cli("simulate --config " + dir + "/bad.json --out " + dir + "/out") == 2);
    }
    SUBCASE("valid config writes datasets and a manifest") {
        write_file(dir + "/ok.json", R"({"scenario": "I.1", "n_subjects": 25, "seed": 5})");
        CHECK(run_cli("simulate --config " + dir + "/ok.json --out " + dir + "/out") == 0);
        CHECK(fs::exists(dir + "/out/longitudinal.csv"));
        CHECK(fs::exists(dir + "/out/survival.csv"));
        CHECK(fs::exists(dir + "/out/markers.json"));
        CHECK(fs::exists(dir + "/out/true_effects.csv"));
        CHECK(fs::exists(dir + "/out/manifest.json"));
        CHECK(fs::exists(dir + "/out/scenario_used.json"));
    }
    SUBCASE("three replicates produce numbered subdirectories") {
        write_file(dir + "/rep.json", R"({"scenario": "I.1", "n_subjects": 20, "seed": 5, "replicates": 3})");
        CHECK(run_cli("simulate --config " + dir + "/rep.json --out " + dir + "/rep_out") == 0);
        CHECK(fs::exists(dir + "/rep_out/rep001/longitudinal.csv"));
        CHECK(fs::exists(dir + "/rep_out/rep002/longitudinal.csv"));
        CHECK(fs::exists(dir + "/rep_out/rep003/longitudinal.csv"));
        int manifests = 0;
        for (const auto& e : fs::directory_iterator(dir + "/rep_out"))
            if (e.path().filename() == "manifest.json") ++manifests;
        CHECK(manifests == 1);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli: fit and predict round-trip") {
    const std::string dir = mbsma::test::temp_dir("cli_fit");
    write_file(dir + "/scn.json",
               R"({"scenario": "I.1", "n_subjects": 60, "seed": 11, "cens_target": 0.15})");
    REQUIRE(run_cli("simulate --config " + dir + "/scn.json --out " + dir + "/data") == 0);

    SUBCASE("fit a one-marker model, then predict from it") {
        write_file(dir + "/spec.json", R"({"markers": [1], "knots": 2})");
        CHECK(run_cli("fit --data " + dir + "/data --spec " + dir + "/spec.json --out " + dir + "/model") == 0);
        CHECK(fs::exists(dir + "/model/fitted_model.json"));
        CHECK(fs::exists(dir + "/model/manifest.json"));

        nlohmann::json plan{{"data", {{"dir", dir + "/data"}}},
                            {"models", {dir + "/model/fitted_model.json"}},
                            {"landmarks", {0.5}},
                            {"window", 0.5},
                            {"mc_draws", 30},
                            {"seed", 2}};
        write_file(dir + "/pplan.json", plan.dump());
        CHECK(run_cli("predict --plan " + dir + "/pplan.json --out " + dir + "/pred") == 0);
        CHECK(fs::exists(dir + "/pred/predictions.csv"));
        std::string header;
        std::ifstream in(dir + "/pred/predictions.csv");
        std::getline(in, header);
        CHECK(header == "subject_id,model_id,s,t,pi_hat,mc_se");
    }
    SUBCASE("no-event dataset exits 3") {
        // rewrite survival.csv with all events censored
        std::ifstream in(dir + "/data/survival.csv");
        std::string line;
        std::getline(in, line);
        std::ostringstream surv;
        surv << line << '\n';
        while (std::getline(in, line)) {
            const size_t last = line.rfind(',');
            (void)last;
            // columns: subject_id, obs_time, event
            std::istringstream ls(line);
            std::string id, t, ev;
            std::getline(ls, id, ',');
            std::getline(ls, t, ',');
            std::getline(ls, ev, ',');
            surv << id << ',' << t << ",0\n";
        }
        in.close();
        write_file(dir + "/data/survival.csv", surv.str());
        write_file(dir + "/spec.json", R"({"markers": [1]})");
        CHECK(run_cli("fit --data " + dir + "/data --spec " + dir + "/spec.json --out " + dir + "/m2") == 3);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli: weights command") {
    const std::string dir = mbsma::test::temp_dir("cli_weights");
    write_file(dir + "/scn.json",
               R"({"scenario": "I.1", "n_subjects": 50, "seed": 13, "cens_target": 0.15})");
    REQUIRE(run_cli("simulate --config " + dir + "/scn.json --out " + dir + "/data") == 0);
    write_file(dir + "/spec1.json", R"({"markers": [1], "knots": 2})");
    write_file(dir + "/spec2.json", R"({"markers": [2], "knots": 2})");
    REQUIRE(run_cli("fit --data " + dir + "/data --spec " + dir + "/spec1.json --out " + dir + "/m1") == 0);
    REQUIRE(run_cli("fit --data " + dir + "/data --spec " + dir + "/spec2.json --out " + dir + "/m2") == 0);

    nlohmann::json plan{{"data", {{"dir", dir + "/data"}}},
                        {"models", {dir + "/m1/fitted_model.json", dir + "/m2/fitted_model.json"}},
                        {"landmarks", {0.5}},
                        {"window", 0.5},
                        {"mc_draws", 30},
                        {"seed", 6}};
    write_file(dir + "/wplan.json", plan.dump());
    CHECK(run_cli("weights --plan " + dir + "/wplan.json --out " + dir + "/w") == 0);
    CHECK(fs::exists(dir + "/w/weights.json"));
    CHECK(fs::exists(dir + "/w/ma_predictions.csv"));

    nlohmann::json weights = nlohmann::json::parse(slurp(dir + "/w/weights.json"));
    REQUIRE(weights.at("entries").size() == 1);
    const auto& entry = weights.at("entries")[0];
    double total = 0.0;
    for (const auto& w : entry.at("w")) total += w.get<double>();
    CHECK(std::abs(total - 1.0) < 1e-8);
    CHECK(entry.at("kkt_residual").get<double>() <= 1e-7);
    fs::remove_all(dir);
}

TEST_CASE("cli: evaluate is idempotent and enforces the dimension cap") {
    const std::string dir = mbsma::test::temp_dir("cli_eval");

    SUBCASE("identical plans give identical reports") {
        nlohmann::json plan{{"data", {{"scenario", "I.1"}, {"n_subjects", 50}, {"cens_target", 0.15}}},
                            {"methods", {"one_marker_models"}},
                            {"landmarks", {0.5}},
                            {"window", 0.5},
                            {"split", {{"type", "holdout"}, {"learning_fraction", 0.8}}},
                            {"seed", 4},
                            {"mc_draws", 25},
                            {"mh_burnin", 50},
                            {"knots", 2},
                            {"quad_points", 3},
                            {"charts", true}};
        write_file(dir + "/eplan.json", plan.dump());
        CHECK(run_cli("evaluate --plan " + dir + "/eplan.json --out " + dir + "/r1") == 0);
        CHECK(run_cli("evaluate --plan " + dir + "/eplan.json --out " + dir + "/r2") == 0);
        CHECK(fs::exists(dir + "/r1/report.json"));
        CHECK(fs::exists(dir + "/r1/metrics.csv"));
        CHECK(fs::exists(dir + "/r1/charts/auc.svg"));
        CHECK(fs::exists(dir + "/r1/charts/brier.svg"));
        CHECK(slurp(dir + "/r1/report.json") == slurp(dir + "/r2/report.json"));
        CHECK(slurp(dir + "/r1/metrics.csv") == slurp(dir + "/r2/metrics.csv"));
    }
    SUBCASE("all-marker model with 7 markers exits 4") {
        nlohmann::json plan{{"data", {{"scenario", "S.1"}, {"n_subjects", 30}}},
                            {"methods", {"all_marker_model"}},
                            {"landmarks", {0.5}},
                            {"window", 0.5},
                            {"seed", 4}};
        write_file(dir + "/cap.json", plan.dump());
        CHECK(run_cli("evaluate --plan " + dir + "/cap.json --out " + dir + "/cap_out") == 4);
    }
    fs::remove_all(dir);
}

#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common.hpp"
#include "csv.hpp"
#include "harness.hpp"
#include "ipcw.hpp"
#include "joint_model.hpp"
#include "model_averaging.hpp"
#include "parallel.hpp"
#include "prediction.hpp"
#include "scenario.hpp"

namespace mbsma {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_config("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw_config("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash_str(buf.str())));
    return hex;
}

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    return buf;
}

struct ManifestWriter {
    nlohmann::json j;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    ManifestWriter(const std::string& command, const std::string& config_path) {
        j["command"] = command;
        j["version"] = "0.1.0";
        j["config"] = config_path;
        j["config_hash"] = file_hash_hex(config_path);
        j["timestamp_utc"] = iso_timestamp();
    }
    void finish(const std::string& out_dir) {
        j["wall_clock_sec"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "manifest.json");
        out << j.dump(2) << '\n';
    }
};

struct LoadedModels {
    std::vector<FittedJointModel> models;
    std::vector<std::string> paths;
};

LoadedModels load_models(const nlohmann::json& plan) {
    LoadedModels out;
    if (!plan.contains("models")) throw_config("plan needs a 'models' list of fitted-model paths");
    for (const auto& p : plan.at("models")) {
        out.paths.push_back(p.get<std::string>());
        out.models.push_back(load_model(out.paths.back()));
    }
    if (out.models.empty()) throw_config("plan lists no models");
    return out;
}

struct PredictPlan {
    std::string data_dir;
    std::vector<double> landmarks;
    double window = 0.5;
    int mc_draws = 500;
    int mh_burnin = 200;
    uint64_t seed = 1;
    int jobs = 0;
};

PredictPlan parse_predict_plan(const nlohmann::json& j, const CommandOptions& opts) {
    PredictPlan p;
    try {
        p.data_dir = j.at("data").at("dir").get<std::string>();
        p.landmarks = j.at("landmarks").get<std::vector<double>>();
        p.window = j.at("window").get<double>();
        p.mc_draws = j.value("mc_draws", 500);
        p.mh_burnin = j.value("mh_burnin", 200);
        p.seed = j.value("seed", 1ULL);
        p.jobs = j.value("jobs", 0);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw_config(std::string("invalid plan: ") + e.what());
    }
    if (opts.seed >= 0) p.seed = static_cast<uint64_t>(opts.seed);
    if (opts.mc_draws > 0) p.mc_draws = opts.mc_draws;
    if (opts.mh_burnin > 0) p.mh_burnin = opts.mh_burnin;
    if (opts.jobs > 0) p.jobs = opts.jobs;
    if (p.landmarks.empty()) throw_config("plan needs landmarks");
    if (!(p.window > 0.0)) throw_config("window must be positive");
    return p;
}

}  // namespace

void cmd_simulate(const std::string& config_path, const std::string& out_dir, const CommandOptions& opts) {
    ManifestWriter manifest("simulate", config_path);
    ScenarioConfig cfg = parse_scenario(read_json_file(config_path));
    if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
    manifest.j["seed"] = cfg.seed;
    manifest.j["scenario"] = cfg.name;

    nlohmann::json outputs = nlohmann::json::array();
    for (int rep = 0; rep < cfg.replicates; ++rep) {
        fs::path dir = out_dir;
        if (cfg.replicates > 1) {
            char sub[16];
            std::snprintf(sub, sizeof(sub), "rep%03d", rep + 1);
            dir /= sub;
        }
        fs::create_directories(dir);
        const uint64_t rep_seed = SeedStream(cfg.seed).mix("data").mix(static_cast<uint64_t>(rep)).get();
        GeneratedData gen = generate_dataset(cfg, rep_seed);
        write_dataset(gen.dataset, dir.string());
        write_true_effects(gen, (dir / "true_effects.csv").string());

        nlohmann::json used = scenario_to_json(cfg);
        used["replicate"] = rep;
        used["replicate_seed"] = rep_seed;
        used["cens_rate_used"] = gen.cens_rate_used;
        used["realized_censoring"] = gen.realized_censoring;
        used["realized_events"] = gen.realized_events;
        std::ofstream su(dir / "scenario_used.json");
        su << used.dump(2) << '\n';
        outputs.push_back(dir.string());
    }
    manifest.j["outputs"] = outputs;
    manifest.finish(out_dir);
}

void cmd_fit(const std::string& data_dir, const std::string& spec_path, const std::string& out_dir,
             const CommandOptions& opts) {
    ManifestWriter manifest("fit", spec_path);
    const nlohmann::json sj = read_json_file(spec_path);
    Dataset ds = read_dataset(data_dir);

    ModelSpec spec;
    try {
        for (const auto& mk : sj.at("markers")) {
            MarkerDesign d;
            if (mk.is_number_integer()) {
                d.marker_id = mk.get<int>();
            } else {
                d.marker_id = mk.at("marker_id").get<int>();
                d.covariates = mk.value("covariates", std::vector<std::string>{});
                d.random_slope = mk.value("random_slope", true);
            }
            spec.markers.push_back(d);
        }
        spec.survival_covariates = sj.value("survival_covariates", std::vector<std::string>{});
        spec.knots = sj.value("knots", 5);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw_config(std::string("invalid model spec: ") + e.what());
    }

    FitOptions fo;
    if (opts.knots > 0) fo.knots = opts.knots;
    if (opts.quad_points > 0) fo.quad_points = opts.quad_points;
    FittedJointModel fitted = fit(ds, spec, fo);

    fs::create_directories(out_dir);
    save_model(fitted, (fs::path(out_dir) / "fitted_model.json").string());
    manifest.j["data"] = data_dir;
    manifest.j["outputs"] = {"fitted_model.json"};
    manifest.j["model_id"] = fitted.model_id;
    manifest.j["converged"] = fitted.converged;
    manifest.j["log_likelihood"] = fitted.loglik;
    manifest.finish(out_dir);
}

void cmd_predict(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts) {
    ManifestWriter manifest("predict", plan_path);
    const nlohmann::json pj = read_json_file(plan_path);
    PredictPlan plan = parse_predict_plan(pj, opts);
    LoadedModels loaded = load_models(pj);
    Dataset ds = read_dataset(plan.data_dir);

    CsvTable table;
    table.header = {"subject_id", "model_id", "s", "t", "pi_hat", "mc_se"};
    for (double s : plan.landmarks) {
        RiskSetFrame frame = ipcw_frame(ds, s, plan.window);
        for (const auto& model : loaded.models) {
            std::vector<RiskPrediction> preds(frame.n_at_risk());
            parallel_for(frame.n_at_risk(), plan.jobs, [&](int i) {
                SubjectHistory hist = truncate_history(ds, frame.subject_idx[i], s);
                PredictionQuery q;
                q.s = s;
                q.t = plan.window;
                q.mc_draws = plan.mc_draws;
                q.mh_burnin = plan.mh_burnin;
                q.seed = SeedStream(plan.seed).mix(model.model_id).mix(hist.subject_id).mix(s).mix(plan.window).get();
                preds[i] = predict_risk(model, hist, q);
            });
            for (const auto& p : preds)
                table.rows.push_back({p.subject_id, model.model_id, format_double(s), format_double(plan.window),
                                      format_double(p.point), format_double(p.mc_se)});
        }
    }
    fs::create_directories(out_dir);
    write_csv((fs::path(out_dir) / "predictions.csv").string(), table);
    manifest.j["outputs"] = {"predictions.csv"};
    manifest.j["seed"] = plan.seed;
    manifest.finish(out_dir);
}

void cmd_weights(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts) {
    ManifestWriter manifest("weights", plan_path);
    const nlohmann::json pj = read_json_file(plan_path);
    PredictPlan plan = parse_predict_plan(pj, opts);
    LoadedModels loaded = load_models(pj);
    Dataset ds = read_dataset(plan.data_dir);

    std::vector<const FittedJointModel*> models;
    for (const auto& m : loaded.models) models.push_back(&m);

    nlohmann::json entries = nlohmann::json::array();
    CsvTable ma_table;
    ma_table.header = {"subject_id", "s", "t", "pi_hat", "se_buckland", "se_burnham"};
    for (double s : plan.landmarks) {
        RiskSetFrame frame = ipcw_frame(ds, s, plan.window);
        MatrixOptions mo;
        mo.mc_draws = plan.mc_draws;
        mo.mh_burnin = plan.mh_burnin;
        mo.seed = plan.seed;
        mo.jobs = plan.jobs;
        PredictionMatrix matrix = build_prediction_matrix(models, ds, frame, mo);
        WeightSolution sol = solve_weights(matrix, frame);
        entries.push_back({{"s", s},
                           {"t", plan.window},
                           {"model_ids", matrix.model_ids},
                           {"w", std::vector<double>(sol.w.data(), sol.w.data() + sol.w.size())},
                           {"objective", sol.objective},
                           {"kkt_residual", sol.kkt_residual}});
        for (const auto& ap : ma_standard_errors(matrix, sol))
            ma_table.rows.push_back({ap.subject_id, format_double(s), format_double(plan.window),
                                     format_double(ap.point), format_double(ap.se_buckland),
                                     format_double(ap.se_burnham)});
    }
    fs::create_directories(out_dir);
    std::ofstream wj(fs::path(out_dir) / "weights.json");
    wj << nlohmann::json{{"entries", entries}}.dump(2) << '\n';
    write_csv((fs::path(out_dir) / "ma_predictions.csv").string(), ma_table);
    manifest.j["outputs"] = {"weights.json", "ma_predictions.csv"};
    manifest.j["seed"] = plan.seed;
    manifest.finish(out_dir);
}

void cmd_evaluate(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts) {
    ManifestWriter manifest("evaluate", plan_path);
    ExperimentPlan plan = parse_plan(read_json_file(plan_path));
    if (opts.seed >= 0) plan.seed = static_cast<uint64_t>(opts.seed);
    if (opts.jobs > 0) plan.jobs = opts.jobs;
    if (opts.mc_draws > 0) plan.mc_draws = opts.mc_draws;
    if (opts.knots > 0) plan.knots = opts.knots;
    if (opts.quad_points > 0) plan.quad_points = opts.quad_points;
    if (opts.mh_burnin > 0) plan.mh_burnin = opts.mh_burnin;

    EvaluationReport report = run_experiment(plan);
    write_report(report, out_dir);
    manifest.j["outputs"] = plan.charts
                                ? nlohmann::json({"report.json", "metrics.csv", "charts/auc.svg", "charts/brier.svg"})
                                : nlohmann::json({"report.json", "metrics.csv"});
    manifest.j["seed"] = plan.seed;
    manifest.j["stage_seconds"] = {{"fit", report.timing.fit},
                                   {"predict", report.timing.predict},
                                   {"weights", report.timing.weights},
                                   {"score", report.timing.score}};
    manifest.finish(out_dir);
}

}  // namespace mbsma

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "scenario.hpp"

namespace mbsma {

struct SplitSpec {
    std::string type = "holdout";  // holdout | kfold
    double learning_fraction = 0.8;
    int folds = 5;
};

struct ExperimentPlan {
    std::string data_dir;  // either a dataset directory ...
    std::optional<ScenarioConfig> scenario;  // ... or a generative scenario
    std::vector<std::string> methods;
    std::vector<double> landmarks;
    double window = 0.5;
    SplitSpec split;
    int replicates = 1;
    uint64_t seed = 1;
    int mc_draws = 500;
    int mh_burnin = 200;
    int knots = 5;
    int quad_points = 0;  // 0: per-dimension default
    int jobs = 0;
    bool charts = true;
    double weight_inner_fraction = 1.0;  // < 1: inner split of the learning set for weight estimation
    std::string on_unconverged = "drop";
    bool abort_on_failure = false;
};

ExperimentPlan parse_plan(const nlohmann::json& j);
nlohmann::json plan_to_json(const ExperimentPlan& plan);

struct MetricCell {
    std::string method;
    double s = 0.0, t = 0.0;
    int replicate = 0, fold = 0;
    std::optional<double> auc, brier, mse;
    int n_at_risk = 0, n_events = 0;
    std::string status = "ok";
};

struct WeightRecord {
    std::string method;
    double s = 0.0, t = 0.0;
    int replicate = 0, fold = 0;
    std::vector<std::string> model_ids;
    std::vector<double> w;
    double objective = 0.0;
    double kkt_residual = 0.0;
};

struct StageTiming {
    double fit = 0.0, predict = 0.0, weights = 0.0, score = 0.0;
};

struct SummaryRow {
    std::string method;
    double s = 0.0, t = 0.0;
    int n = 0;
    std::optional<double> mean_auc, sd_auc, mean_brier, sd_brier, mean_mse, sd_mse;
    double mean_n_at_risk = 0.0, mean_n_events = 0.0;
};

struct EvaluationReport {
    ExperimentPlan plan;
    std::vector<MetricCell> cells;
    std::vector<WeightRecord> weight_records;
    StageTiming timing;  // reported through the run manifest, not report.json

    nlohmann::json to_json() const;
};

std::vector<SummaryRow> summarize(const EvaluationReport& report);

EvaluationReport run_experiment(const ExperimentPlan& plan);

// report.json, metrics.csv and (optionally) charts/ under out_dir
void write_report(const EvaluationReport& report, const std::string& out_dir);

}  // namespace mbsma

#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dataset.hpp"

namespace mbsma {

// Generative configuration for the simulation scenarios: multivariate mixed
// model with random intercept and slope per marker, constant baseline hazard,
// current-value association with optionally time-linear coefficients, Weibull
// plus administrative censoring.
struct ScenarioConfig {
    std::string name = "custom";
    int n_subjects = 1000;
    std::vector<Family> families;
    std::vector<Eigen::Vector2d> beta;  // (intercept, slope) per marker
    std::vector<double> sigma2;         // gaussian markers
    Eigen::MatrixXd b_cov;              // 2K x 2K
    Eigen::VectorXd alpha0;             // association at t = 0
    Eigen::VectorXd alpha1;             // linear time trend of the association
    double lambda0 = 0.1;
    double cens_weibull_shape = 1.0;
    double cens_weibull_rate = -1.0;  // < 0: calibrate from cens_target
    double cens_target = 0.25;        // target pre-cutoff censoring fraction
    double admin_cutoff = 2.0;
    std::vector<double> visit_grid;
    uint64_t seed = 1;
    int replicates = 1;

    int n_markers() const { return static_cast<int>(families.size()); }
};

// Named configurations: I.1-I.3, D.1-D.3, M.1-M.3, S.1, S.2, scenario4.
ScenarioConfig scenario_registry(const std::string& name);
std::vector<std::string> scenario_names();

// JSON form: either {"scenario": "<registry name>", ...overrides} or a full
// custom description.
ScenarioConfig parse_scenario(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioConfig& cfg);

struct GeneratedData {
    Dataset dataset;
    Eigen::MatrixXd true_effects;  // n x 2K, row order matches dataset.subjects
    double cens_rate_used = 0.0;
    double realized_censoring = 0.0;  // pre-cutoff censoring fraction
    double realized_events = 0.0;
};

GeneratedData generate_dataset(const ScenarioConfig& cfg);
GeneratedData generate_dataset(const ScenarioConfig& cfg, uint64_t seed);

// Latent event time for fixed random effects: solves Lambda(T) = e by
// bisection; +inf when the hazard never accumulates enough mass.
double scenario_event_time(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double exp_draw, double horizon);

double scenario_cumulative_hazard(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double t);

// 1 - exp(-(Lambda(s+t) - Lambda(s))) under the generating hazard.
double true_risk(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double s, double t);

// Subject-level resample with replacement; resampled subjects get fresh ids.
Dataset bootstrap_mimic(const Dataset& dataset, uint64_t seed);

void write_true_effects(const GeneratedData& gen, const std::string& path);
Eigen::MatrixXd read_true_effects(const std::string& path, const Dataset& dataset);

}  // namespace mbsma

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"

namespace mbsma {

// Kaplan-Meier estimator of the probability of remaining uncensored:
// censorings play the role of events, events censor.
struct CensoringCurve {
    std::vector<double> jump_times;  // strictly increasing
    std::vector<double> values;      // G after each jump, nonincreasing

    double eval(double u) const;       // right-continuous G(u)
    double eval_left(double u) const;  // G(u-)
};

CensoringCurve censoring_km(const Dataset& dataset);

// At-risk subjects at landmark s with observed in-window event indicators
// D*_i(s,t) and IPCW weights Psi_i(s,t).
struct RiskSetFrame {
    double s = 0.0, t = 0.0;
    std::vector<int> subject_idx;  // indices into the dataset
    std::vector<std::string> subject_ids;
    std::vector<int> d_star;
    std::vector<double> psi;

    int n_at_risk() const { return static_cast<int>(subject_idx.size()); }
    int n_events() const;
};

RiskSetFrame ipcw_frame(const Dataset& dataset, double s, double t);

// Time-dependent AUC (IPCW-weighted concordance, ties count 1/2). Empty when
// there are no cases or no positive-weight controls.
std::optional<double> auc(const std::vector<double>& predictions, const RiskSetFrame& frame);

// IPCW Brier score; both algebraic forms are computed and cross-checked.
double brier(const std::vector<double>& predictions, const RiskSetFrame& frame);

double mse(const std::vector<double>& predictions, const std::vector<double>& truths);

}  // namespace mbsma

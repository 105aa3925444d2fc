#include "ipcw.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "common.hpp"
#include "csv.hpp"

namespace mbsma {

double CensoringCurve::eval(double u) const {
    double g = 1.0;
    for (size_t i = 0; i < jump_times.size(); ++i) {
        if (jump_times[i] > u) break;
        g = values[i];
    }
    return g;
}

double CensoringCurve::eval_left(double u) const {
    double g = 1.0;
    for (size_t i = 0; i < jump_times.size(); ++i) {
        if (jump_times[i] >= u) break;
        g = values[i];
    }
    return g;
}

CensoringCurve censoring_km(const Dataset& ds) {
    // censoring counts per time; at a tie, events stay in the risk set
    std::map<double, int> cens;
    for (const auto& s : ds.subjects)
        if (s.event == 0) cens[s.observed_time] += 1;

    CensoringCurve curve;
    double g = 1.0;
    for (const auto& [time, d] : cens) {
        int at_risk = 0;
        for (const auto& s : ds.subjects)
            if (s.observed_time >= time) ++at_risk;
        g *= 1.0 - static_cast<double>(d) / at_risk;
        curve.jump_times.push_back(time);
        curve.values.push_back(g);
    }
    return curve;
}

int RiskSetFrame::n_events() const { return std::accumulate(d_star.begin(), d_star.end(), 0); }

RiskSetFrame ipcw_frame(const Dataset& ds, double s, double t) {
    RiskSetFrame frame;
    frame.s = s;
    frame.t = t;
    const CensoringCurve g = censoring_km(ds);
    const double g_s = g.eval(s);
    if (g_s <= 0.0) throw_data("censoring support exhausted before s=" + format_double(s));

    for (int i = 0; i < ds.n_subjects(); ++i) {
        const auto& rec = ds.subjects[i];
        if (!(rec.observed_time > s)) continue;
        frame.subject_idx.push_back(i);
        frame.subject_ids.push_back(rec.subject_id);
        const bool in_window = rec.observed_time <= s + t;
        if (!in_window) {
            const double g_st = g.eval(s + t);
            if (g_st <= 0.0) throw_data("censoring support exhausted before s+t=" + format_double(s + t));
            frame.d_star.push_back(0);
            frame.psi.push_back(g_s / g_st);
        } else if (rec.event == 1) {
            const double g_ev = g.eval_left(rec.observed_time);
            if (g_ev <= 0.0)
                throw_data("censoring support exhausted before event at t=" + format_double(rec.observed_time));
            frame.d_star.push_back(1);
            frame.psi.push_back(g_s / g_ev);
        } else {
            frame.d_star.push_back(0);  // censored inside the window
            frame.psi.push_back(0.0);
        }
    }
    if (frame.subject_idx.empty()) throw_data("empty risk set at s=" + format_double(s));
    return frame;
}

std::optional<double> auc(const std::vector<double>& pi, const RiskSetFrame& frame) {
    const int n = frame.n_at_risk();
    if (static_cast<int>(pi.size()) != n) throw_data("prediction vector does not cover the risk set");

    struct Row {
        double p, w;
        bool is_case;
    };
    std::vector<Row> rows;
    double w_case = 0.0, w_ctrl = 0.0;
    for (int i = 0; i < n; ++i) {
        if (frame.psi[i] <= 0.0) continue;
        const bool is_case = frame.d_star[i] == 1;
        rows.push_back({pi[i], frame.psi[i], is_case});
        (is_case ? w_case : w_ctrl) += frame.psi[i];
    }
    if (w_case <= 0.0 || w_ctrl <= 0.0) return std::nullopt;

    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.p < b.p; });
    double num = 0.0, ctrl_below = 0.0;
    size_t i = 0;
    while (i < rows.size()) {
        size_t j = i;
        double case_here = 0.0, ctrl_here = 0.0;
        while (j < rows.size() && rows[j].p == rows[i].p) {
            (rows[j].is_case ? case_here : ctrl_here) += rows[j].w;
            ++j;
        }
        num += case_here * (ctrl_below + 0.5 * ctrl_here);
        ctrl_below += ctrl_here;
        i = j;
    }
    return num / (w_case * w_ctrl);
}

double brier(const std::vector<double>& pi, const RiskSetFrame& frame) {
    const int n = frame.n_at_risk();
    if (static_cast<int>(pi.size()) != n) throw_data("prediction vector does not cover the risk set");
    if (n == 0) throw_data("empty risk set");

    double weighted = 0.0;
    for (int i = 0; i < n; ++i) {
        const double r = frame.d_star[i] - pi[i];
        weighted += frame.psi[i] * r * r;
    }
    weighted /= n;

    // two-sum form: survivors contribute pi^2, in-window events (1-pi)^2
    double split = 0.0;
    for (int i = 0; i < n; ++i) {
        if (frame.d_star[i] == 1)
            split += frame.psi[i] * (1.0 - pi[i]) * (1.0 - pi[i]);
        else
            split += frame.psi[i] * pi[i] * pi[i];
    }
    split /= n;

    if (std::abs(weighted - split) > 1e-12 * std::max(1.0, std::abs(weighted)))
        throw_numeric("Brier score forms disagree: " + format_double(weighted) + " vs " + format_double(split));
    return weighted;
}

double mse(const std::vector<double>& pi, const std::vector<double>& truths) {
    if (pi.size() != truths.size()) throw_data("prediction/truth length mismatch");
    if (pi.empty()) throw_data("empty prediction vector");
    double acc = 0.0;
    for (size_t i = 0; i < pi.size(); ++i) {
        const double d = pi[i] - truths[i];
        acc += d * d;
    }
    return acc / pi.size();
}

}  // namespace mbsma

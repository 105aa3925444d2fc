#include "harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "common.hpp"
#include "csv.hpp"
#include "ipcw.hpp"
#include "joint_model.hpp"
#include "model_averaging.hpp"
#include "parallel.hpp"
#include "prediction.hpp"
#include "svg.hpp"

namespace mbsma {

namespace {

const std::set<std::string> kKnownMethods = {"one_marker_models", "two_marker_models", "all_marker_model",
                                             "one_marker_ma", "two_marker_ma"};

double now_sec() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

ExperimentPlan parse_plan(const nlohmann::json& j) {
    ExperimentPlan plan;
    try {
        const auto& data = j.at("data");
        if (data.contains("dir"))
            plan.data_dir = data.at("dir").get<std::string>();
        else
            plan.scenario = parse_scenario(data);

        plan.methods = j.at("methods").get<std::vector<std::string>>();
        plan.landmarks = j.at("landmarks").get<std::vector<double>>();
        plan.window = j.at("window").get<double>();
        if (j.contains("split")) {
            const auto& sp = j.at("split");
            plan.split.type = sp.value("type", std::string("holdout"));
            plan.split.learning_fraction = sp.value("learning_fraction", 0.8);
            plan.split.folds = sp.value("folds", 5);
        }
        plan.replicates = j.value("replicates", 1);
        plan.seed = j.value("seed", 1ULL);
        plan.mc_draws = j.value("mc_draws", 500);
        plan.mh_burnin = j.value("mh_burnin", 200);
        plan.knots = j.value("knots", 5);
        plan.quad_points = j.value("quad_points", 0);
        plan.jobs = j.value("jobs", 0);
        plan.charts = j.value("charts", true);
        plan.weight_inner_fraction = j.value("weight_inner_fraction", 1.0);
        plan.on_unconverged = j.value("on_unconverged", std::string("drop"));
        plan.abort_on_failure = j.value("abort_on_failure", false);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw_config(std::string("invalid plan: ") + e.what());
    }

    if (plan.methods.empty()) throw_config("plan needs at least one method");
    for (const auto& m : plan.methods)
        if (!kKnownMethods.count(m)) throw_config("unknown method '" + m + "'");
    if (plan.landmarks.empty()) throw_config("plan needs at least one landmark");
    for (size_t i = 0; i < plan.landmarks.size(); ++i) {
        if (plan.landmarks[i] < 0.0) throw_config("landmarks must be nonnegative");
        if (i > 0 && plan.landmarks[i] <= plan.landmarks[i - 1]) throw_config("landmarks must be increasing");
    }
    if (!(plan.window > 0.0)) throw_config("window must be positive");
    if (plan.replicates < 1) throw_config("replicates must be >= 1");
    if (plan.split.type != "holdout" && plan.split.type != "kfold") throw_config("split type must be holdout or kfold");
    if (plan.split.type == "holdout" && !(plan.split.learning_fraction > 0.0 && plan.split.learning_fraction < 1.0))
        throw_config("learning fraction must be in (0,1)");
    if (plan.split.type == "kfold" && plan.split.folds < 2) throw_config("folds must be >= 2");
    if (!(plan.weight_inner_fraction > 0.0 && plan.weight_inner_fraction <= 1.0))
        throw_config("weight_inner_fraction must be in (0,1]");
    if (plan.on_unconverged != "drop" && plan.on_unconverged != "refuse" && plan.on_unconverged != "use")
        throw_config("on_unconverged must be drop, refuse or use");
    return plan;
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
    nlohmann::json j;
    if (plan.scenario)
        j["data"] = scenario_to_json(*plan.scenario);
    else
        j["data"] = {{"dir", plan.data_dir}};
    j["methods"] = plan.methods;
    j["landmarks"] = plan.landmarks;
    j["window"] = plan.window;
    j["split"] = {{"type", plan.split.type},
                  {"learning_fraction", plan.split.learning_fraction},
                  {"folds", plan.split.folds}};
    j["replicates"] = plan.replicates;
    j["seed"] = plan.seed;
    j["mc_draws"] = plan.mc_draws;
    j["mh_burnin"] = plan.mh_burnin;
    j["knots"] = plan.knots;
    j["quad_points"] = plan.quad_points;
    j["jobs"] = plan.jobs;
    j["charts"] = plan.charts;
    j["weight_inner_fraction"] = plan.weight_inner_fraction;
    j["on_unconverged"] = plan.on_unconverged;
    j["abort_on_failure"] = plan.abort_on_failure;
    return j;
}

namespace {

struct CandidateModel {
    ModelSpec spec;
    std::string kind;  // one | two | all
    std::string expected_id;
    std::optional<FittedJointModel> fitted;
    std::string failure;
};

bool wants(const ExperimentPlan& plan, const std::string& m) {
    return std::find(plan.methods.begin(), plan.methods.end(), m) != plan.methods.end();
}

std::vector<CandidateModel> candidate_specs(const ExperimentPlan& plan, const Dataset& ds) {
    const int k = ds.n_markers();
    const bool need_one = wants(plan, "one_marker_models") || wants(plan, "one_marker_ma");
    const bool need_two = (wants(plan, "two_marker_models") || wants(plan, "two_marker_ma")) && k >= 2;
    const bool need_all = wants(plan, "all_marker_model");
    if (need_all && 2 * k > 6)
        throw_capability("all-marker model needs random-effect dimension " + std::to_string(2 * k) +
                         " (cap 6); drop all_marker_model or reduce markers");

    std::vector<CandidateModel> out;
    auto add = [&](std::vector<int> ids, const std::string& kind) {
        CandidateModel cm;
        cm.kind = kind;
        for (int id : ids) {
            MarkerDesign d;
            d.marker_id = id;
            cm.spec.markers.push_back(d);
        }
        cm.spec.knots = plan.knots;
        out.push_back(std::move(cm));
    };
    if (need_one)
        for (int id = 1; id <= k; ++id) add({id}, "one");
    if (need_two)
        for (int a = 1; a <= k; ++a)
            for (int b = a + 1; b <= k; ++b) add({a, b}, "two");
    if (need_all) {
        if (k > 2 || !need_two) {
            std::vector<int> ids;
            for (int id = 1; id <= k; ++id) ids.push_back(id);
            add(ids, "all");
        } else {
            // with two markers the all-marker model coincides with the pair model
            log_info("all-marker model with K=2 coincides with the two-marker model");
        }
    }
    for (auto& cm : out) {
        ResolvedModel rm = resolve_model(ds, cm.spec);
        cm.expected_id = rm.model_id(ds);
    }
    return out;
}


MetricCell make_cell(const std::string& method, double s, double t, int rep, int fold) {
    MetricCell cell;
    cell.method = method;
    cell.s = s;
    cell.t = t;
    cell.replicate = rep;
    cell.fold = fold;
    return cell;
}

std::vector<double> column(const PredictionMatrix& m, int col) {
    std::vector<double> out(m.n_rows());
    for (int i = 0; i < m.n_rows(); ++i) out[i] = m.pi(i, col);
    return out;
}

struct Scorer {
    const RiskSetFrame& frame;
    const std::optional<std::vector<double>>& truths;

    void fill(MetricCell& cell, const std::vector<double>& pi) const {
        cell.n_at_risk = frame.n_at_risk();
        cell.n_events = frame.n_events();
        cell.auc = auc(pi, frame);
        cell.brier = brier(pi, frame);
        if (truths) cell.mse = mse(pi, *truths);
        if (!cell.auc) cell.status = "not evaluable: no cases or no controls";
    }
};

}  // namespace

EvaluationReport run_experiment(const ExperimentPlan& plan) {
    EvaluationReport report;
    report.plan = plan;

    Dataset file_data;
    if (!plan.scenario) file_data = read_dataset(plan.data_dir);

    for (int rep = 0; rep < plan.replicates; ++rep) {
        Dataset data;
        std::optional<GeneratedData> generated;
        if (plan.scenario) {
            generated = generate_dataset(*plan.scenario, SeedStream(plan.seed).mix("data").mix((uint64_t)rep).get());
            data = generated->dataset;
        } else {
            data = file_data;
        }

        std::vector<std::pair<Dataset, Dataset>> splits;
        const uint64_t split_seed = SeedStream(plan.seed).mix("split").mix((uint64_t)rep).get();
        if (plan.split.type == "kfold")
            splits = kfold_split(data, plan.split.folds, split_seed);
        else
            splits.push_back(holdout_split(data, plan.split.learning_fraction, split_seed));

        for (int fold = 0; fold < static_cast<int>(splits.size()); ++fold) {
            const Dataset& learning = splits[fold].first;
            const Dataset& validation = splits[fold].second;

            // no-leakage assertion: weight estimation and scoring must use
            // disjoint subject sets
            for (const auto& s : validation.subjects)
                if (learning.subject_index(s.subject_id) >= 0)
                    throw std::logic_error("validation leakage: subject '" + s.subject_id + "' in both splits");

            Dataset fit_set = learning;
            Dataset weight_set = learning;
            if (plan.weight_inner_fraction < 1.0) {
                auto inner = holdout_split(learning, plan.weight_inner_fraction,
                                           SeedStream(plan.seed).mix("inner").mix((uint64_t)rep).mix((uint64_t)fold).get());
                fit_set = std::move(inner.first);
                weight_set = std::move(inner.second);
            }

            std::vector<CandidateModel> candidates = candidate_specs(plan, data);

            const double t_fit0 = now_sec();
            FitOptions fo;
            fo.quad_points = plan.quad_points;
            fo.knots = plan.knots;
            parallel_for(static_cast<int>(candidates.size()), plan.jobs, [&](int idx) {
                try {
                    candidates[idx].fitted = fit(fit_set, candidates[idx].spec, fo);
                } catch (const std::exception& e) {
                    if (plan.abort_on_failure) throw;
                    candidates[idx].failure = e.what();
                    log_warn("fit failed for " + candidates[idx].expected_id + ": " + e.what());
                }
            });
            report.timing.fit += now_sec() - t_fit0;

            std::vector<const FittedJointModel*> fitted_models;
            for (const auto& cm : candidates)
                if (cm.fitted) fitted_models.push_back(&*cm.fitted);

            for (double s : plan.landmarks) {
                const double t = plan.window;
                auto fail_all = [&](const std::string& why) {
                    for (const auto& cm : candidates) {
                        if ((cm.kind == "one" && !wants(plan, "one_marker_models")) ||
                            (cm.kind == "two" && !wants(plan, "two_marker_models")))
                            continue;
                        MetricCell cell = make_cell(cm.expected_id, s, t, rep, fold);
                        cell.status = why;
                        report.cells.push_back(cell);
                    }
                    for (const char* ma : {"one_marker_ma", "two_marker_ma"})
                        if (wants(plan, ma)) {
                            MetricCell cell = make_cell(ma, s, t, rep, fold);
                            cell.status = why;
                            report.cells.push_back(cell);
                        }
                };

                RiskSetFrame val_frame;
                try {
                    val_frame = ipcw_frame(validation, s, t);
                } catch (const std::exception& e) {
                    fail_all(std::string("not evaluable: ") + e.what());
                    continue;
                }

                std::optional<std::vector<double>> truths;
                if (generated) {
                    std::vector<double> tv;
                    for (int idx : val_frame.subject_idx) {
                        const int row = generated->dataset.subject_index(validation.subjects[idx].subject_id);
                        tv.push_back(true_risk(*plan.scenario, generated->true_effects.row(row).transpose(), s, t));
                    }
                    truths = std::move(tv);
                }
                Scorer scorer{val_frame, truths};

                MatrixOptions mo;
                mo.mc_draws = plan.mc_draws;
                mo.mh_burnin = plan.mh_burnin;
                mo.jobs = plan.jobs;
                mo.on_unconverged = plan.on_unconverged;
                mo.seed = SeedStream(plan.seed).mix("predict").mix((uint64_t)rep).mix((uint64_t)fold).get();

                PredictionMatrix val_matrix;
                bool have_val_matrix = false;
                if (!fitted_models.empty()) {
                    const double t0 = now_sec();
                    try {
                        val_matrix = build_prediction_matrix(fitted_models, validation, val_frame, mo);
                        have_val_matrix = true;
                    } catch (const std::exception& e) {
                        if (plan.abort_on_failure) throw;
                        log_warn(std::string("validation prediction failed: ") + e.what());
                    }
                    report.timing.predict += now_sec() - t0;
                }
                if (!have_val_matrix) {
                    fail_all("failed: validation predictions unavailable");
                    continue;
                }
                auto val_col = [&](const std::string& id) {
                    for (int c = 0; c < val_matrix.n_models(); ++c)
                        if (val_matrix.model_ids[c] == id) return c;
                    return -1;
                };

                // individual joint models
                const double t_score0 = now_sec();
                for (const auto& cm : candidates) {
                    const bool report_model = (cm.kind == "one" && wants(plan, "one_marker_models")) ||
                                              (cm.kind == "two" && wants(plan, "two_marker_models")) ||
                                              (cm.kind == "all" && wants(plan, "all_marker_model"));
                    if (!report_model) continue;
                    MetricCell cell = make_cell(cm.expected_id, s, t, rep, fold);
                    if (!cm.fitted) {
                        cell.status = "failed: " + cm.failure;
                    } else {
                        const int c = val_col(cm.fitted->model_id);
                        if (c < 0)
                            cell.status = "failed: dropped (not converged)";
                        else
                            scorer.fill(cell, column(val_matrix, c));
                    }
                    report.cells.push_back(cell);
                }
                report.timing.score += now_sec() - t_score0;

                // model averaging
                for (const char* ma_kind_c : {"one", "two"}) {
                    const std::string ma_kind = ma_kind_c;
                    const std::string method = ma_kind == "one" ? "one_marker_ma" : "two_marker_ma";
                    if (!wants(plan, method)) continue;
                    MetricCell cell = make_cell(method, s, t, rep, fold);

                    std::vector<const FittedJointModel*> ma_models;
                    for (const auto& cm : candidates)
                        if (cm.kind == ma_kind && cm.fitted) ma_models.push_back(&*cm.fitted);
                    if (ma_models.empty()) {
                        cell.status = "failed: no candidate models";
                        report.cells.push_back(cell);
                        continue;
                    }
                    try {
                        const double t_w0 = now_sec();
                        RiskSetFrame weight_frame = ipcw_frame(weight_set, s, t);
                        PredictionMatrix learn_matrix = build_prediction_matrix(ma_models, weight_set, weight_frame, mo);
                        WeightSolution sol = solve_weights(learn_matrix, weight_frame);
                        report.timing.weights += now_sec() - t_w0;

                        WeightRecord wr;
                        wr.method = method;
                        wr.s = s;
                        wr.t = t;
                        wr.replicate = rep;
                        wr.fold = fold;
                        wr.model_ids = learn_matrix.model_ids;
                        wr.w.assign(sol.w.data(), sol.w.data() + sol.w.size());
                        wr.objective = sol.objective;
                        wr.kkt_residual = sol.kkt_residual;
                        report.weight_records.push_back(wr);

                        std::vector<double> combined(val_frame.n_at_risk(), 0.0);
                        for (int k = 0; k < static_cast<int>(learn_matrix.model_ids.size()); ++k) {
                            const int c = val_col(learn_matrix.model_ids[k]);
                            if (c < 0) throw_numeric("validation matrix lacks column " + learn_matrix.model_ids[k]);
                            for (int i = 0; i < val_frame.n_at_risk(); ++i) combined[i] += sol.w[k] * val_matrix.pi(i, c);
                        }
                        scorer.fill(cell, combined);
                    } catch (const std::exception& e) {
                        if (plan.abort_on_failure) throw;
                        cell.status = std::string("failed: ") + e.what();
                    }
                    report.cells.push_back(cell);
                }
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Summaries and serialization

namespace {

struct Acc {
    std::vector<double> vals;
    void add(const std::optional<double>& v) {
        if (v) vals.push_back(*v);
    }
    std::optional<double> mean() const {
        if (vals.empty()) return std::nullopt;
        double acc = 0.0;
        for (double v : vals) acc += v;
        return acc / vals.size();
    }
    std::optional<double> sd() const {
        if (vals.size() < 2) return std::nullopt;
        const double m = *mean();
        double acc = 0.0;
        for (double v : vals) acc += (v - m) * (v - m);
        return std::sqrt(acc / (vals.size() - 1));
    }
};

}  // namespace

std::vector<SummaryRow> summarize(const EvaluationReport& report) {
    std::map<std::tuple<std::string, double, double>, std::vector<const MetricCell*>> groups;
    for (const auto& c : report.cells) groups[{c.method, c.s, c.t}].push_back(&c);

    std::vector<SummaryRow> rows;
    for (const auto& [key, cells] : groups) {
        SummaryRow row;
        row.method = std::get<0>(key);
        row.s = std::get<1>(key);
        row.t = std::get<2>(key);
        Acc a_auc, a_brier, a_mse;
        double n_risk = 0.0, n_ev = 0.0;
        int n_ok = 0;
        for (const auto* c : cells) {
            if (c->status.rfind("failed", 0) == 0 || c->status.rfind("not evaluable", 0) == 0) {
                if (!c->auc && !c->brier) continue;
            }
            ++n_ok;
            a_auc.add(c->auc);
            a_brier.add(c->brier);
            a_mse.add(c->mse);
            n_risk += c->n_at_risk;
            n_ev += c->n_events;
        }
        row.n = n_ok;
        row.mean_auc = a_auc.mean();
        row.sd_auc = a_auc.sd();
        row.mean_brier = a_brier.mean();
        row.sd_brier = a_brier.sd();
        row.mean_mse = a_mse.mean();
        row.sd_mse = a_mse.sd();
        if (n_ok > 0) {
            row.mean_n_at_risk = n_risk / n_ok;
            row.mean_n_events = n_ev / n_ok;
        }
        rows.push_back(row);
    }
    return rows;
}

static nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json j;
    j["plan"] = plan_to_json(plan);

    std::vector<const MetricCell*> sorted;
    for (const auto& c : cells) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [](const MetricCell* a, const MetricCell* b) {
        return std::tie(a->method, a->s, a->replicate, a->fold) < std::tie(b->method, b->s, b->replicate, b->fold);
    });
    nlohmann::json cell_arr = nlohmann::json::array();
    for (const auto* c : sorted) {
        cell_arr.push_back({{"method", c->method},
                            {"s", c->s},
                            {"t", c->t},
                            {"replicate", c->replicate},
                            {"fold", c->fold},
                            {"auc", opt_json(c->auc)},
                            {"brier", opt_json(c->brier)},
                            {"mse", opt_json(c->mse)},
                            {"n_at_risk", c->n_at_risk},
                            {"n_events", c->n_events},
                            {"status", c->status}});
    }
    j["cells"] = cell_arr;

    nlohmann::json weights = nlohmann::json::array();
    for (const auto& w : weight_records)
        weights.push_back({{"method", w.method},
                           {"s", w.s},
                           {"t", w.t},
                           {"replicate", w.replicate},
                           {"fold", w.fold},
                           {"model_ids", w.model_ids},
                           {"w", w.w},
                           {"objective", w.objective},
                           {"kkt_residual", w.kkt_residual}});
    j["weights"] = weights;

    // mean weight per (method, s, t) across folds and replicates
    std::map<std::tuple<std::string, double, double>, std::pair<std::vector<double>, int>> wmean;
    for (const auto& w : weight_records) {
        auto& slot = wmean[{w.method, w.s, w.t}];
        if (slot.first.empty()) slot.first.assign(w.w.size(), 0.0);
        if (slot.first.size() == w.w.size()) {
            for (size_t i = 0; i < w.w.size(); ++i) slot.first[i] += w.w[i];
            slot.second += 1;
        }
    }
    nlohmann::json wm = nlohmann::json::array();
    for (const auto& [key, slot] : wmean) {
        std::vector<double> mean = slot.first;
        for (auto& v : mean) v /= std::max(slot.second, 1);
        wm.push_back({{"method", std::get<0>(key)},
                      {"s", std::get<1>(key)},
                      {"t", std::get<2>(key)},
                      {"mean_w", mean},
                      {"n", slot.second}});
    }
    j["mean_weights"] = wm;

    nlohmann::json summary = nlohmann::json::array();
    for (const auto& row : summarize(*this))
        summary.push_back({{"method", row.method},
                           {"s", row.s},
                           {"t", row.t},
                           {"n", row.n},
                           {"mean_auc", opt_json(row.mean_auc)},
                           {"sd_auc", opt_json(row.sd_auc)},
                           {"mean_brier", opt_json(row.mean_brier)},
                           {"sd_brier", opt_json(row.sd_brier)},
                           {"mean_mse", opt_json(row.mean_mse)},
                           {"sd_mse", opt_json(row.sd_mse)},
                           {"mean_n_at_risk", row.mean_n_at_risk},
                           {"mean_n_events", row.mean_n_events}});
    j["summary"] = summary;
    return j;
}

void write_report(const EvaluationReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::ofstream rj(fs::path(out_dir) / "report.json");
    rj << report.to_json().dump(2) << '\n';

    const auto rows = summarize(report);
    CsvTable t;
    t.header = {"method", "s", "t", "auc", "brier", "mse", "n_at_risk", "n_events"};
    auto fmt_opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& row : rows)
        t.rows.push_back({row.method, format_double(row.s), format_double(row.t), fmt_opt(row.mean_auc),
                          fmt_opt(row.mean_brier), fmt_opt(row.mean_mse), format_double(row.mean_n_at_risk),
                          format_double(row.mean_n_events)});
    write_csv((fs::path(out_dir) / "metrics.csv").string(), t);

    if (report.plan.charts) {
        fs::create_directories(fs::path(out_dir) / "charts");
        std::map<std::string, ChartSeries> auc_series, brier_series;
        for (const auto& row : rows) {
            auto& sa = auc_series[row.method];
            sa.name = row.method;
            sa.xs.push_back(row.s);
            sa.ys.push_back(row.mean_auc ? *row.mean_auc : std::nan(""));
            auto& sb = brier_series[row.method];
            sb.name = row.method;
            sb.xs.push_back(row.s);
            sb.ys.push_back(row.mean_brier ? *row.mean_brier : std::nan(""));
        }
        std::vector<ChartSeries> sa, sb;
        for (const auto& [name, s] : auc_series) sa.push_back(s);
        for (const auto& [name, s] : brier_series) sb.push_back(s);
        std::ofstream fa(fs::path(out_dir) / "charts" / "auc.svg");
        fa << line_chart_svg("AUC by landmark (window " + format_double(report.plan.window) + ")", "landmark s",
                             "AUC", sa);
        std::ofstream fb(fs::path(out_dir) / "charts" / "brier.svg");
        fb << line_chart_svg("Brier score by landmark (window " + format_double(report.plan.window) + ")",
                             "landmark s", "Brier score", sb);
    }
}

}  // namespace mbsma

#include "dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "common.hpp"
#include "csv.hpp"
#include "rng.hpp"

namespace mbsma {

int Dataset::subject_index(const std::string& id) const {
    auto it = std::lower_bound(subjects.begin(), subjects.end(), id,
                               [](const SurvivalRecord& r, const std::string& v) { return r.subject_id < v; });
    if (it == subjects.end() || it->subject_id != id) return -1;
    return static_cast<int>(it - subjects.begin());
}

int Dataset::covariate_index(const std::string& name) const {
    for (size_t i = 0; i < covariate_names.size(); ++i)
        if (covariate_names[i] == name) return static_cast<int>(i);
    return -1;
}

static void build_obs_index(Dataset& d) {
    const int n = d.n_subjects();
    d.obs_begin.assign(n, 0);
    d.obs_end.assign(n, 0);
    int i = 0;
    for (int s = 0; s < n; ++s) {
        d.obs_begin[s] = i;
        while (i < static_cast<int>(d.observations.size()) &&
               d.observations[i].subject_id == d.subjects[s].subject_id)
            ++i;
        d.obs_end[s] = i;
    }
    if (i != static_cast<int>(d.observations.size()))
        throw_data("orphan observation for subject '" + d.observations[i].subject_id + "'");
}

Dataset validate(Dataset d) {
    if (d.subjects.empty()) throw_data("dataset has no subjects");
    if (d.markers.empty()) throw_data("dataset has no markers");

    std::sort(d.subjects.begin(), d.subjects.end(),
              [](const SurvivalRecord& a, const SurvivalRecord& b) { return a.subject_id < b.subject_id; });
    for (size_t i = 1; i < d.subjects.size(); ++i)
        if (d.subjects[i].subject_id == d.subjects[i - 1].subject_id)
            throw_data("duplicate survival record for subject '" + d.subjects[i].subject_id + "'");

    const int n_cov = static_cast<int>(d.covariate_names.size());
    for (const auto& s : d.subjects) {
        if (!(s.observed_time > 0.0)) throw_data("non-positive observed time for subject '" + s.subject_id + "'");
        if (s.event != 0 && s.event != 1) throw_data("event indicator not in {0,1} for subject '" + s.subject_id + "'");
        if (s.covariates.size() != n_cov)
            throw_data("covariate count mismatch for subject '" + s.subject_id + "'");
    }

    std::sort(d.observations.begin(), d.observations.end(),
              [](const LongitudinalObservation& a, const LongitudinalObservation& b) {
                  if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
                  if (a.marker_id != b.marker_id) return a.marker_id < b.marker_id;
                  return a.time < b.time;
              });

    const int K = d.n_markers();
    for (size_t i = 0; i < d.observations.size(); ++i) {
        const auto& o = d.observations[i];
        if (o.marker_id < 1 || o.marker_id > K)
            throw_data("marker id " + std::to_string(o.marker_id) + " out of range 1.." + std::to_string(K));
        if (o.time < 0.0) throw_data("negative observation time for subject '" + o.subject_id + "'");
        if (d.markers[o.marker_id - 1].family == Family::binary && o.value != 0.0 && o.value != 1.0)
            throw_data("non-binary value " + format_double(o.value) + " for binary marker '" +
                       d.markers[o.marker_id - 1].name + "' (subject '" + o.subject_id + "')");
        int si = d.subject_index(o.subject_id);
        if (si < 0) throw_data("orphan observation for subject '" + o.subject_id + "'");
        if (o.time > d.subjects[si].observed_time)
            throw_data("observation after event time for subject '" + o.subject_id + "' (t=" +
                       format_double(o.time) + " > T*=" + format_double(d.subjects[si].observed_time) + ")");
        if (i > 0) {
            const auto& p = d.observations[i - 1];
            if (p.subject_id == o.subject_id && p.marker_id == o.marker_id && p.time == o.time)
                throw_data("duplicate observation (subject '" + o.subject_id + "', marker " +
                           std::to_string(o.marker_id) + ", t=" + format_double(o.time) + ")");
        }
    }

    build_obs_index(d);
    return d;
}

SubjectHistory truncate_history(const Dataset& d, int si, double s) {
    if (si < 0 || si >= d.n_subjects()) throw_data("unknown subject index");
    const auto& rec = d.subjects[si];
    if (!(rec.observed_time > s))
        throw_data("subject '" + rec.subject_id + "' not at risk at s=" + format_double(s));
    SubjectHistory h;
    h.subject_id = rec.subject_id;
    h.subject_index = si;
    h.landmark = s;
    h.covariates = rec.covariates;
    for (int i = d.obs_begin[si]; i < d.obs_end[si]; ++i)
        if (d.observations[i].time <= s) h.marker_values.push_back(d.observations[i]);
    return h;
}

SubjectHistory truncate_history(const Dataset& d, const std::string& subject_id, double s) {
    int si = d.subject_index(subject_id);
    if (si < 0) throw_data("unknown subject '" + subject_id + "'");
    return truncate_history(d, si, s);
}

Dataset subset_subjects(const Dataset& d, const std::vector<int>& subject_indices) {
    Dataset out;
    out.markers = d.markers;
    out.covariate_names = d.covariate_names;
    std::vector<int> sorted = subject_indices;
    std::sort(sorted.begin(), sorted.end());
    for (int si : sorted) {
        out.subjects.push_back(d.subjects[si]);
        for (int i = d.obs_begin[si]; i < d.obs_end[si]; ++i) out.observations.push_back(d.observations[i]);
    }
    build_obs_index(out);
    return out;
}

std::vector<std::pair<Dataset, Dataset>> kfold_split(const Dataset& d, int folds, uint64_t seed) {
    const int n = d.n_subjects();
    if (folds < 2) throw_config("folds must be >= 2");
    if (folds > n) throw_data("folds (" + std::to_string(folds) + ") exceed subject count (" + std::to_string(n) + ")");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(SeedStream(seed).mix("kfold").get());
    deterministic_shuffle(order, rng);

    std::vector<std::vector<int>> buckets(folds);
    for (int i = 0; i < n; ++i) buckets[i % folds].push_back(order[i]);

    std::vector<std::pair<Dataset, Dataset>> out;
    for (int f = 0; f < folds; ++f) {
        std::vector<int> learn;
        for (int g = 0; g < folds; ++g)
            if (g != f) learn.insert(learn.end(), buckets[g].begin(), buckets[g].end());
        out.emplace_back(subset_subjects(d, learn), subset_subjects(d, buckets[f]));
    }
    return out;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& d, double learning_fraction, uint64_t seed) {
    if (!(learning_fraction > 0.0 && learning_fraction < 1.0))
        throw_config("learning fraction must be in (0,1)");
    const int n = d.n_subjects();
    int n_learn = static_cast<int>(std::lround(learning_fraction * n));
    n_learn = std::clamp(n_learn, 1, n - 1);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(SeedStream(seed).mix("holdout").get());
    deterministic_shuffle(order, rng);

    std::vector<int> learn(order.begin(), order.begin() + n_learn);
    std::vector<int> valid(order.begin() + n_learn, order.end());
    return {subset_subjects(d, learn), subset_subjects(d, valid)};
}

// ---------------------------------------------------------------------------
// File interface

Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset d;

    std::ifstream mj(fs::path(dir) / "markers.json");
    if (!mj) throw_data("cannot open " + dir + "/markers.json");
    nlohmann::json markers;
    try {
        mj >> markers;
    } catch (const std::exception& e) {
        throw_data(std::string("invalid markers.json: ") + e.what());
    }
    for (const auto& m : markers) {
        MarkerMeta meta;
        meta.name = m.at("name").get<std::string>();
        const std::string fam = m.at("family").get<std::string>();
        if (fam == "gaussian")
            meta.family = Family::gaussian;
        else if (fam == "binary")
            meta.family = Family::binary;
        else
            throw_data("unknown marker family '" + fam + "'");
        d.markers.push_back(meta);
    }

    const std::string surv_path = (fs::path(dir) / "survival.csv").string();
    CsvTable surv = read_csv(surv_path);
    const int c_id = surv.col_required("subject_id", surv_path);
    const int c_time = surv.col_required("obs_time", surv_path);
    const int c_event = surv.col_required("event", surv_path);
    std::vector<int> cov_cols;
    for (size_t c = 0; c < surv.header.size(); ++c) {
        if (static_cast<int>(c) == c_id || static_cast<int>(c) == c_time || static_cast<int>(c) == c_event) continue;
        cov_cols.push_back(static_cast<int>(c));
        d.covariate_names.push_back(surv.header[c]);
    }
    for (const auto& row : surv.rows) {
        SurvivalRecord r;
        r.subject_id = row[c_id];
        r.observed_time = parse_double(row[c_time], surv_path);
        r.event = static_cast<int>(parse_int(row[c_event], surv_path));
        r.covariates.resize(cov_cols.size());
        for (size_t j = 0; j < cov_cols.size(); ++j) r.covariates[j] = parse_double(row[cov_cols[j]], surv_path);
        d.subjects.push_back(std::move(r));
    }

    const std::string long_path = (fs::path(dir) / "longitudinal.csv").string();
    CsvTable lng = read_csv(long_path);
    const int l_id = lng.col_required("subject_id", long_path);
    const int l_mk = lng.col_required("marker_id", long_path);
    const int l_t = lng.col_required("time", long_path);
    const int l_v = lng.col_required("value", long_path);
    for (const auto& row : lng.rows) {
        LongitudinalObservation o;
        o.subject_id = row[l_id];
        o.marker_id = static_cast<int>(parse_int(row[l_mk], long_path));
        o.time = parse_double(row[l_t], long_path);
        o.value = parse_double(row[l_v], long_path);
        d.observations.push_back(std::move(o));
    }

    return validate(std::move(d));
}

void write_dataset(const Dataset& d, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json markers = nlohmann::json::array();
    for (const auto& m : d.markers)
        markers.push_back({{"name", m.name}, {"family", m.family == Family::gaussian ? "gaussian" : "binary"}});
    std::ofstream mj(fs::path(dir) / "markers.json");
    mj << markers.dump(2) << '\n';

    CsvTable surv;
    surv.header = {"subject_id", "obs_time", "event"};
    for (const auto& c : d.covariate_names) surv.header.push_back(c);
    for (const auto& s : d.subjects) {
        std::vector<std::string> row{s.subject_id, format_double(s.observed_time), std::to_string(s.event)};
        for (int j = 0; j < s.covariates.size(); ++j) row.push_back(format_double(s.covariates[j]));
        surv.rows.push_back(std::move(row));
    }
    write_csv((fs::path(dir) / "survival.csv").string(), surv);

    CsvTable lng;
    lng.header = {"subject_id", "marker_id", "time", "value"};
    for (const auto& o : d.observations)
        lng.rows.push_back({o.subject_id, std::to_string(o.marker_id), format_double(o.time), format_double(o.value)});
    write_csv((fs::path(dir) / "longitudinal.csv").string(), lng);
}

}  // namespace mbsma

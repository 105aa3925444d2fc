#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace mbsma {

enum class Family { gaussian, binary };

struct MarkerMeta {
    std::string name;
    Family family = Family::gaussian;
};

struct LongitudinalObservation {
    std::string subject_id;
    int marker_id = 0;  // 1-based, k in 1..K
    double time = 0.0;
    double value = 0.0;
};

struct SurvivalRecord {
    std::string subject_id;
    double observed_time = 0.0;  // T*
    int event = 0;               // delta
    Eigen::VectorXd covariates;  // X, aligned with Dataset::covariate_names
};

// Immutable after validate(): subjects sorted by id, observations sorted by
// (subject, marker, time), per-subject observation spans indexed.
struct Dataset {
    std::vector<SurvivalRecord> subjects;
    std::vector<LongitudinalObservation> observations;
    std::vector<MarkerMeta> markers;           // size K
    std::vector<std::string> covariate_names;  // X columns

    std::vector<int> obs_begin;  // per subject: first obs index
    std::vector<int> obs_end;    // per subject: one past last

    int n_subjects() const { return static_cast<int>(subjects.size()); }
    int n_markers() const { return static_cast<int>(markers.size()); }
    int subject_index(const std::string& id) const;  // -1 if absent
    int covariate_index(const std::string& name) const;
};

struct SubjectHistory {
    std::string subject_id;
    int subject_index = -1;
    double landmark = 0.0;
    std::vector<LongitudinalObservation> marker_values;  // times <= landmark
    Eigen::VectorXd covariates;
};

Dataset validate(Dataset dataset);

SubjectHistory truncate_history(const Dataset& dataset, const std::string& subject_id, double s);
SubjectHistory truncate_history(const Dataset& dataset, int subject_index, double s);

// Subject-level K-fold split, deterministic in seed. Fold sizes differ by <= 1.
std::vector<std::pair<Dataset, Dataset>> kfold_split(const Dataset& dataset, int folds, uint64_t seed);

// Single learning/validation split with the given learning fraction.
std::pair<Dataset, Dataset> holdout_split(const Dataset& dataset, double learning_fraction, uint64_t seed);

// subset by subject indices (kept in dataset order)
Dataset subset_subjects(const Dataset& dataset, const std::vector<int>& subject_indices);

// File interface: <dir>/longitudinal.csv, <dir>/survival.csv, <dir>/markers.json
Dataset read_dataset(const std::string& dir);
void write_dataset(const Dataset& dataset, const std::string& dir);

}  // namespace mbsma

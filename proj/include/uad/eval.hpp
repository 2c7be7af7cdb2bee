#pragma once

#include <string>
#include <vector>

#include "uad/anomaly.hpp"
#include "uad/popstats.hpp"
#include "uad/reconstructor.hpp"
#include "uad/simulate.hpp"

namespace uad {

/// Pearson correlation over the voxels where `domain_mask` > 0 (all voxels
/// when null). Exactly symmetric in (a, b). Throws std::invalid_argument on
/// geometry mismatch, fewer than two domain voxels, or an input that is
/// constant over the domain.
double ncc(const Volume &a, const Volume &b, const Volume *domain_mask = nullptr);

enum class Domain { whole, brain_only };
const char *to_string(Domain d);
Domain parse_domain(const std::string &s);

struct EvalOptions {
    std::vector<MapKind> kinds{MapKind::residual, MapKind::zscore};
    bool use_magnitude = true; // correlate |map| with the mask
    Domain domain = Domain::brain_only;
    std::vector<double> thresholds{1.0, 1.5}; // echoed; used by the sweep
    ThresholdMode mode = ThresholdMode::two_sided;
};

struct EvalRow {
    std::string subject_id;
    MapKind kind = MapKind::residual;
    double ncc = 0.0;
};

struct KindAggregate {
    MapKind kind = MapKind::residual;
    double mean = 0.0, std = 0.0; // std with n - 1; 0 for a single row
    std::size_t n = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows; // pair order, kinds in option order
    std::vector<KindAggregate> aggregates;
    EvalOptions options;
    double eps_floor = 0.0;
    double degree = 0.0;
    std::string reconstructor;

    const KindAggregate &aggregate(MapKind k) const;
    std::string to_json() const;
    std::string to_csv() const; // subject_id,kind,ncc
};

/// Mean and n-1 standard deviation per kind, in fixed row order.
std::vector<KindAggregate> aggregate_rows(const std::vector<EvalRow> &rows, const std::vector<MapKind> &kinds);

/// Reconstruction and maps of one simulated image.
struct PairMaps {
    std::string subject_id;
    Volume reconstruction;
    std::vector<AbnormalityMap> maps; // one per requested kind, same order
};

/// Reconstructs each simulated image and forms the requested maps against it.
/// Reconstruction failures are rethrown with the subject id.
std::vector<PairMaps> compute_pair_maps(const std::vector<EvalPair> &pairs, const Reconstructor &rec,
                                        const PopulationStats &stats, const std::vector<MapKind> &kinds);

EvalReport evaluate_maps(const std::vector<EvalPair> &pairs, const std::vector<PairMaps> &maps,
                         const EvalOptions &options, const Volume *brain_mask);

/// compute_pair_maps followed by evaluate_maps. `brain_mask` is required for
/// Domain::brain_only.
EvalReport evaluate_cohort(const std::vector<EvalPair> &pairs, const Reconstructor &rec,
                           const PopulationStats &stats, const EvalOptions &options, const Volume *brain_mask);

double dice(const Volume &a, const Volume &b);

struct SweepRow {
    double threshold = 0.0;
    MapKind kind = MapKind::residual;
    double mean_dice = 0.0;
    double mean_support = 0.0;
};

/// Dice between the support of each thresholded map and mask > 0, averaged
/// over pairs, for every (threshold, kind). Thresholds must be >= 0 and
/// ascending.
std::vector<SweepRow> threshold_sweep(const std::vector<EvalPair> &pairs, const std::vector<PairMaps> &maps,
                                      const std::vector<double> &thresholds, ThresholdMode mode);

std::string sweep_csv(const std::vector<SweepRow> &rows); // threshold,kind,mean_dice,mean_support

} // namespace uad

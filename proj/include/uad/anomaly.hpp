#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "uad/popstats.hpp"
#include "uad/volume.hpp"

namespace uad {

enum class MapKind { residual, zscore };
enum class ThresholdMode {
    two_sided, // keep |v| >= t
    hypo_only  // keep v <= -t
};

const char *to_string(MapKind k);
const char *to_string(ThresholdMode m);
MapKind parse_map_kind(const std::string &s);
ThresholdMode parse_threshold_mode(const std::string &s);

struct Provenance {
    std::string input, model, stats;
    bool operator==(const Provenance &) const = default;
};

struct AbnormalityMap {
    Volume values;
    MapKind kind = MapKind::residual;
    std::optional<double> threshold; // absent = unthresholded
    ThresholdMode mode = ThresholdMode::two_sided;
    Provenance provenance;
};

/// r = x - x_hat (hypometabolism is negative).
AbnormalityMap residual_map(const Volume &x, const Volume &x_hat, Provenance provenance = {});

/// z = (x - x_hat) / max(sigma, eps_floor), voxel-wise, with the floor taken
/// from `stats`. An empty stats provenance is filled with a description of
/// the statistics.
AbnormalityMap zscore_map(const Volume &x, const Volume &x_hat, const PopulationStats &stats,
                          Provenance provenance = {});

/// Zeroes voxels that fail the threshold test and keeps the rest unchanged.
/// Throws std::invalid_argument for t < 0.
AbnormalityMap threshold_map(const AbnormalityMap &m, double t, ThresholdMode mode);

/// 1 where the map is nonzero, 0 elsewhere.
Volume binarise(const AbnormalityMap &m);

/// Number of nonzero voxels.
std::size_t support_size(const Volume &v);

/// {"kind", "threshold" (null if none), "mode", "provenance": {input, model, stats}}
std::string map_sidecar_json(const AbnormalityMap &m);

/// Writes `path` (VOL1) and the sidecar next to it with extension .json.
void save_map(const AbnormalityMap &m, const std::filesystem::path &path);
AbnormalityMap load_map(const std::filesystem::path &path);

} // namespace uad

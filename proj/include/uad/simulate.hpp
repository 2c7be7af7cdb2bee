#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uad/dataset.hpp"
#include "uad/volume.hpp"

namespace uad {

struct HypoSpec {
    Volume mask;         // values in [0, 1], 1 = fully affected
    double degree = 0.3; // fractional uptake reduction, open interval (0, 1)
    std::vector<int> regions;

    /// Throws std::invalid_argument unless the invariants hold for `target`.
    void validate(const Volume &target) const;
};

/// Indicator of the selected regions, box-smoothed with the given radius and
/// clamped to [0, 1]. Throws std::invalid_argument for an empty region list
/// or a code missing from the atlas.
Volume build_mask(const RegionAtlas &atlas, const std::vector<int> &regions, std::size_t smooth_radius);

/// x' = x - degree * mask * x. Voxels with mask 0 are returned unchanged.
Volume apply_hypometabolism(const Volume &x, const HypoSpec &spec);

struct EvalPair {
    std::string subject_id, session_id;
    Volume healthy, simulated, mask;
};

/// One pair per test subject from its first session. `seed` is recorded for
/// provenance only; the transform itself is deterministic.
std::vector<EvalPair> make_eval_pairs(const std::vector<SubjectRecord> &test_records, const VolumeSource &source,
                                      const RegionAtlas &atlas, const std::vector<int> &regions, double degree,
                                      std::size_t smooth_radius, std::uint64_t seed);

struct PairManifestRow {
    std::string subject_id, healthy_path, simulated_path, mask_path;
    double degree = 0.0;
};

/// subject_id,healthy_path,simulated_path,mask_path,degree
std::string pairs_csv(const std::vector<PairManifestRow> &rows);
std::vector<PairManifestRow> parse_pairs_csv(const std::string &text);

} // namespace uad

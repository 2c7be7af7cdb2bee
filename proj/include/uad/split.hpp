#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uad/dataset.hpp"

namespace uad {

struct SplitFractions {
    double train = 0.75, validation = 0.10, test = 0.15;

    std::array<double, 3> values() const { return {train, validation, test}; }
    /// Each fraction > 0, sum within 1e-9 of 1.
    void validate() const;
};

enum class SplitPart { train, validation, test };

/// Subject ids per split, each list sorted.
struct CohortSplit {
    std::vector<std::string> train, validation, test;

    bool contains(SplitPart part, const std::string &subject_id) const;
    const std::vector<std::string> &part(SplitPart p) const;
    std::size_t total() const { return train.size() + validation.size() + test.size(); }
    /// Throws if any subject sits in two parts.
    void check_disjoint() const;

    std::string to_json() const;
    static CohortSplit from_json(const std::string &text);
};

/// Largest-remainder apportionment of n items; ties go to the earlier part.
std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions &f);

/// Age bin index for `edges` (ascending, at least two). Bins are [e_i, e_{i+1})
/// with the last bin closed; ages outside the edges fall into the end bins.
std::size_t age_bin(double age, const std::vector<double> &edges);

/// Subject-level split stratified by sex x age bin.
///
/// The global part sizes are the largest-remainder apportionment of the
/// subject count. Within every stratum each part receives the floor or the
/// ceiling of its exact share, so per-stratum deviation stays below one
/// subject; the floors/ceilings are chosen so the stratum counts add up to the
/// global sizes. Subjects inside a stratum are shuffled with a stream keyed by
/// (seed, stratum).
CohortSplit stratified_split(const std::vector<SubjectRecord> &records, const SplitFractions &fractions,
                             const std::vector<double> &age_bins, std::uint64_t seed);

} // namespace uad

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uad/dataset.hpp"
#include "uad/volume.hpp"

namespace uad {

/// Voxel-wise healthy-population moments. `eps_floor` is carried along for
/// the Z-score division; the stored std is never floored.
struct PopulationStats {
    Volume mean;
    Volume std;
    std::size_t n = 0;
    double eps_floor = 1e-6;
};

/// Two-pass voxel-wise mean and sample std (n - 1 denominator).
PopulationStats compute_population_stats(std::span<const Volume> volumes, double eps_floor = 1e-6);

/// Writes mean.vol, std.vol and stats.json into `dir`.
std::vector<std::filesystem::path> save_population_stats(const PopulationStats &s, const std::filesystem::path &dir);
PopulationStats load_population_stats(const std::filesystem::path &dir);

struct Summary {
    std::size_t n = 0;
    double mean = 0.0, std = 0.0; // std uses n - 1; 0 when n < 2
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation between order statistics.
Summary summarise(std::span<const double> values);

struct RegionGroupStats {
    int code = 0;
    std::string name;
    Diagnosis group = Diagnosis::CN;
    std::vector<std::string> image_ids;
    std::vector<double> mean_uptake; // one per image, same order as image_ids
    Summary summary;
};

struct RegionalStats {
    std::vector<RegionGroupStats> entries; // region-major, CN before AD

    const RegionGroupStats &at(int code, Diagnosis group) const;
    std::string raw_csv() const;     // region,group,image_id,mean_uptake
    std::string summary_csv() const; // region,group,n,mean,std,min,q1,median,q3,max
};

struct LabeledVolume {
    std::string image_id;
    Diagnosis group = Diagnosis::CN;
    std::reference_wrapper<const Volume> volume;
};

/// Mean of `v` over voxels of every region in the atlas table.
std::map<int, double> region_means(const Volume &v, const RegionAtlas &atlas);

/// Per-image mean uptake per region and group. Throws if a table region has
/// no voxel in the label volume, or on geometry mismatch.
RegionalStats regional_stats(std::span<const LabeledVolume> volumes, const RegionAtlas &atlas);

} // namespace uad

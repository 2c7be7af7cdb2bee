#include "uad/popstats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/format.hpp"
#include "uad/kernels.hpp"
#include "uad/volume_io.hpp"

namespace uad {

namespace fs = std::filesystem;

PopulationStats compute_population_stats(std::span<const Volume> volumes, double eps_floor) {
    if (volumes.size() < 2)
        throw std::invalid_argument("population statistics need at least 2 volumes");
    if (!(eps_floor > 0.0))
        throw std::invalid_argument("eps_floor must be > 0");
    std::vector<std::span<const double>> samples;
    samples.reserve(volumes.size());
    for (const auto &v : volumes) {
        require_same_dims(volumes.front(), v, "compute_population_stats");
        samples.push_back(v.data());
    }
    const std::size_t n = volumes.front().size();
    std::vector<double> mean(n), stddev(n);
    kernels::voxel_moments(samples, mean, stddev);
    return {volumes.front().with_data(std::move(mean)), volumes.front().with_data(std::move(stddev)),
            volumes.size(), eps_floor};
}

std::vector<fs::path> save_population_stats(const PopulationStats &s, const fs::path &dir) {
    save_volume(s.mean, dir / "mean.vol");
    save_volume(s.std, dir / "std.vol");
    nlohmann::json j{{"n", s.n}, {"eps_floor", s.eps_floor}};
    write_text(dir / "stats.json", j.dump(2) + "\n");
    return {dir / "mean.vol", dir / "std.vol", dir / "stats.json"};
}

PopulationStats load_population_stats(const fs::path &dir) {
    Volume mean = load_volume(dir / "mean.vol");
    Volume sd = load_volume(dir / "std.vol");
    require_same_dims(mean, sd, "load_population_stats");
    std::size_t n = 0;
    double eps = 0.0;
    try {
        auto j = nlohmann::json::parse(read_text(dir / "stats.json"));
        n = j.at("n").get<std::size_t>();
        eps = j.at("eps_floor").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("stats.json malformed: ") + e.what());
    }
    if (n < 2 || !(eps > 0.0) || sd.min() < 0.0)
        throw FormatError("stats.json violates population statistics invariants");
    return {std::move(mean), std::move(sd), n, eps};
}

Summary summarise(std::span<const double> values) {
    Summary s;
    s.n = values.size();
    if (values.empty())
        return s;
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v)
        sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v)
            ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    auto quantile = [&](double p) {
        const double h = p * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    s.min = v.front();
    s.max = v.back();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    return s;
}

const RegionGroupStats &RegionalStats::at(int code, Diagnosis group) const {
    for (const auto &e : entries)
        if (e.code == code && e.group == group)
            return e;
    throw std::out_of_range("no regional statistics for region " + std::to_string(code) + " group " +
                            to_string(group));
}

std::string RegionalStats::raw_csv() const {
    std::string out = "region,group,image_id,mean_uptake\n";
    for (const auto &e : entries)
        for (std::size_t i = 0; i < e.image_ids.size(); ++i)
            out += e.name + "," + to_string(e.group) + "," + e.image_ids[i] + "," + format_real(e.mean_uptake[i]) +
                   "\n";
    return out;
}

std::string RegionalStats::summary_csv() const {
    std::string out = "region,group,n,mean,std,min,q1,median,q3,max\n";
    for (const auto &e : entries) {
        const auto &s = e.summary;
        out += e.name + "," + to_string(e.group) + "," + std::to_string(s.n) + "," + format_real(s.mean) + "," +
               format_real(s.std) + "," + format_real(s.min) + "," + format_real(s.q1) + "," +
               format_real(s.median) + "," + format_real(s.q3) + "," + format_real(s.max) + "\n";
    }
    return out;
}

std::map<int, double> region_means(const Volume &v, const RegionAtlas &atlas) {
    require_same_dims(v, atlas.labels(), "region_means");
    std::map<int, double> sum;
    std::map<int, std::size_t> count;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const int code = atlas.label_at(i);
        if (code == 0)
            continue;
        sum[code] += v[i];
        ++count[code];
    }
    std::map<int, double> out;
    for (const auto &[code, name] : atlas.table()) {
        if (!count.contains(code))
            throw std::invalid_argument("region " + name + " (code " + std::to_string(code) +
                                        ") has no voxels in the atlas label volume");
        out[code] = sum[code] / static_cast<double>(count[code]);
    }
    return out;
}

RegionalStats regional_stats(std::span<const LabeledVolume> volumes, const RegionAtlas &atlas) {
    if (volumes.empty())
        throw std::invalid_argument("regional_stats needs at least one volume");
    const auto counts = atlas.voxel_counts();
    for (const auto &[code, name] : atlas.table())
        if (!counts.contains(code))
            throw std::invalid_argument("region " + name + " (code " + std::to_string(code) +
                                        ") is absent from the atlas label volume");

    RegionalStats out;
    for (const auto &[code, name] : atlas.table())
        for (Diagnosis g : {Diagnosis::CN, Diagnosis::AD}) {
            RegionGroupStats e;
            e.code = code;
            e.name = name;
            e.group = g;
            out.entries.push_back(std::move(e));
        }
    for (const auto &lv : volumes) {
        const auto means = region_means(lv.volume.get(), atlas);
        for (auto &e : out.entries)
            if (e.group == lv.group) {
                e.image_ids.push_back(lv.image_id);
                e.mean_uptake.push_back(means.at(e.code));
            }
    }
    std::erase_if(out.entries, [](const RegionGroupStats &e) { return e.image_ids.empty(); });
    for (auto &e : out.entries)
        e.summary = summarise(e.mean_uptake);
    return out;
}

} // namespace uad

#include "uad/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "uad/error.hpp"
#include "uad/format.hpp"
#include "uad/kernels.hpp"

namespace uad {

void HypoSpec::validate(const Volume &target) const {
    require_same_dims(mask, target, "hypometabolism mask");
    if (!(degree > 0.0 && degree < 1.0))
        throw std::invalid_argument("hypometabolism degree must lie in (0, 1), got " + format_real(degree));
    for (double m : mask.data())
        if (!(m >= 0.0 && m <= 1.0))
            throw std::invalid_argument("hypometabolism mask values must lie in [0, 1]");
}

Volume build_mask(const RegionAtlas &atlas, const std::vector<int> &regions, std::size_t smooth_radius) {
    if (regions.empty())
        throw std::invalid_argument("build_mask needs at least one region");
    for (int code : regions)
        if (!atlas.has_region(code))
            throw std::invalid_argument("unknown region code " + std::to_string(code));
    const Volume &labels = atlas.labels();
    std::vector<double> ind(labels.size(), 0.0);
    for (std::size_t i = 0; i < ind.size(); ++i)
        if (std::find(regions.begin(), regions.end(), atlas.label_at(i)) != regions.end())
            ind[i] = 1.0;
    if (smooth_radius == 0)
        return labels.with_data(std::move(ind));
    std::vector<double> out(ind.size());
    kernels::box_smooth(ind, kernels::Grid::from(labels.dims()), smooth_radius, out);
    for (auto &v : out)
        v = std::clamp(v, 0.0, 1.0);
    return labels.with_data(std::move(out));
}

Volume apply_hypometabolism(const Volume &x, const HypoSpec &spec) {
    spec.validate(x);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (x[i] < 0.0)
            throw std::invalid_argument("apply_hypometabolism needs non-negative intensities");
        // Subtracting the loss keeps x' - x equal to the loss up to a single rounding.
        out[i] = x[i] - spec.degree * spec.mask[i] * x[i];
    }
    return x.with_data(std::move(out));
}

std::vector<EvalPair> make_eval_pairs(const std::vector<SubjectRecord> &test_records, const VolumeSource &source,
                                      const RegionAtlas &atlas, const std::vector<int> &regions, double degree,
                                      std::size_t smooth_radius, std::uint64_t seed) {
    (void)seed;
    if (test_records.empty())
        throw std::invalid_argument("make_eval_pairs: empty test set");
    for (const auto &r : test_records) {
        r.validate();
        if (r.diagnosis != Diagnosis::CN)
            throw std::invalid_argument("test subject " + r.subject_id + " is not CN");
    }
    HypoSpec spec{build_mask(atlas, regions, smooth_radius), degree, regions};
    std::vector<EvalPair> pairs;
    pairs.reserve(test_records.size());
    for (const auto &r : test_records) {
        const std::string &ses = r.sessions.front();
        Volume x = source(r.subject_id, ses);
        Volume xs = apply_hypometabolism(x, spec);
        pairs.push_back({r.subject_id, ses, std::move(x), std::move(xs), spec.mask});
    }
    return pairs;
}

std::string pairs_csv(const std::vector<PairManifestRow> &rows) {
    std::ostringstream os;
    os << "subject_id,healthy_path,simulated_path,mask_path,degree\n";
    for (const auto &r : rows)
        os << r.subject_id << ',' << r.healthy_path << ',' << r.simulated_path << ',' << r.mask_path << ','
           << format_real(r.degree) << '\n';
    return os.str();
}

std::vector<PairManifestRow> parse_pairs_csv(const std::string &text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0] != "subject_id,healthy_path,simulated_path,mask_path,degree")
        throw FormatError("pair manifest header must be subject_id,healthy_path,simulated_path,mask_path,degree");
    std::vector<PairManifestRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty())
            continue;
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 5)
            throw FormatError("pair manifest line " + std::to_string(i + 1) + " needs 5 fields");
        try {
            rows.push_back({f[0], f[1], f[2], f[3], parse_real(f[4])});
        } catch (const std::invalid_argument &e) {
            throw FormatError("pair manifest line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return rows;
}

} // namespace uad

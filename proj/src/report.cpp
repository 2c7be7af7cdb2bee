#include "uad/report.hpp"

#include "uad/format.hpp"

namespace uad {

std::vector<ReportPanel> subject_panels(const Volume &input, const Volume &reconstruction, const Volume &sigma,
                                        const Volume &mask, const AbnormalityMap &residual,
                                        const AbnormalityMap &zscore, const std::vector<double> &thresholds,
                                        ThresholdMode mode) {
    std::vector<ReportPanel> panels{
        {"input", input, PgmScaling::minmax},
        {"reconstruction", reconstruction, PgmScaling::minmax},
        {"sigma", sigma, PgmScaling::minmax},
        {"mask", mask, PgmScaling::minmax},
        {"residual", residual.values, PgmScaling::diverging},
        {"zscore", zscore.values, PgmScaling::diverging},
    };
    for (double t : thresholds)
        panels.push_back({"zscore_thr" + format_real(t), threshold_map(zscore, t, mode).values, PgmScaling::diverging});
    return panels;
}

std::vector<std::filesystem::path> write_panels(const std::vector<ReportPanel> &panels,
                                                const std::filesystem::path &dir) {
    std::vector<std::filesystem::path> out;
    for (Plane plane : {Plane::axial, Plane::coronal, Plane::sagittal})
        for (const auto &p : panels) {
            const std::size_t axis = plane == Plane::axial ? 2 : plane == Plane::coronal ? 1 : 0;
            const SliceImage s = extract_slice(p.volume, plane, p.volume.dims()[axis] / 2);
            const auto path = dir / (std::string(plane_name(plane)) + "_" + p.name + ".pgm");
            save_pgm(s, path, p.scaling);
            out.push_back(path);
        }
    return out;
}

} // namespace uad

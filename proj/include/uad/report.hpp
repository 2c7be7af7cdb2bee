#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uad/anomaly.hpp"
#include "uad/volume_io.hpp"

namespace uad {

struct ReportPanel {
    std::string name;
    Volume volume;
    PgmScaling scaling = PgmScaling::minmax;
};

/// Panel set for one subject: input, reconstruction, sigma, mask, residual,
/// zscore, then zscore thresholded at each threshold (named zscore_thr<t>).
/// Signed maps use diverging scaling.
std::vector<ReportPanel> subject_panels(const Volume &input, const Volume &reconstruction, const Volume &sigma,
                                        const Volume &mask, const AbnormalityMap &residual,
                                        const AbnormalityMap &zscore, const std::vector<double> &thresholds,
                                        ThresholdMode mode);

/// Writes <plane>_<panel>.pgm for the central slice of every plane. Returns
/// the written paths in plane-major order.
std::vector<std::filesystem::path> write_panels(const std::vector<ReportPanel> &panels,
                                                const std::filesystem::path &dir);

} // namespace uad

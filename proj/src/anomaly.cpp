#include "uad/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/volume_io.hpp"

namespace uad {

const char *to_string(MapKind k) { return k == MapKind::residual ? "residual" : "zscore"; }
const char *to_string(ThresholdMode m) { return m == ThresholdMode::two_sided ? "two_sided" : "hypo_only"; }

MapKind parse_map_kind(const std::string &s) {
    if (s == "residual")
        return MapKind::residual;
    if (s == "zscore")
        return MapKind::zscore;
    throw std::invalid_argument("map kind must be residual|zscore, got '" + s + "'");
}

ThresholdMode parse_threshold_mode(const std::string &s) {
    if (s == "two_sided")
        return ThresholdMode::two_sided;
    if (s == "hypo_only")
        return ThresholdMode::hypo_only;
    throw std::invalid_argument("threshold mode must be two_sided|hypo_only, got '" + s + "'");
}

AbnormalityMap residual_map(const Volume &x, const Volume &x_hat, Provenance provenance) {
    require_same_dims(x, x_hat, "residual_map");
    return {x - x_hat, MapKind::residual, std::nullopt, ThresholdMode::two_sided, std::move(provenance)};
}

AbnormalityMap zscore_map(const Volume &x, const Volume &x_hat, const PopulationStats &stats,
                          Provenance provenance) {
    require_same_dims(x, x_hat, "zscore_map");
    require_same_dims(x, stats.std, "zscore_map (population std)");
    if (!(stats.eps_floor > 0.0))
        throw std::invalid_argument("eps_floor must be > 0");
    const Volume r = x - x_hat;
    std::vector<double> z(r.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = r[i] / std::max(stats.std[i], stats.eps_floor);
    if (provenance.stats.empty())
        provenance.stats = "population-stats(n=" + std::to_string(stats.n) + ")";
    AbnormalityMap m{r.with_data(std::move(z)), MapKind::zscore, std::nullopt, ThresholdMode::two_sided,
                     std::move(provenance)};
    // A large residual over a tiny floor can overflow.
    for (double v : m.values.data())
        if (!std::isfinite(v))
            throw NumericalError("z-score map overflowed");
    return m;
}

AbnormalityMap threshold_map(const AbnormalityMap &m, double t, ThresholdMode mode) {
    if (!(t >= 0.0) || !std::isfinite(t))
        throw std::invalid_argument("threshold must be a finite value >= 0");
    std::vector<double> out(m.values.data().begin(), m.values.data().end());
    for (auto &v : out) {
        const bool keep = mode == ThresholdMode::two_sided ? std::fabs(v) >= t : v <= -t;
        if (!keep)
            v = 0.0;
    }
    return {m.values.with_data(std::move(out)), m.kind, t, mode, m.provenance};
}

Volume binarise(const AbnormalityMap &m) {
    std::vector<double> out(m.values.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = m.values[i] != 0.0 ? 1.0 : 0.0;
    return m.values.with_data(std::move(out));
}

std::size_t support_size(const Volume &v) {
    return static_cast<std::size_t>(std::count_if(v.data().begin(), v.data().end(), [](double x) { return x != 0.0; }));
}

std::string map_sidecar_json(const AbnormalityMap &m) {
    nlohmann::json j;
    j["kind"] = to_string(m.kind);
    j["threshold"] = m.threshold ? nlohmann::json(*m.threshold) : nlohmann::json(nullptr);
    j["mode"] = to_string(m.mode);
    j["provenance"] = {{"input", m.provenance.input}, {"model", m.provenance.model}, {"stats", m.provenance.stats}};
    return j.dump(2) + "\n";
}

void save_map(const AbnormalityMap &m, const std::filesystem::path &path) {
    save_volume(m.values, path);
    auto side = path;
    side.replace_extension(".json");
    write_text(side, map_sidecar_json(m));
}

AbnormalityMap load_map(const std::filesystem::path &path) {
    Volume values = load_volume(path);
    auto side = path;
    side.replace_extension(".json");
    try {
        const auto j = nlohmann::json::parse(read_text(side));
        AbnormalityMap m{std::move(values), parse_map_kind(j.at("kind").get<std::string>()), std::nullopt,
                         parse_threshold_mode(j.at("mode").get<std::string>()), {}};
        if (!j.at("threshold").is_null())
            m.threshold = j.at("threshold").get<double>();
        const auto &p = j.at("provenance");
        m.provenance = {p.at("input").get<std::string>(), p.at("model").get<std::string>(),
                        p.at("stats").get<std::string>()};
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("map sidecar " + side.string() + " malformed: " + e.what());
    }
}

} // namespace uad

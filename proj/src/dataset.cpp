#include "uad/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

#include "uad/kernels.hpp"
#include "uad/rng.hpp"

namespace uad {

const char *to_string(Sex s) { return s == Sex::M ? "M" : "F"; }
const char *to_string(Diagnosis d) { return d == Diagnosis::CN ? "CN" : "AD"; }

Sex parse_sex(const std::string &s) {
    if (s == "M")
        return Sex::M;
    if (s == "F")
        return Sex::F;
    throw std::invalid_argument("sex must be M or F, got '" + s + "'");
}

Diagnosis parse_diagnosis(const std::string &s) {
    if (s == "CN")
        return Diagnosis::CN;
    if (s == "AD")
        return Diagnosis::AD;
    throw std::invalid_argument("diagnosis must be CN or AD, got '" + s + "'");
}

void SubjectRecord::validate() const {
    if (subject_id.empty())
        throw std::invalid_argument("subject_id must not be empty");
    if (!(age >= 0.0) || !std::isfinite(age))
        throw std::invalid_argument("subject " + subject_id + ": age must be a finite value >= 0");
    if (sessions.empty())
        throw std::invalid_argument("subject " + subject_id + " has no sessions");
    std::set<std::string> seen;
    for (const auto &s : sessions)
        if (!seen.insert(s).second)
            throw std::invalid_argument("subject " + subject_id + " has duplicate session " + s);
}

void validate_records(const std::vector<SubjectRecord> &records) {
    std::set<std::string> ids;
    for (const auto &r : records) {
        r.validate();
        if (!ids.insert(r.subject_id).second)
            throw std::invalid_argument("duplicate subject_id " + r.subject_id);
    }
}

RegionAtlas::RegionAtlas(Volume labels, std::map<int, std::string> table)
    : labels_(std::move(labels)), table_(std::move(table)) {
    for (double v : labels_.data()) {
        if (v < 0.0 || v != std::floor(v))
            throw std::invalid_argument("atlas labels must be non-negative integers");
        const int code = static_cast<int>(v);
        if (code != 0 && !table_.contains(code))
            throw std::invalid_argument("atlas label " + std::to_string(code) + " missing from region table");
    }
    if (table_.contains(0))
        throw std::invalid_argument("region code 0 is reserved for background");
}

const std::string &RegionAtlas::name(int code) const {
    auto it = table_.find(code);
    if (it == table_.end())
        throw std::invalid_argument("unknown region code " + std::to_string(code));
    return it->second;
}

std::optional<int> RegionAtlas::code_of(const std::string &name) const {
    for (const auto &[code, n] : table_)
        if (n == name)
            return code;
    return std::nullopt;
}

std::map<int, std::size_t> RegionAtlas::voxel_counts() const {
    std::map<int, std::size_t> counts;
    for (double v : labels_.data())
        ++counts[static_cast<int>(v)];
    return counts;
}

Volume RegionAtlas::brain_mask() const {
    std::vector<double> m(labels_.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = labels_[i] > 0.0 ? 1.0 : 0.0;
    return labels_.with_data(std::move(m));
}

void PhantomConfig::validate() const {
    auto nonneg = [](double v, const char *what) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string("phantom.") + what + " must be finite and >= 0");
    };
    nonneg(noise_sd, "noise_sd");
    nonneg(field_amplitude, "field_amplitude");
    nonneg(shape_jitter, "shape_jitter");
    nonneg(gain_scale, "gain_scale");
    if (!(ad_degree > 0.0 && ad_degree < 1.0))
        throw std::invalid_argument("phantom.ad_degree must lie in (0, 1)");
    if (max_sessions < 1)
        throw std::invalid_argument("phantom.max_sessions must be >= 1");
    if (!(age_min >= 0.0 && age_max >= age_min))
        throw std::invalid_argument("phantom age range invalid");
    if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0))
        throw std::invalid_argument("phantom.spacing must be strictly positive");
}

const Volume &Cohort::volume(const std::string &subject_id, const std::string &session_id) const {
    for (const auto &sv : volumes)
        if (sv.subject_id == subject_id && sv.session_id == session_id)
            return sv.volume;
    throw std::out_of_range("no volume for " + subject_id + "/" + session_id);
}

namespace {

struct Ellipsoid {
    std::array<double, 3> centre;
    std::array<double, 3> axes;

    bool contains(const std::array<double, 3> &u) const {
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double t = (u[a] - centre[a]) / axes[a];
            s += t * t;
        }
        return s <= 1.0;
    }
};

struct RegionSpec {
    int code;
    const char *name;
    double uptake;  // baseline, before normalisation
    double gain_sd; // inter-subject multiplicative variability
    bool ad_affected;
};

// Normalised coordinates: x left-right, y posterior-anterior, z inferior-superior.
constexpr std::array<RegionSpec, 11> kRegions{{
    {1, "cortex", 0.72, 0.12, false},
    {2, "frontal", 0.70, 0.18, false},
    {3, "temporal_left", 0.80, 0.015, true},
    {4, "temporal_right", 0.80, 0.015, true},
    {5, "parietal_left", 0.84, 0.015, true},
    {6, "parietal_right", 0.84, 0.015, true},
    {7, "occipital", 1.00, 0.02, false},
    {8, "cerebellum", 0.65, 0.20, false},
    {9, "white_matter", 0.42, 0.12, false},
    {10, "deep_gray", 0.75, 0.15, false},
    {11, "ventricles", 0.12, 0.30, false},
}};

const Ellipsoid kBrain{{0.0, 0.0, 0.0}, {0.78, 0.86, 0.74}};

struct Placement {
    int code;
    Ellipsoid shape;
};

// Later entries override earlier ones.
const std::array<Placement, 11> kPlacements{{
    {2, {{0.0, 0.55, 0.20}, {0.75, 0.45, 0.60}}},
    {3, {{-0.60, 0.05, -0.30}, {0.30, 0.45, 0.30}}},
    {4, {{0.60, 0.05, -0.30}, {0.30, 0.45, 0.30}}},
    {5, {{-0.35, -0.35, 0.40}, {0.38, 0.35, 0.35}}},
    {6, {{0.35, -0.35, 0.40}, {0.38, 0.35, 0.35}}},
    {7, {{0.0, -0.75, 0.0}, {0.50, 0.30, 0.45}}},
    {8, {{0.0, -0.50, -0.60}, {0.50, 0.30, 0.20}}},
    {9, {{0.0, 0.0, 0.05}, {0.45, 0.55, 0.40}}},
    {10, {{-0.18, 0.05, -0.05}, {0.12, 0.15, 0.12}}},
    {10, {{0.18, 0.05, -0.05}, {0.12, 0.15, 0.12}}},
    {11, {{0.0, 0.0, 0.12}, {0.10, 0.30, 0.10}}},
}};

int template_label(const std::array<double, 3> &u) {
    if (!kBrain.contains(u))
        return 0;
    int label = 1;
    for (const auto &p : kPlacements)
        if (p.shape.contains(u))
            label = p.code;
    return label;
}

const RegionSpec &region_spec(int code) { return kRegions[static_cast<std::size_t>(code - 1)]; }

std::array<double, 3> voxel_coord(const Dims &d, std::size_t x, std::size_t y, std::size_t z) {
    auto c = [](std::size_t i, std::size_t n) {
        const double h = 0.5 * static_cast<double>(n);
        return (static_cast<double>(i) + 0.5 - h) / h;
    };
    return {c(x, d.nx), c(y, d.ny), c(z, d.nz)};
}

struct SubjectAnatomy {
    std::array<double, 3> scale;
    std::array<double, 12> gains; // index by code, [0] unused
    struct Wave {
        double amp, phase;
        std::array<double, 3> freq;
    };
    std::array<Wave, 3> field;
};

SubjectAnatomy draw_anatomy(Rng &rng, const PhantomConfig &cfg) {
    SubjectAnatomy a{};
    for (auto &s : a.scale)
        s = std::clamp(1.0 + cfg.shape_jitter * rng.normal(), 0.9, 1.1);
    a.gains[0] = 1.0;
    for (const auto &r : kRegions)
        a.gains[static_cast<std::size_t>(r.code)] =
            std::clamp(1.0 + cfg.gain_scale * r.gain_sd * rng.normal(), 0.5, 1.5);
    for (auto &w : a.field) {
        w.amp = rng.normal();
        w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (auto &f : w.freq)
            f = rng.uniform(-1.0, 1.0);
    }
    return a;
}

std::vector<double> render_phantom(const Dims &dims, const SubjectAnatomy &a, const PhantomConfig &cfg,
                                   bool is_ad) {
    std::vector<double> img(dims.count(), 0.0);
    const double field_norm = cfg.field_amplitude / std::sqrt(3.0);
    for (std::size_t z = 0; z < dims.nz; ++z)
        for (std::size_t y = 0; y < dims.ny; ++y)
            for (std::size_t x = 0; x < dims.nx; ++x) {
                auto u = voxel_coord(dims, x, y, z);
                std::array<double, 3> us{u[0] / a.scale[0], u[1] / a.scale[1], u[2] / a.scale[2]};
                const int label = template_label(us);
                if (label == 0)
                    continue;
                const RegionSpec &r = region_spec(label);
                double field = 1.0;
                for (const auto &w : a.field)
                    field += field_norm * w.amp *
                             std::cos(std::numbers::pi * (w.freq[0] * u[0] + w.freq[1] * u[1] + w.freq[2] * u[2]) +
                                      w.phase);
                double v = r.uptake * a.gains[static_cast<std::size_t>(label)] * field;
                if (is_ad && r.ad_affected)
                    v *= 1.0 - cfg.ad_degree;
                img[x + dims.nx * (y + dims.ny * z)] = v;
            }
    if (cfg.blur_radius > 0) {
        std::vector<double> blurred(img.size());
        kernels::box_smooth(img, kernels::Grid::from(dims), cfg.blur_radius, blurred);
        img.swap(blurred);
    }
    return img;
}

std::string numbered(const char *prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i + 1);
    return buf;
}

const char *kSessionIds[] = {"ses-M00", "ses-M12", "ses-M24", "ses-M36", "ses-M48", "ses-M60"};

std::string session_id(std::size_t s) {
    if (s < std::size(kSessionIds))
        return kSessionIds[s];
    return "ses-M" + std::to_string(12 * s);
}

} // namespace

Cohort generate_cohort(std::uint64_t seed, std::size_t n_cn, std::size_t n_ad, Dims dims,
                       const PhantomConfig &config) {
    config.validate();
    if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8)
        throw std::invalid_argument("phantom dims must be >= 8 on every axis, got " + dims.str());
    if (n_cn < 4)
        throw std::invalid_argument("need at least 4 CN subjects to form train/validation/test splits");

    // Shared template.
    std::vector<double> labels(dims.count());
    std::set<int> present;
    for (std::size_t z = 0; z < dims.nz; ++z)
        for (std::size_t y = 0; y < dims.ny; ++y)
            for (std::size_t x = 0; x < dims.nx; ++x) {
                const int l = template_label(voxel_coord(dims, x, y, z));
                labels[x + dims.nx * (y + dims.ny * z)] = l;
                if (l != 0)
                    present.insert(l);
            }
    std::map<int, std::string> table;
    for (int code : present)
        table[code] = region_spec(code).name;
    RegionAtlas atlas(Volume(dims, config.spacing, std::move(labels)), std::move(table));

    const std::size_t n = n_cn + n_ad;
    std::vector<SubjectRecord> records(n);
    std::vector<std::vector<SessionVolume>> per_subject(n);

    // Each subject draws from its own keyed streams, so the loop order and
    // thread count do not affect the output.
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        const bool is_ad = i >= n_cn;
        Rng rng(seed, i, 0);
        SubjectRecord rec;
        rec.subject_id = is_ad ? numbered("sub-AD", i - n_cn) : numbered("sub-CN", i);
        rec.diagnosis = is_ad ? Diagnosis::AD : Diagnosis::CN;
        rec.age = std::round(rng.uniform(config.age_min, config.age_max) * 10.0) / 10.0;
        rec.sex = rng.bernoulli(0.5) ? Sex::M : Sex::F;
        const std::size_t n_sessions = is_ad ? 1 : 1 + static_cast<std::size_t>(rng.below(config.max_sessions));
        const SubjectAnatomy anatomy = draw_anatomy(rng, config);
        const std::vector<double> clean = render_phantom(dims, anatomy, config, is_ad);

        for (std::size_t s = 0; s < n_sessions; ++s) {
            Rng noise(seed, i, 1 + s);
            std::vector<double> img(clean);
            for (double &v : img)
                v += config.noise_sd * noise.normal();
            rec.sessions.push_back(session_id(s));
            per_subject[i].push_back(
                {rec.subject_id, rec.sessions.back(), minmax_normalise(Volume(dims, config.spacing, std::move(img)))});
        }
        records[i] = std::move(rec);
    }

    Cohort cohort{std::move(records), std::move(atlas), {}};
    for (auto &vols : per_subject)
        for (auto &sv : vols)
            cohort.volumes.push_back(std::move(sv));
    return cohort;
}

std::vector<int> ad_region_codes(const RegionAtlas &atlas) {
    std::vector<int> codes;
    for (const auto &r : kRegions)
        if (r.ad_affected && atlas.has_region(r.code) && atlas.name(r.code) == r.name)
            codes.push_back(r.code);
    return codes;
}

VolumeSource in_memory_source(const Cohort &cohort) {
    return [&cohort](const std::string &subject, const std::string &session) {
        return cohort.volume(subject, session);
    };
}

} // namespace uad

#include "uad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/format.hpp"

namespace uad {

double ncc(const Volume &a, const Volume &b, const Volume *domain_mask) {
    require_same_dims(a, b, "ncc");
    if (domain_mask)
        require_same_dims(a, *domain_mask, "ncc domain");
    auto in = [&](std::size_t i) { return !domain_mask || (*domain_mask)[i] > 0.0; };

    std::size_t n = 0;
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (in(i)) {
            ++n;
            sa += a[i];
            sb += b[i];
        }
    if (n < 2)
        throw std::invalid_argument("ncc needs at least two voxels in the domain");
    const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (in(i)) {
            const double da = a[i] - ma, db = b[i] - mb;
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
    if (!(saa > 0.0) || !(sbb > 0.0))
        throw std::invalid_argument("ncc is undefined: an input is constant over the domain");
    // saa * sbb is commutative, so swapping the arguments gives the same bits.
    const double r = sab / std::sqrt(saa * sbb);
    if (!std::isfinite(r))
        throw NumericalError("ncc is not finite");
    return std::clamp(r, -1.0, 1.0);
}

const char *to_string(Domain d) { return d == Domain::whole ? "whole" : "brain_only"; }

Domain parse_domain(const std::string &s) {
    if (s == "whole")
        return Domain::whole;
    if (s == "brain_only")
        return Domain::brain_only;
    throw std::invalid_argument("domain must be whole|brain_only, got '" + s + "'");
}

const KindAggregate &EvalReport::aggregate(MapKind k) const {
    for (const auto &a : aggregates)
        if (a.kind == k)
            return a;
    throw std::out_of_range(std::string("no aggregate for map kind ") + to_string(k));
}

std::vector<KindAggregate> aggregate_rows(const std::vector<EvalRow> &rows, const std::vector<MapKind> &kinds) {
    std::vector<KindAggregate> out;
    for (MapKind k : kinds) {
        KindAggregate a{k, 0.0, 0.0, 0};
        double s = 0.0;
        for (const auto &r : rows)
            if (r.kind == k) {
                s += r.ncc;
                ++a.n;
            }
        if (a.n == 0)
            throw std::invalid_argument(std::string("no rows for map kind ") + to_string(k));
        a.mean = s / static_cast<double>(a.n);
        double ss = 0.0;
        for (const auto &r : rows)
            if (r.kind == k)
                ss += (r.ncc - a.mean) * (r.ncc - a.mean);
        a.std = a.n > 1 ? std::sqrt(ss / static_cast<double>(a.n - 1)) : 0.0;
        out.push_back(a);
    }
    return out;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    nlohmann::json rj = nlohmann::json::array();
    for (const auto &r : rows)
        rj.push_back({{"subject_id", r.subject_id}, {"kind", to_string(r.kind)}, {"ncc", r.ncc}});
    nlohmann::json aj = nlohmann::json::array();
    for (const auto &a : aggregates)
        aj.push_back({{"kind", to_string(a.kind)}, {"mean", a.mean}, {"std", a.std}, {"n", a.n}});
    nlohmann::json kinds = nlohmann::json::array();
    for (auto k : options.kinds)
        kinds.push_back(to_string(k));
    j["rows"] = rj;
    j["aggregates"] = aj;
    j["config"] = {{"map_kinds", kinds},
                   {"thresholds", options.thresholds},
                   {"threshold_mode", to_string(options.mode)},
                   {"use_magnitude", options.use_magnitude},
                   {"domain", to_string(options.domain)},
                   {"eps_floor", eps_floor},
                   {"degree", degree},
                   {"reconstructor", reconstructor}};
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "subject_id,kind,ncc\n";
    for (const auto &r : rows)
        os << r.subject_id << ',' << to_string(r.kind) << ',' << format_real(r.ncc) << '\n';
    return os.str();
}

std::vector<PairMaps> compute_pair_maps(const std::vector<EvalPair> &pairs, const Reconstructor &rec,
                                        const PopulationStats &stats, const std::vector<MapKind> &kinds) {
    std::vector<PairMaps> out;
    out.reserve(pairs.size());
    for (const auto &p : pairs) {
        Provenance prov{p.subject_id + "/" + p.session_id + "/simulated", rec.kind(), {}};
        try {
            Volume xh = rec.reconstruct(p.simulated);
            PairMaps pm{p.subject_id, std::move(xh), {}};
            for (MapKind k : kinds)
                pm.maps.push_back(k == MapKind::residual ? residual_map(p.simulated, pm.reconstruction, prov)
                                                         : zscore_map(p.simulated, pm.reconstruction, stats, prov));
            out.push_back(std::move(pm));
        } catch (const NumericalError &e) {
            throw NumericalError("reconstruction failed for subject " + p.subject_id + ": " + e.what());
        } catch (const std::invalid_argument &e) {
            throw std::invalid_argument("reconstruction failed for subject " + p.subject_id + ": " + e.what());
        } catch (const std::exception &e) {
            throw std::runtime_error("reconstruction failed for subject " + p.subject_id + ": " + e.what());
        }
    }
    return out;
}

EvalReport evaluate_maps(const std::vector<EvalPair> &pairs, const std::vector<PairMaps> &maps,
                         const EvalOptions &options, const Volume *brain_mask) {
    if (pairs.empty())
        throw std::invalid_argument("evaluation needs at least one pair");
    if (maps.size() != pairs.size())
        throw std::invalid_argument("one map set per pair is required");
    if (options.domain == Domain::brain_only && !brain_mask)
        throw std::invalid_argument("brain_only domain needs a brain mask");
    const Volume *domain = options.domain == Domain::brain_only ? brain_mask : nullptr;

    EvalReport rep;
    rep.options = options;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (maps[i].maps.size() != options.kinds.size())
            throw std::invalid_argument("map set for " + pairs[i].subject_id + " does not match the kinds");
        for (std::size_t k = 0; k < options.kinds.size(); ++k) {
            const Volume &v = maps[i].maps[k].values;
            try {
                const double r = options.use_magnitude ? ncc(abs(v), pairs[i].mask, domain)
                                                       : ncc(v, pairs[i].mask, domain);
                rep.rows.push_back({pairs[i].subject_id, options.kinds[k], r});
            } catch (const std::invalid_argument &e) {
                throw std::invalid_argument("ncc failed for subject " + pairs[i].subject_id + ": " + e.what());
            }
        }
    }
    rep.aggregates = aggregate_rows(rep.rows, options.kinds);
    return rep;
}

EvalReport evaluate_cohort(const std::vector<EvalPair> &pairs, const Reconstructor &rec,
                           const PopulationStats &stats, const EvalOptions &options, const Volume *brain_mask) {
    if (pairs.empty())
        throw std::invalid_argument("evaluation needs at least one pair");
    if (rec.input_dims() != pairs.front().simulated.dims() || stats.std.dims() != pairs.front().simulated.dims())
        throw std::invalid_argument("reconstructor, statistics and images must share dims");
    EvalReport rep = evaluate_maps(pairs, compute_pair_maps(pairs, rec, stats, options.kinds), options, brain_mask);
    rep.eps_floor = stats.eps_floor;
    rep.reconstructor = rec.kind();
    return rep;
}

double dice(const Volume &a, const Volume &b) {
    require_same_dims(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0.0, y = b[i] != 0.0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<SweepRow> threshold_sweep(const std::vector<EvalPair> &pairs, const std::vector<PairMaps> &maps,
                                      const std::vector<double> &thresholds, ThresholdMode mode) {
    if (maps.size() != pairs.size())
        throw std::invalid_argument("one map set per pair is required");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] >= 0.0))
            throw std::invalid_argument("sweep thresholds must be >= 0");
        if (i > 0 && thresholds[i] < thresholds[i - 1])
            throw std::invalid_argument("sweep thresholds must be ascending");
    }
    std::vector<SweepRow> rows;
    if (pairs.empty())
        return rows;
    const std::size_t nk = maps.front().maps.size();
    for (double t : thresholds)
        for (std::size_t k = 0; k < nk; ++k) {
            SweepRow row{t, maps.front().maps[k].kind, 0.0, 0.0};
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const AbnormalityMap th = threshold_map(maps[i].maps[k], t, mode);
                row.mean_dice += dice(th.values, pairs[i].mask);
                row.mean_support += static_cast<double>(support_size(th.values));
            }
            row.mean_dice /= static_cast<double>(pairs.size());
            row.mean_support /= static_cast<double>(pairs.size());
            rows.push_back(row);
        }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow> &rows) {
    std::ostringstream os;
    os << "threshold,kind,mean_dice,mean_support\n";
    for (const auto &r : rows)
        os << format_real(r.threshold) << ',' << to_string(r.kind) << ',' << format_real(r.mean_dice) << ','
           << format_real(r.mean_support) << '\n';
    return os.str();
}

} // namespace uad

#include "uad/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/rng.hpp"

namespace uad {

void SplitFractions::validate() const {
    for (double f : values())
        if (!(f > 0.0) || !std::isfinite(f))
            throw std::invalid_argument("split fractions must be positive");
    if (std::fabs(train + validation + test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
}

bool CohortSplit::contains(SplitPart p, const std::string &subject_id) const {
    const auto &v = part(p);
    return std::binary_search(v.begin(), v.end(), subject_id);
}

const std::vector<std::string> &CohortSplit::part(SplitPart p) const {
    switch (p) {
    case SplitPart::train:
        return train;
    case SplitPart::validation:
        return validation;
    case SplitPart::test:
        return test;
    }
    return train;
}

void CohortSplit::check_disjoint() const {
    std::set<std::string> seen;
    for (const auto *v : {&train, &validation, &test})
        for (const auto &id : *v)
            if (!seen.insert(id).second)
                throw std::invalid_argument("subject " + id + " appears in more than one split");
}

std::string CohortSplit::to_json() const {
    nlohmann::json j;
    j["train"] = train;
    j["validation"] = validation;
    j["test"] = test;
    return j.dump(2) + "\n";
}

CohortSplit CohortSplit::from_json(const std::string &text) {
    CohortSplit s;
    try {
        auto j = nlohmann::json::parse(text);
        s.train = j.at("train").get<std::vector<std::string>>();
        s.validation = j.at("validation").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("split file malformed: ") + e.what());
    }
    for (auto *v : {&s.train, &s.validation, &s.test})
        std::sort(v->begin(), v->end());
    s.check_disjoint();
    return s;
}

namespace {

// n * f, snapped to the nearest integer when within rounding noise of it
// (e.g. 247 * (178/247)).
double exact_share(std::size_t n, double f) {
    const double q = static_cast<double>(n) * f;
    const double r = std::round(q);
    return std::fabs(q - r) < 1e-9 ? r : q;
}

} // namespace

std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions &f) {
    const auto fr = f.values();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < 3; ++j) {
        const double q = exact_share(n, fr[j]);
        counts[j] = static_cast<std::size_t>(std::floor(q));
        rem[j] = q - std::floor(q);
        assigned += counts[j];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned)
        ++counts[order[k % 3]];
    return counts;
}

std::size_t age_bin(double age, const std::vector<double> &edges) {
    if (edges.size() < 2)
        throw std::invalid_argument("age bins need at least two edges");
    const std::size_t bins = edges.size() - 1;
    for (std::size_t b = 0; b < bins; ++b)
        if (age < edges[b + 1])
            return b;
    return bins - 1;
}

CohortSplit stratified_split(const std::vector<SubjectRecord> &records, const SplitFractions &fractions,
                             const std::vector<double> &age_bins, std::uint64_t seed) {
    if (records.empty())
        throw std::invalid_argument("cannot split an empty record list");
    fractions.validate();
    if (age_bins.size() < 2 || !std::is_sorted(age_bins.begin(), age_bins.end()) ||
        std::adjacent_find(age_bins.begin(), age_bins.end()) != age_bins.end())
        throw std::invalid_argument("age bin edges must be strictly increasing with at least two edges");
    validate_records(records);
    for (const auto &r : records)
        if (r.diagnosis != Diagnosis::CN)
            throw std::invalid_argument("stratified_split expects CN subjects only; " + r.subject_id + " is " +
                                        to_string(r.diagnosis));

    // Strata keyed by (sex, bin); ids sorted so the input order is irrelevant.
    std::map<std::pair<int, std::size_t>, std::vector<std::string>> strata;
    for (const auto &r : records)
        strata[{r.sex == Sex::F ? 0 : 1, age_bin(r.age, age_bins)}].push_back(r.subject_id);

    const auto fr = fractions.values();
    const auto target = largest_remainder(records.size(), fractions);

    struct Stratum {
        std::vector<std::string> ids;
        std::array<std::size_t, 3> count{};
        std::array<double, 3> frac{};
        std::size_t extra = 0;
    };
    std::vector<Stratum> ss;
    std::array<std::size_t, 3> demand = target;
    std::size_t index = 0;
    for (auto &[key, ids] : strata) {
        Stratum s;
        s.ids = std::move(ids);
        std::sort(s.ids.begin(), s.ids.end());
        Rng rng(seed, 0x5eed, index++);
        rng.shuffle(s.ids);
        std::size_t floors = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            const double q = exact_share(s.ids.size(), fr[j]);
            s.count[j] = static_cast<std::size_t>(std::floor(q));
            s.frac[j] = q - std::floor(q);
            floors += s.count[j];
            demand[j] -= s.count[j];
        }
        s.extra = s.ids.size() - floors;
        ss.push_back(std::move(s));
    }

    // Hand out the leftover units: every stratum owes `extra` subjects, every
    // part is owed `demand`. Each stratum gives at most one extra to a part and
    // always to the parts with the largest outstanding demand, which realises
    // any feasible (row, column) total pair.
    for (auto &s : ss) {
        std::array<std::size_t, 3> order{0, 1, 2};
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (demand[a] != demand[b])
                return demand[a] > demand[b];
            return s.frac[a] > s.frac[b];
        });
        for (std::size_t k = 0; k < s.extra; ++k) {
            const std::size_t j = order[k];
            if (demand[j] == 0)
                throw std::logic_error("stratified_split: rounding allocation failed");
            ++s.count[j];
            --demand[j];
        }
    }
    if (demand != std::array<std::size_t, 3>{0, 0, 0})
        throw std::logic_error("stratified_split: rounding allocation left demand unmet");

    CohortSplit out;
    for (const auto &s : ss) {
        std::size_t pos = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            auto &dst = j == 0 ? out.train : j == 1 ? out.validation : out.test;
            for (std::size_t k = 0; k < s.count[j]; ++k)
                dst.push_back(s.ids[pos++]);
        }
    }
    for (auto *v : {&out.train, &out.validation, &out.test})
        std::sort(v->begin(), v->end());
    return out;
}

} // namespace uad

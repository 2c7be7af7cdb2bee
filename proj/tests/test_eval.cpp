#include "doctest.h"

#include <cmath>

#include "json.hpp"
#include "uad/eval.hpp"
#include "uad/rng.hpp"

using namespace uad;

namespace {

Volume random_volume(Dims d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, 4, 4);
    std::vector<double> v(d.count());
    for (auto &x : v)
        x = rng.uniform(lo, hi);
    return Volume(d, {2, 2, 2}, std::move(v));
}

double pearson_oracle(const Volume &a, const Volume &b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Returns x + mask, so the residual of every pair is exactly -mask.
class MaskOffset final : public Reconstructor {
  public:
    explicit MaskOffset(Volume mask) : mask_(std::move(mask)) {}
    Volume reconstruct(const Volume &x) const override { return x + mask_; }
    std::string kind() const override { return "mask-offset"; }
    Dims input_dims() const override { return mask_.dims(); }

  private:
    Volume mask_;
};

class Failing final : public Reconstructor {
  public:
    Volume reconstruct(const Volume &) const override { throw std::runtime_error("boom"); }
    std::string kind() const override { return "failing"; }
    Dims input_dims() const override { return {4, 4, 4}; }
};

PopulationStats unit_stats(Dims d) {
    return PopulationStats{make_volume(d, {2, 2, 2}, 0.0), make_volume(d, {2, 2, 2}, 1.0), 5, 1e-6};
}

std::vector<EvalPair> synthetic_pairs(Dims d, std::size_t n, const Volume &mask) {
    std::vector<EvalPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const Volume h = random_volume(d, 300 + i, 0.2, 1.0);
        out.push_back({"sub-" + std::to_string(i), "ses-M00", h, apply_hypometabolism(h, {mask, 0.3, {}}), mask});
    }
    return out;
}

Volume block_mask(Dims d) {
    std::vector<double> m(d.count(), 0.0);
    for (std::size_t z = 1; z < 3; ++z)
        for (std::size_t y = 1; y < 3; ++y)
            for (std::size_t x = 0; x < 2; ++x)
                m[x + d.nx * (y + d.ny * z)] = 1.0;
    return Volume(d, {2, 2, 2}, m);
}

} // namespace

TEST_CASE("ncc matches a double-loop oracle") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Volume a = random_volume({10, 10, 1}, 2 * s), b = random_volume({10, 10, 1}, 2 * s + 1);
        CHECK(std::abs(ncc(a, b) - pearson_oracle(a, b)) <= 1e-12);
    }
}

TEST_CASE("ncc identities") {
    const Volume m = random_volume({6, 5, 4}, 1);
    CHECK(ncc(m, m) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ncc(m, scale(m, -1.0)) == doctest::Approx(-1.0).epsilon(1e-14));
    const Volume b = random_volume({6, 5, 4}, 2);
    for (auto [c, d] : {std::pair{2.5, 0.3}, std::pair{0.01, -4.0}, std::pair{1e3, 7.0}}) {
        const Volume am = scale(m, c) + make_volume(m.dims(), m.spacing(), d);
        CHECK(std::abs(ncc(am, b) - ncc(m, b)) <= 1e-12);
    }
    CHECK(ncc(m, b) == ncc(b, m));
    const double r = ncc(m, b);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
}

TEST_CASE("ncc over a domain ignores outside voxels") {
    const Dims d{4, 4, 4};
    const Volume a = random_volume(d, 10), b = random_volume(d, 11);
    const Volume dom = block_mask(d);
    std::vector<double> ai, bi;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (dom[i] > 0) {
            ai.push_back(a[i]);
            bi.push_back(b[i]);
        }
    const Volume va({ai.size(), 1, 1}, {1, 1, 1}, ai), vb({bi.size(), 1, 1}, {1, 1, 1}, bi);
    CHECK(std::abs(ncc(a, b, &dom) - pearson_oracle(va, vb)) <= 1e-12);
}

TEST_CASE("ncc errors") {
    const Volume a = random_volume({4, 4, 4}, 1);
    const Volume flat = make_volume({4, 4, 4}, {2, 2, 2}, 0.5);
    CHECK_THROWS_AS(ncc(a, flat), std::invalid_argument);
    CHECK_THROWS_AS(ncc(flat, a), std::invalid_argument);
    CHECK_THROWS_AS(ncc(a, random_volume({4, 4, 3}, 2)), std::invalid_argument);
    std::vector<double> one(64, 0.0);
    one[5] = 1.0;
    const Volume single({4, 4, 4}, {2, 2, 2}, one);
    CHECK_THROWS_AS(ncc(a, a, &single), std::invalid_argument);
}

TEST_CASE("perfect detector scores one") {
    const Dims d{4, 4, 4};
    const Volume mask = block_mask(d);
    const auto pairs = synthetic_pairs(d, 5, mask);
    const MaskOffset rec(mask);
    EvalOptions opt;
    opt.domain = Domain::whole;
    const EvalReport rep = evaluate_cohort(pairs, rec, unit_stats(d), opt, nullptr);
    CHECK(rep.rows.size() == 10);
    for (auto k : {MapKind::residual, MapKind::zscore}) {
        CHECK(rep.aggregate(k).mean == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(rep.aggregate(k).std == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(rep.aggregate(k).n == 5);
    }
    CHECK(rep.reconstructor == "mask-offset");

    opt.use_magnitude = false;
    const EvalReport signed_rep = evaluate_cohort(pairs, rec, unit_stats(d), opt, nullptr);
    CHECK(signed_rep.aggregate(MapKind::residual).mean == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("brain domain requires a mask") {
    const Dims d{4, 4, 4};
    const Volume mask = block_mask(d);
    const auto pairs = synthetic_pairs(d, 2, mask);
    CHECK_THROWS(evaluate_cohort(pairs, MaskOffset(mask), unit_stats(d), EvalOptions{}, nullptr));
}

TEST_CASE("aggregates recompute from rows") {
    const std::vector<EvalRow> rows{{"a", MapKind::residual, 0.2},
                                    {"a", MapKind::zscore, 0.5},
                                    {"b", MapKind::residual, 0.4},
                                    {"b", MapKind::zscore, 0.1},
                                    {"c", MapKind::residual, 0.9},
                                    {"c", MapKind::zscore, 0.3}};
    const auto agg = aggregate_rows(rows, {MapKind::residual, MapKind::zscore});
    REQUIRE(agg.size() == 2);
    CHECK(agg[0].mean == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(agg[0].std == doctest::Approx(std::sqrt(((0.09) + (0.01) + (0.16)) / 2.0)).epsilon(1e-12));
    CHECK(agg[1].mean == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(agg[1].n == 3);
    const auto single = aggregate_rows({{"a", MapKind::zscore, 0.7}}, {MapKind::zscore});
    CHECK(single[0].std == 0.0);
}

TEST_CASE("report serialisation and determinism") {
    const Dims d{4, 4, 4};
    const Volume mask = block_mask(d);
    auto pairs = synthetic_pairs(d, 3, mask);
    // Perturb so the scores differ per subject.
    for (std::size_t i = 0; i < pairs.size(); ++i)
        pairs[i].simulated = pairs[i].simulated + scale(random_volume(d, 900 + i), 0.05);
    const MaskOffset rec(mask);
    const Volume brain = make_volume(d, {2, 2, 2}, 1.0);
    const EvalReport a = evaluate_cohort(pairs, rec, unit_stats(d), EvalOptions{}, &brain);
    const EvalReport b = evaluate_cohort(pairs, rec, unit_stats(d), EvalOptions{}, &brain);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.to_csv().rfind("subject_id,kind,ncc\n", 0) == 0);

    const auto j = nlohmann::json::parse(a.to_json());
    CHECK(j.at("rows").size() == 6);
    CHECK(j.at("aggregates").size() == 2);
    const auto agg = aggregate_rows(a.rows, a.options.kinds);
    for (std::size_t k = 0; k < agg.size(); ++k) {
        CHECK(std::abs(agg[k].mean - a.aggregates[k].mean) <= 1e-12);
        CHECK(std::abs(agg[k].std - a.aggregates[k].std) <= 1e-12);
    }
}

TEST_CASE("reconstruction failures name the subject") {
    const Dims d{4, 4, 4};
    const auto pairs = synthetic_pairs(d, 2, block_mask(d));
    try {
        evaluate_cohort(pairs, Failing{}, unit_stats(d), EvalOptions{}, nullptr);
        FAIL("expected an exception");
    } catch (const std::exception &e) {
        CHECK(std::string(e.what()).find("sub-0") != std::string::npos);
    }
}

TEST_CASE("dice") {
    const Volume a({4, 1, 1}, {1, 1, 1}, {1, 1, 0, 0});
    const Volume b({4, 1, 1}, {1, 1, 1}, {0, 1, 1, 0});
    CHECK(dice(a, b) == doctest::Approx(0.5));
    CHECK(dice(a, a) == 1.0);
    const Volume z = make_volume({4, 1, 1}, {1, 1, 1}, 0.0);
    CHECK(dice(z, z) == 1.0);
    CHECK(dice(a, z) == 0.0);
}

TEST_CASE("threshold sweep") {
    const Dims d{4, 4, 4};
    const Volume mask = block_mask(d);
    auto pairs = synthetic_pairs(d, 3, mask);
    const MaskOffset rec(mask);
    const auto maps = compute_pair_maps(pairs, rec, unit_stats(d), {MapKind::residual, MapKind::zscore});
    // |map| equals 1 up to rounding inside the mask and 0 outside.
    const auto rows = threshold_sweep(pairs, maps, {0.0, 0.5, 0.9, 1.5}, ThresholdMode::two_sided);
    CHECK(rows.size() == 8);
    for (const auto &r : rows) {
        if (r.threshold < 1.0) {
            CHECK(r.mean_dice == doctest::Approx(1.0));
            CHECK(r.mean_support == doctest::Approx(8.0));
        } else {
            CHECK(r.mean_support == 0.0);
        }
    }
    for (std::size_t i = 2; i < rows.size(); ++i)
        if (rows[i].kind == rows[i - 2].kind)
            CHECK(rows[i].mean_support <= rows[i - 2].mean_support);
    CHECK_THROWS(threshold_sweep(pairs, maps, {1.0, 0.5}, ThresholdMode::two_sided));
    CHECK_THROWS(threshold_sweep(pairs, maps, {-1.0}, ThresholdMode::two_sided));
    CHECK(sweep_csv(rows).rfind("threshold,kind,mean_dice,mean_support\n", 0) == 0);
}

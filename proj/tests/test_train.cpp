#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "uad/error.hpp"
#include "uad/split.hpp"
#include "uad/train.hpp"

using namespace uad;
using namespace uad::vae;

namespace {

struct Fixture {
    Cohort cohort = generate_cohort(21, 16, 4, {16, 16, 16});
    std::vector<SubjectRecord> cn;
    CohortSplit split;
    Architecture arch;

    Fixture() {
        for (const auto &r : cohort.records)
            if (r.diagnosis == Diagnosis::CN)
                cn.push_back(r);
        split = stratified_split(cn, {0.75, 0.125, 0.125}, {55, 65, 75, 90}, 3);
        arch.input_dims = {16, 16, 16};
        arch.channels = {4, 8};
        arch.latent_dim = 8;
    }

    TrainConfig config(std::size_t epochs) const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = 4;
        c.learning_rate = 1e-3;
        c.seed = 99;
        return c;
    }
};

const Fixture &fixture() {
    static const Fixture f;
    return f;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

TEST_CASE("adam matches a hand-computed step") {
    Adam opt(2, 0.1, 0.9, 0.999, 1e-8);
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.5, -4.0};
    opt.step(p, g);
    // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    opt.step(p, g);
    const double m = (0.9 * 0.05 + 0.05) / (1 - 0.81);
    const double v = (0.999 * 0.001 * 0.25 + 0.001 * 0.25) / (1 - 0.999 * 0.999);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
    CHECK(opt.t == 2);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.validate();
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.kl_weight = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training sees only train-split CN sessions and makes progress") {
    const Fixture &f = fixture();
    std::vector<std::size_t> ticks;
    TrainConfig cfg = f.config(12);
    cfg.checkpoint_every = 5;
    const TrainResult r = train(f.cohort.records, f.split, in_memory_source(f.cohort), f.arch, cfg,
                                [&](std::size_t epoch, const VaeModel &) { ticks.push_back(epoch); });

    std::set<std::string> expected;
    for (const auto &rec : f.cohort.records)
        if (f.split.contains(SplitPart::train, rec.subject_id))
            for (const auto &s : rec.sessions)
                expected.insert(rec.subject_id + "/" + s);
    CHECK(std::set<std::string>(r.trace.seen_sessions.begin(), r.trace.seen_sessions.end()) == expected);
    for (const auto &id : r.trace.seen_sessions)
        CHECK(id.find("sub-AD") == std::string::npos);

    CHECK(ticks == std::vector<std::size_t>{5, 10});
    CHECK(r.trace.rows.size() == 24);
    const std::size_t per_epoch = (expected.size() + cfg.batch_size - 1) / cfg.batch_size;
    CHECK(r.trace.steps() == 12 * per_epoch);
    for (double kl : r.trace.step_kl)
        CHECK(kl >= 0.0);

    const auto totals = r.trace.totals("train");
    REQUIRE(totals.size() == 12);
    CHECK(totals.back() < totals.front());
    CHECK(median({totals.end() - 4, totals.end()}) < median({totals.begin(), totals.begin() + 4}));
    CHECK(r.trace.totals("validation").size() == 12);

    const std::string csv = r.trace.csv();
    CHECK(csv.rfind("epoch,split,total,recon,kl\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    const Fixture &f = fixture();
    const TrainResult a = train(f.cohort.records, f.split, in_memory_source(f.cohort), f.arch, f.config(2));
    const TrainResult b = train(f.cohort.records, f.split, in_memory_source(f.cohort), f.arch, f.config(2));
    CHECK(std::ranges::equal(a.model.params(), b.model.params()));
    CHECK(std::ranges::equal(a.model.buffers(), b.model.buffers()));
    CHECK(a.trace.csv() == b.trace.csv());

    TrainConfig other = f.config(2);
    other.seed = 100;
    const TrainResult c = train(f.cohort.records, f.split, in_memory_source(f.cohort), f.arch, other);
    CHECK_FALSE(std::ranges::equal(a.model.params(), c.model.params()));
}

TEST_CASE("leakage guard") {
    const Fixture &f = fixture();
    const auto src = in_memory_source(f.cohort);

    CohortSplit with_ad = f.split;
    with_ad.train.push_back("sub-AD001");
    CHECK_THROWS_AS(train(f.cohort.records, with_ad, src, f.arch, f.config(1)), std::invalid_argument);

    CohortSplit overlap = f.split;
    overlap.validation.push_back(overlap.train.front());
    CHECK_THROWS_AS(train(f.cohort.records, overlap, src, f.arch, f.config(1)), std::invalid_argument);

    CohortSplit unknown = f.split;
    unknown.train.push_back("sub-XX999");
    CHECK_THROWS_AS(train(f.cohort.records, unknown, src, f.arch, f.config(1)), std::invalid_argument);
}

TEST_CASE("divergence is reported with its epoch") {
    const Fixture &f = fixture();
    TrainConfig cfg = f.config(3);
    cfg.learning_rate = 1e200;
    try {
        train(f.cohort.records, f.split, in_memory_source(f.cohort), f.arch, cfg);
        FAIL("expected divergence");
    } catch (const NumericalError &e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

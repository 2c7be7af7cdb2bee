#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "uad/dataset.hpp"
#include "uad/popstats.hpp"

using namespace uad;

namespace {

std::filesystem::path scratch(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "uad_test_dataset" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

bool same(std::span<const double> a, std::span<const double> b) { return std::ranges::equal(a, b); }

double region_mean(const Volume &v, const RegionAtlas &atlas, int code) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (atlas.label_at(i) == code) {
            s += v[i];
            ++n;
        }
    REQUIRE(n > 0);
    return s / static_cast<double>(n);
}

} // namespace

TEST_CASE("cohort generation is deterministic") {
    const Cohort a = generate_cohort(7, 6, 2, {16, 16, 16});
    const Cohort b = generate_cohort(7, 6, 2, {16, 16, 16});
    REQUIRE(a.volumes.size() == b.volumes.size());
    for (std::size_t i = 0; i < a.volumes.size(); ++i) {
        CHECK(a.volumes[i].subject_id == b.volumes[i].subject_id);
        CHECK(same(a.volumes[i].volume.data(), b.volumes[i].volume.data()));
    }
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].age == b.records[i].age);
        CHECK(a.records[i].sex == b.records[i].sex);
        CHECK(a.records[i].sessions == b.records[i].sessions);
    }
    const Cohort c = generate_cohort(8, 6, 2, {16, 16, 16});
    CHECK_FALSE(same(c.volumes[0].volume.data(), a.volumes[0].volume.data()));
}

TEST_CASE("generated cohort satisfies the record and atlas contracts") {
    const Cohort c = generate_cohort(3, 12, 4, {20, 20, 20});
    CHECK(c.records.size() == 16);
    validate_records(c.records);
    std::set<std::string> ids;
    std::size_t images = 0;
    for (const auto &r : c.records) {
        ids.insert(r.subject_id);
        CHECK(r.age >= 55.0);
        CHECK(r.age <= 90.0);
        CHECK(r.sessions.size() >= 1);
        CHECK(r.sessions.size() <= 3);
        if (r.diagnosis == Diagnosis::AD)
            CHECK(r.sessions.size() == 1);
        images += r.sessions.size();
    }
    CHECK(ids.size() == 16);
    CHECK(c.volumes.size() == images);

    for (const auto &sv : c.volumes) {
        CHECK(sv.volume.dims() == Dims{20, 20, 20});
        CHECK(sv.volume.min() == 0.0);
        CHECK(sv.volume.max() == 1.0);
    }
    for (std::size_t i = 0; i < c.atlas.labels().size(); ++i) {
        const int code = c.atlas.label_at(i);
        CHECK(code >= 0);
        if (code != 0)
            CHECK(c.atlas.has_region(code));
    }
    CHECK(c.atlas.labels().dims() == c.volumes[0].volume.dims());
    CHECK_FALSE(ad_region_codes(c.atlas).empty());
}

TEST_CASE("sessions of one subject differ only by noise") {
    const Cohort c = generate_cohort(11, 20, 0, {16, 16, 16});
    auto it = std::find_if(c.records.begin(), c.records.end(), [](const auto &r) { return r.sessions.size() > 1; });
    REQUIRE(it != c.records.end());
    const Volume &s0 = c.volume(it->subject_id, it->sessions[0]);
    const Volume &s1 = c.volume(it->subject_id, it->sessions[1]);
    CHECK_FALSE(same(s0.data(), s1.data()));
    double d = 0.0;
    for (std::size_t i = 0; i < s0.size(); ++i)
        d = std::max(d, std::abs(s0[i] - s1[i]));
    CHECK(d < 0.3);
}

TEST_CASE("AD subjects show lower uptake in the affected regions") {
    const Cohort c = generate_cohort(5, 20, 20, {24, 24, 24});
    const auto codes = ad_region_codes(c.atlas);
    for (int code : codes) {
        double cn = 0.0, ad = 0.0;
        std::size_t ncn = 0, nad = 0;
        for (const auto &r : c.records) {
            const double m = region_mean(c.volume(r.subject_id, r.sessions[0]), c.atlas, code);
            if (r.diagnosis == Diagnosis::AD) {
                ad += m;
                ++nad;
            } else {
                cn += m;
                ++ncn;
            }
        }
        CHECK(ad / nad < cn / ncn);
    }
}

TEST_CASE("CN variability differs across regions by at least a factor of two") {
    const Cohort c = generate_cohort(9, 40, 0, {24, 24, 24});
    std::vector<Volume> vols;
    for (const auto &sv : c.volumes)
        vols.push_back(sv.volume);
    const PopulationStats s = compute_population_stats(vols);
    double lo = 1e9, hi = 0.0;
    for (const auto &[code, name] : c.atlas.table()) {
        const double m = region_mean(s.std, c.atlas, code);
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    CHECK(hi >= 2.0 * lo);
}

TEST_CASE("generation rejects degenerate arguments") {
    CHECK_THROWS_AS(generate_cohort(1, 3, 0, {16, 16, 16}), std::invalid_argument);
    CHECK_THROWS_AS(generate_cohort(1, 8, 0, {7, 16, 16}), std::invalid_argument);
    PhantomConfig bad;
    bad.noise_sd = -1.0;
    CHECK_THROWS_AS(generate_cohort(1, 8, 0, {16, 16, 16}, bad), std::invalid_argument);
}

TEST_CASE("records validation") {
    SubjectRecord r{"sub-1", 70.0, Sex::M, Diagnosis::CN, {}};
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r.sessions = {"ses-A", "ses-A"};
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r.sessions = {"ses-A"};
    r.validate();
    CHECK_THROWS_AS(validate_records({r, r}), std::invalid_argument);
}

TEST_CASE("manifest csv round trip") {
    std::vector<ManifestRow> rows{{"sub-CN001", 61.5, Sex::F, Diagnosis::CN, "ses-M00", "volumes/a.vol"},
                                  {"sub-AD001", 80.0, Sex::M, Diagnosis::AD, "ses-M00", "volumes/b.vol"}};
    const std::string text = manifest_csv(rows);
    CHECK(text.rfind("subject_id,age,sex,diagnosis,session_id,volume_path\n", 0) == 0);
    const auto back = parse_manifest_csv(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].subject_id == "sub-CN001");
    CHECK(back[0].age == 61.5);
    CHECK(back[1].sex == Sex::M);
    CHECK(back[1].diagnosis == Diagnosis::AD);
    CHECK(back[1].volume_path == "volumes/b.vol");
    CHECK_THROWS(parse_manifest_csv("bad,header\n"));
}

TEST_CASE("cohort written to disk reads back identically") {
    const Cohort c = generate_cohort(2, 5, 1, {12, 12, 12});
    const auto dir = scratch("roundtrip");
    write_cohort(c, dir);
    const CohortStore store(dir);
    REQUIRE(store.records().size() == c.records.size());
    for (std::size_t i = 0; i < c.records.size(); ++i) {
        CHECK(store.records()[i].subject_id == c.records[i].subject_id);
        CHECK(store.records()[i].sessions == c.records[i].sessions);
        CHECK(store.records()[i].diagnosis == c.records[i].diagnosis);
    }
    CHECK(store.atlas().table() == c.atlas.table());
    CHECK(same(store.atlas().labels().data(), c.atlas.labels().data()));
    for (const auto &sv : c.volumes) {
        const Volume v = store.load(sv.subject_id, sv.session_id);
        for (std::size_t i = 0; i < v.size(); ++i)
            REQUIRE(v[i] == static_cast<double>(static_cast<float>(sv.volume[i])));
    }
    CHECK_THROWS(store.load("sub-none", "ses-M00"));
}

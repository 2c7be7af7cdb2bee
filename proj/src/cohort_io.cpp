#include <algorithm>
#include <stdexcept>

#include "json.hpp"

#include "uad/dataset.hpp"
#include "uad/error.hpp"
#include "uad/format.hpp"
#include "uad/volume_io.hpp"

namespace uad {

namespace fs = std::filesystem;

namespace {
constexpr const char *kManifestHeader = "subject_id,age,sex,diagnosis,session_id,volume_path";
}

std::string manifest_csv(const std::vector<ManifestRow> &rows) {
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto &r : rows)
        out += r.subject_id + "," + format_real(r.age) + "," + to_string(r.sex) + "," + to_string(r.diagnosis) +
               "," + r.session_id + "," + r.volume_path + "\n";
    return out;
}

std::vector<ManifestRow> parse_manifest_csv(const std::string &text) {
    auto lines = split_lines(text);
    if (lines.empty() || lines.front() != kManifestHeader)
        throw FormatError(std::string("manifest header must be '") + kManifestHeader + "'");
    std::vector<ManifestRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty())
            continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 6)
            throw FormatError("manifest line " + std::to_string(i + 1) + ": expected 6 fields");
        try {
            rows.push_back({f[0], parse_real(f[1]), parse_sex(f[2]), parse_diagnosis(f[3]), f[4], f[5]});
        } catch (const std::invalid_argument &e) {
            throw FormatError("manifest line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return rows;
}

void save_atlas(const RegionAtlas &atlas, const fs::path &vol_path, const fs::path &json_path) {
    save_volume(atlas.labels(), vol_path);
    nlohmann::json j;
    j["regions"] = nlohmann::json::array();
    for (const auto &[code, name] : atlas.table())
        j["regions"].push_back({{"code", code}, {"name", name}});
    write_text(json_path, j.dump(2) + "\n");
}

RegionAtlas load_atlas(const fs::path &vol_path, const fs::path &json_path) {
    Volume labels = load_volume(vol_path);
    std::map<int, std::string> table;
    try {
        auto j = nlohmann::json::parse(read_text(json_path));
        for (const auto &r : j.at("regions"))
            table[r.at("code").get<int>()] = r.at("name").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("region table " + json_path.string() + ": " + e.what());
    }
    return RegionAtlas(std::move(labels), std::move(table));
}

std::vector<fs::path> write_cohort(const Cohort &cohort, const fs::path &dir) {
    std::vector<fs::path> written;
    std::vector<ManifestRow> rows;
    for (const auto &rec : cohort.records)
        for (const auto &ses : rec.sessions) {
            const std::string rel = "volumes/" + rec.subject_id + "_" + ses + ".vol";
            save_volume(cohort.volume(rec.subject_id, ses), dir / rel);
            written.push_back(dir / rel);
            rows.push_back({rec.subject_id, rec.age, rec.sex, rec.diagnosis, ses, rel});
        }
    write_text(dir / "manifest.csv", manifest_csv(rows));
    save_atlas(cohort.atlas, dir / "atlas.vol", dir / "atlas.json");
    written.push_back(dir / "manifest.csv");
    written.push_back(dir / "atlas.vol");
    written.push_back(dir / "atlas.json");
    return written;
}

CohortStore::CohortStore(fs::path dir) : dir_(std::move(dir)) {
    const auto rows = parse_manifest_csv(read_text(dir_ / "manifest.csv"));
    for (const auto &row : rows) {
        auto it = std::find_if(records_.begin(), records_.end(),
                               [&](const SubjectRecord &r) { return r.subject_id == row.subject_id; });
        if (it == records_.end()) {
            records_.push_back({row.subject_id, row.age, row.sex, row.diagnosis, {}});
            it = records_.end() - 1;
        } else if (it->age != row.age || it->sex != row.sex || it->diagnosis != row.diagnosis) {
            throw FormatError("manifest: inconsistent demographics for " + row.subject_id);
        }
        it->sessions.push_back(row.session_id);
        paths_[{row.subject_id, row.session_id}] = row.volume_path;
    }
    validate_records(records_);
    atlas_.emplace(load_atlas(dir_ / "atlas.vol", dir_ / "atlas.json"));
}

Volume CohortStore::load(const std::string &subject_id, const std::string &session_id) const {
    auto it = paths_.find({subject_id, session_id});
    if (it == paths_.end())
        throw std::out_of_range("cohort has no volume for " + subject_id + "/" + session_id);
    return load_volume(dir_ / it->second);
}

VolumeSource CohortStore::source() const {
    return [this](const std::string &subject, const std::string &session) { return load(subject, session); };
}

} // namespace uad

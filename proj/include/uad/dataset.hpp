#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

enum class Sex { M, F };
enum class Diagnosis { CN, AD };

const char *to_string(Sex s);
const char *to_string(Diagnosis d);
Sex parse_sex(const std::string &s);
Diagnosis parse_diagnosis(const std::string &s);

struct SubjectRecord {
    std::string subject_id;
    double age = 0.0;
    Sex sex = Sex::F;
    Diagnosis diagnosis = Diagnosis::CN;
    std::vector<std::string> sessions;

    /// Throws std::invalid_argument on empty/duplicate sessions or bad age.
    void validate() const;
};

/// Throws on duplicate subject ids or invalid records.
void validate_records(const std::vector<SubjectRecord> &records);

/// Integer label volume (0 = background) plus code -> name table.
class RegionAtlas {
  public:
    RegionAtlas(Volume labels, std::map<int, std::string> table);

    const Volume &labels() const { return labels_; }
    const std::map<int, std::string> &table() const { return table_; }

    int label_at(std::size_t i) const { return static_cast<int>(labels_[i]); }
    bool has_region(int code) const { return table_.contains(code); }
    const std::string &name(int code) const;
    std::optional<int> code_of(const std::string &name) const;
    /// Voxel count per code, background included.
    std::map<int, std::size_t> voxel_counts() const;
    /// 1 on non-background voxels, 0 elsewhere.
    Volume brain_mask() const;

  private:
    Volume labels_;
    std::map<int, std::string> table_;
};

/// Knobs of the synthetic cohort. Intensities are in arbitrary uptake units
/// before the final per-volume min-max normalisation.
struct PhantomConfig {
    Spacing spacing{2.0, 2.0, 2.0};
    double noise_sd = 0.02;        // additive white noise
    double field_amplitude = 0.05; // smooth multiplicative bias field
    double shape_jitter = 0.02;    // per-axis anatomical scale sd
    double gain_scale = 1.0;       // multiplies every region's gain sd
    std::size_t blur_radius = 1;   // box blur of the noiseless phantom
    double ad_degree = 0.3;        // uptake reduction in AD regions for AD subjects
    std::size_t max_sessions = 3;  // CN subjects own 1..max_sessions images
    double age_min = 55.0, age_max = 90.0;

    void validate() const;
};

/// One stored image of one subject.
struct SessionVolume {
    std::string subject_id;
    std::string session_id;
    Volume volume;
};

struct Cohort {
    std::vector<SubjectRecord> records;
    RegionAtlas atlas;
    std::vector<SessionVolume> volumes; // record order, then session order

    const Volume &volume(const std::string &subject_id, const std::string &session_id) const;
};

/// Deterministic synthetic cohort: shared ellipsoidal template with named
/// regions, per-subject regional gains, smooth bias field, anatomical scale
/// jitter and additive noise. AD subjects get the AD regions scaled by
/// (1 - ad_degree). Every volume is min-max normalised to [0, 1].
Cohort generate_cohort(std::uint64_t seed, std::size_t n_cn, std::size_t n_ad, Dims dims,
                       const PhantomConfig &config = {});

/// Codes of the temporoparietal-like regions hit by AD, restricted to
/// regions present in the atlas.
std::vector<int> ad_region_codes(const RegionAtlas &atlas);

/// Loads a session volume on demand.
using VolumeSource = std::function<Volume(const std::string &subject_id, const std::string &session_id)>;

VolumeSource in_memory_source(const Cohort &cohort);

// ---- on-disk cohort -------------------------------------------------------

struct ManifestRow {
    std::string subject_id;
    double age = 0.0;
    Sex sex = Sex::F;
    Diagnosis diagnosis = Diagnosis::CN;
    std::string session_id;
    std::string volume_path; // relative to the cohort directory
};

/// Writes volumes/, manifest.csv, atlas.vol and atlas.json under `dir`.
/// Returns the written paths.
std::vector<std::filesystem::path> write_cohort(const Cohort &cohort, const std::filesystem::path &dir);

std::string manifest_csv(const std::vector<ManifestRow> &rows);
std::vector<ManifestRow> parse_manifest_csv(const std::string &text);

/// A cohort directory read back from disk; volumes load lazily.
class CohortStore {
  public:
    explicit CohortStore(std::filesystem::path dir);

    const std::vector<SubjectRecord> &records() const { return records_; }
    const RegionAtlas &atlas() const { return *atlas_; }
    Volume load(const std::string &subject_id, const std::string &session_id) const;
    VolumeSource source() const;
    const std::filesystem::path &dir() const { return dir_; }

  private:
    std::filesystem::path dir_;
    std::vector<SubjectRecord> records_;
    std::map<std::pair<std::string, std::string>, std::string> paths_;
    std::optional<RegionAtlas> atlas_;
};

void save_atlas(const RegionAtlas &atlas, const std::filesystem::path &vol_path,
                const std::filesystem::path &json_path);
RegionAtlas load_atlas(const std::filesystem::path &vol_path, const std::filesystem::path &json_path);

} // namespace uad

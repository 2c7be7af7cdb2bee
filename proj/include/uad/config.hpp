#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "uad/anomaly.hpp"
#include "uad/dataset.hpp"
#include "uad/eval.hpp"
#include "uad/split.hpp"
#include "uad/train.hpp"

namespace uad {

/// Invalid configuration; the message starts with the dotted field name.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class ReconstructorKind { vae, pca };
const char *to_string(ReconstructorKind k);

struct PipelineConfig {
    std::uint64_t seed = 0;

    struct Paths {
        std::filesystem::path out = "out";
        std::filesystem::path cohort; // empty: <out>/cohort
    } paths;

    struct Phantom {
        std::size_t n_cn = 80, n_ad = 20;
        Dims dims{32, 32, 32};
        PhantomConfig params;
    } phantom;

    struct Split {
        SplitFractions fractions;
        std::vector<double> age_bins{55.0, 65.0, 75.0, 90.0};
    } split;

    struct Train {
        ReconstructorKind reconstructor = ReconstructorKind::vae;
        vae::Architecture arch;     // input_dims follows phantom.dims
        vae::TrainConfig optimiser; // seed follows the pipeline seed
        std::size_t pca_components = 16;
    } train;

    struct Simulate {
        std::vector<std::string> regions; // region names; empty = the AD-typical set
        double degree = 0.3;
        std::size_t smooth_radius = 1;
    } simulate;

    struct Anomaly {
        double eps_floor = 1e-6;
        std::vector<double> thresholds{1.0, 1.5};
        ThresholdMode mode = ThresholdMode::two_sided;
    } anomaly;

    struct Eval {
        bool use_magnitude = true;
        Domain domain = Domain::brain_only;
        std::vector<double> sweep_thresholds{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    } eval;

    std::filesystem::path cohort_dir() const { return paths.cohort.empty() ? paths.out / "cohort" : paths.cohort; }

    /// Throws ConfigError naming the first offending field.
    void validate() const;

    /// Complete JSON echo; from_json(to_json()) reproduces the config.
    std::string to_json() const;
    /// Missing keys keep their defaults; unknown keys are errors.
    static PipelineConfig from_json(const std::string &text);
};

PipelineConfig load_config(const std::filesystem::path &path);

/// Independent seed for one pipeline stage.
std::uint64_t stage_seed(std::uint64_t seed, const std::string &stage);

} // namespace uad

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uad/dataset.hpp"
#include "uad/split.hpp"
#include "uad/vae.hpp"

namespace uad::vae {

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 8;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    double kl_weight = 1.0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::size_t checkpoint_every = 0; // epochs between checkpoint callbacks; 0 = none

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    std::string split;     // "train" or "validation"
    LossTerms loss;        // per-volume means
};

struct TrainTrace {
    std::vector<EpochRecord> rows;
    std::vector<double> step_kl;            // mean batch KL at every optimiser step
    std::vector<std::string> seen_sessions; // "subject/session", sorted, unique

    std::size_t steps() const { return step_kl.size(); }
    std::vector<double> totals(const std::string &split) const;
    /// epoch,split,total,recon,kl
    std::string csv() const;
    /// step,kl
    std::string steps_csv() const;
};

struct TrainResult {
    VaeModel model;
    TrainTrace trace;
};

using CheckpointCallback = std::function<void(std::size_t epoch, const VaeModel &)>;

/// Fits a VAE on every session of the train-split subjects.
///
/// Throws std::invalid_argument if a train or validation subject is not CN,
/// is unknown, or the split parts overlap. Throws NumericalError naming the
/// epoch if the loss or a gradient becomes non-finite.
TrainResult train(const std::vector<SubjectRecord> &records, const CohortSplit &split, const VolumeSource &source,
                  const Architecture &arch, const TrainConfig &config, const CheckpointCallback &on_checkpoint = {});

/// Adam update in place; `t` is the 1-based step count.
struct Adam {
    double lr, beta1, beta2, eps;
    std::vector<double> m, v;
    std::size_t t = 0;

    Adam(std::size_t n, double lr, double beta1, double beta2, double eps);
    void step(std::span<double> params, std::span<const double> grad);
};

} // namespace uad::vae

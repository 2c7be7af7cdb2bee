#include "uad/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "uad/error.hpp"
#include "uad/format.hpp"
#include "uad/rng.hpp"

namespace uad::vae {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kNoiseStream = 0x401e;

struct Item {
    std::string id;
    Volume volume;
};

std::vector<Item> load_part(const std::vector<SubjectRecord> &records, const std::vector<std::string> &subjects,
                            const VolumeSource &source, const char *part) {
    std::map<std::string, const SubjectRecord *> by_id;
    for (const auto &r : records)
        by_id[r.subject_id] = &r;
    std::vector<Item> out;
    for (const auto &sid : subjects) {
        const auto it = by_id.find(sid);
        if (it == by_id.end())
            throw std::invalid_argument(std::string(part) + " subject " + sid + " has no record");
        if (it->second->diagnosis != Diagnosis::CN)
            throw std::invalid_argument(std::string(part) + " subject " + sid +
                                        " is not CN; only CN images may be used to fit the model");
        for (const auto &ses : it->second->sessions)
            out.push_back({sid + "/" + ses, source(sid, ses)});
    }
    return out;
}

LossTerms weighted(const LossTerms &sum, std::size_t n) {
    const double inv = 1.0 / static_cast<double>(n);
    return {sum.total * inv, sum.recon * inv, sum.kl * inv};
}

void accumulate(LossTerms &acc, const LossTerms &batch_mean, std::size_t b) {
    const double w = static_cast<double>(b);
    acc.total += batch_mean.total * w;
    acc.recon += batch_mean.recon * w;
    acc.kl += batch_mean.kl * w;
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1)
        throw std::invalid_argument("train.epochs must be >= 1");
    if (batch_size < 1)
        throw std::invalid_argument("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("train.learning_rate must be > 0");
    if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight))
        throw std::invalid_argument("train.kl_weight must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0))
        throw std::invalid_argument("Adam epsilon must be > 0");
}

std::vector<double> TrainTrace::totals(const std::string &split) const {
    std::vector<double> out;
    for (const auto &r : rows)
        if (r.split == split)
            out.push_back(r.loss.total);
    return out;
}

std::string TrainTrace::csv() const {
    std::ostringstream os;
    os << "epoch,split,total,recon,kl\n";
    for (const auto &r : rows)
        os << r.epoch << ',' << r.split << ',' << format_real(r.loss.total) << ',' << format_real(r.loss.recon) << ','
           << format_real(r.loss.kl) << '\n';
    return os.str();
}

std::string TrainTrace::steps_csv() const {
    std::ostringstream os;
    os << "step,kl\n";
    for (std::size_t i = 0; i < step_kl.size(); ++i)
        os << i + 1 << ',' << format_real(step_kl[i]) << '\n';
    return os.str();
}

Adam::Adam(std::size_t n, double lr_, double b1, double b2, double e)
    : lr(lr_), beta1(b1), beta2(b2), eps(e), m(n, 0.0), v(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

TrainResult train(const std::vector<SubjectRecord> &records, const CohortSplit &split, const VolumeSource &source,
                  const Architecture &arch, const TrainConfig &config, const CheckpointCallback &on_checkpoint) {
    config.validate();
    arch.validate();
    split.check_disjoint();
    if (split.train.empty())
        throw std::invalid_argument("training split is empty");

    const std::vector<Item> train_items = load_part(records, split.train, source, "train");
    const std::vector<Item> val_items = load_part(records, split.validation, source, "validation");
    for (const auto &it : train_items)
        if (it.volume.dims() != arch.input_dims)
            throw std::invalid_argument("training volume " + it.id + " has dims " + it.volume.dims().str() +
                                        ", model expects " + arch.input_dims.str());

    // Every id that may ever enter a training batch.
    std::set<std::string> allowed;
    for (const auto &it : train_items)
        allowed.insert(it.id);

    TrainResult result{VaeModel::initialise(arch, config.seed), {}};
    VaeModel &model = result.model;
    TrainTrace &trace = result.trace;
    Adam adam(model.params().size(), config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    std::set<std::string> seen;

    const std::size_t n = train_items.size();
    const std::size_t bs = std::min(config.batch_size, n);
    std::vector<double> noise;
    std::vector<const Volume *> batch;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i)
            order[i] = i;
        Rng(config.seed, kShuffleStream, epoch).shuffle(order);

        LossTerms train_sum;
        try {
            for (std::size_t start = 0; start < n; start += bs) {
                const std::size_t b = std::min(bs, n - start);
                batch.clear();
                for (std::size_t k = 0; k < b; ++k) {
                    const Item &it = train_items[order[start + k]];
                    if (!allowed.contains(it.id))
                        throw std::logic_error("volume " + it.id + " is outside the training split");
                    seen.insert(it.id);
                    batch.push_back(&it.volume);
                }
                if (epoch == 1 && start == 0)
                    calibrate_norm(model, batch);

                noise.assign(b * arch.latent_dim, 0.0);
                Rng(config.seed, kNoiseStream, trace.steps()).fill_normal(noise);
                BatchResult r = backward(model, batch, config.kl_weight, noise, Pass::training);
                for (double kl : r.sample_kl)
                    if (!(kl >= 0.0))
                        throw NumericalError("negative KL term " + format_real(kl));
                trace.step_kl.push_back(r.loss.kl);
                accumulate(train_sum, r.loss, b);
                adam.step(model.params(), r.grad);
                if (arch.norm == NormKind::batch)
                    std::copy(r.new_buffers.begin(), r.new_buffers.end(), model.buffers().begin());
                if (!model.all_finite())
                    throw NumericalError("parameters became non-finite");
            }
        } catch (const NumericalError &e) {
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        trace.rows.push_back({epoch, "train", weighted(train_sum, n)});

        if (!val_items.empty()) {
            LossTerms val_sum;
            try {
                for (std::size_t start = 0; start < val_items.size(); start += bs) {
                    const std::size_t b = std::min(bs, val_items.size() - start);
                    batch.clear();
                    for (std::size_t k = 0; k < b; ++k)
                        batch.push_back(&val_items[start + k].volume);
                    accumulate(val_sum, forward_loss(model, batch, config.kl_weight, {}, Pass::inference).loss, b);
                }
            } catch (const NumericalError &e) {
                throw NumericalError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            trace.rows.push_back({epoch, "validation", weighted(val_sum, val_items.size())});
        }

        if (on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)
            on_checkpoint(epoch, model);
    }
    trace.seen_sessions.assign(seen.begin(), seen.end());
    return result;
}

} // namespace uad::vae

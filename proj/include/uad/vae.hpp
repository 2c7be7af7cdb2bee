#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uad/kernels.hpp"
#include "uad/volume.hpp"

namespace uad::vae {

enum class NormKind {
    none,
    frozen, // per-channel affine over statistics fixed at calibration
    batch   // batch statistics in training, running statistics at inference
};

enum class OutputActivation { sigmoid, identity };

const char *to_string(NormKind k);
const char *to_string(OutputActivation a);
NormKind parse_norm(const std::string &s);
OutputActivation parse_output(const std::string &s);

/// Encoder: `channels.size()` strided conv blocks (conv, norm, leaky-ReLU)
/// then one dense layer to (mu, logvar). Decoder mirrors it: dense, leaky-ReLU,
/// transposed conv blocks, output activation on the last one. With no conv
/// blocks both halves reduce to a single dense layer.
struct Architecture {
    Dims input_dims{32, 32, 32};
    std::vector<std::size_t> channels{8, 16, 32};
    std::size_t kernel = 4, stride = 2, padding = 1;
    std::size_t latent_dim = 32;
    double leaky_slope = 0.01;
    NormKind norm = NormKind::frozen;
    OutputActivation output = OutputActivation::sigmoid;

    void validate() const;
    std::size_t levels() const { return channels.size(); }
    /// Geometry of encoder conv i; decoder block j uses geometry L-1-j.
    std::vector<kernels::ConvGeom> geometries() const;
    std::size_t channels_at(std::size_t level) const { return level == 0 ? 1 : channels[level - 1]; }
    /// Flattened size fed to the encoder dense layer.
    std::size_t flat_features() const;
    std::size_t voxels() const { return input_dims.count(); }
};

/// One structural layer description, for symmetry checks and checkpoints.
struct LayerShape {
    std::string kind; // "conv", "deconv", "dense"
    std::size_t c_in = 0, c_out = 0;
    kernels::Grid in, out;
    bool operator==(const LayerShape &) const = default;
};

std::vector<LayerShape> encoder_layers(const Architecture &a);
std::vector<LayerShape> decoder_layers(const Architecture &a);

struct TensorSlot {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

class VaeModel {
  public:
    /// All parameters zero, norm gamma = 1, norm statistics (mean 0, var 1).
    explicit VaeModel(Architecture arch);

    /// Fan-in scaled uniform weights, zero biases.
    static VaeModel initialise(Architecture arch, std::uint64_t seed);

    const Architecture &arch() const { return arch_; }

    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }
    std::span<const double> buffers() const { return buffers_; }
    std::span<double> buffers() { return buffers_; }
    const std::vector<TensorSlot> &param_slots() const { return param_slots_; }
    const std::vector<TensorSlot> &buffer_slots() const { return buffer_slots_; }

    std::span<const double> param(const std::string &name) const;
    std::span<double> param(const std::string &name);
    std::span<const double> buffer(const std::string &name) const;
    std::span<double> buffer(const std::string &name);

    bool all_finite() const;

  private:
    Architecture arch_;
    std::vector<TensorSlot> param_slots_, buffer_slots_;
    std::vector<double> params_, buffers_;
};

struct Latent {
    std::vector<double> mu, logvar;
};

struct LossTerms {
    double total = 0.0, recon = 0.0, kl = 0.0;
};

Latent encode(const VaeModel &m, const Volume &x);

/// z = mu + exp(logvar / 2) * noise
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> noise);

Volume decode(const VaeModel &m, std::span<const double> z, Spacing spacing = {});

/// Deterministic pseudo-healthy estimate: decode(mu(x)).
Volume reconstruct(const VaeModel &m, const Volume &x);

/// recon = sum (x - x_hat)^2, kl = -1/2 sum (1 + logvar - mu^2 - exp(logvar)),
/// total = recon + kl_weight * kl.
LossTerms elbo_loss(const Volume &x, const Volume &x_hat, std::span<const double> mu,
                    std::span<const double> logvar, double kl_weight);

/// KL of N(mu, exp(logvar)) from N(0, I); written as
/// 1/2 sum (mu^2 + expm1(logvar) - logvar) so every term is non-negative.
double kl_divergence(std::span<const double> mu, std::span<const double> logvar);

enum class Pass {
    inference, // stored norm statistics
    training,  // batch statistics when norm == batch
    calibrate  // measure per-channel statistics on this batch and store them
};

struct BatchResult {
    LossTerms loss;                  // batch means
    std::vector<double> sample_kl;   // per sample
    std::vector<double> grad;        // d(mean batch ELBO)/d(params); empty for forward-only
    std::vector<double> new_buffers; // updated running statistics (training/calibrate with norm)
};

/// Mean ELBO over `batch` with the given reparameterisation noise
/// ([batch.size() x latent_dim], row-major). Empty noise means z = mu.
BatchResult forward_loss(const VaeModel &m, std::span<const Volume *const> batch, double kl_weight,
                         std::span<const double> noise, Pass pass = Pass::training);

/// Reverse-mode gradient of the mean batch ELBO with respect to every
/// parameter, with the noise held fixed.
BatchResult backward(const VaeModel &m, std::span<const Volume *const> batch, double kl_weight,
                     std::span<const double> noise, Pass pass = Pass::training);

/// Sets frozen/batch norm statistics from one calibration batch, layer by
/// layer in forward order. No-op when norm == none.
void calibrate_norm(VaeModel &m, std::span<const Volume *const> batch);

// ---- checkpoint (VAE1) ----------------------------------------------------
// "VAE1", uint32 LE header length, JSON descriptor (architecture, params and
// buffers with shapes in blob order), then float32 LE params followed by
// buffers.

std::vector<unsigned char> encode_checkpoint(const VaeModel &m);
VaeModel decode_checkpoint(const std::vector<unsigned char> &bytes);
void save_checkpoint(const VaeModel &m, const std::filesystem::path &path);
VaeModel load_checkpoint(const std::filesystem::path &path);

} // namespace uad::vae

#pragma once

#include <memory>
#include <string>

#include "uad/pca.hpp"
#include "uad/vae.hpp"

namespace uad {

/// Anything that maps an image to a pseudo-healthy estimate of itself.
/// Implementations are immutable after construction and safe to share
/// between threads.
class Reconstructor {
  public:
    virtual ~Reconstructor() = default;
    virtual Volume reconstruct(const Volume &x) const = 0;
    virtual std::string kind() const = 0;
    virtual Dims input_dims() const = 0;
};

class VaeReconstructor final : public Reconstructor {
  public:
    explicit VaeReconstructor(vae::VaeModel model) : model_(std::move(model)) {}
    Volume reconstruct(const Volume &x) const override { return vae::reconstruct(model_, x); }
    std::string kind() const override { return "vae"; }
    Dims input_dims() const override { return model_.arch().input_dims; }
    const vae::VaeModel &model() const { return model_; }

  private:
    vae::VaeModel model_;
};

class PcaReconstructor final : public Reconstructor {
  public:
    explicit PcaReconstructor(PcaModel model) : model_(std::move(model)) {}
    Volume reconstruct(const Volume &x) const override { return pca_reconstruct(model_, x); }
    std::string kind() const override { return "pca"; }
    Dims input_dims() const override { return model_.mean.dims(); }
    const PcaModel &model() const { return model_; }

  private:
    PcaModel model_;
};

} // namespace uad

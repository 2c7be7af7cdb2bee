#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

/// Mean-centred principal subspace of a set of volumes.
struct PcaModel {
    Volume mean;
    std::vector<std::vector<double>> components; // orthonormal, each mean.size() long
    std::vector<double> eigenvalues;             // Gram-matrix eigenvalues, descending

    std::size_t k() const { return components.size(); }
};

/// Top-k subspace from the eigendecomposition of the n x n Gram matrix of the
/// centred volumes. Requires k <= n - 1 and a numerically non-degenerate
/// spectrum over the kept components.
PcaModel pca_fit(std::span<const Volume> volumes, std::size_t k);

/// mean + projection of (x - mean) onto the subspace.
Volume pca_reconstruct(const PcaModel &m, const Volume &x);

/// Lossless (float64) model file.
void save_pca(const PcaModel &m, const std::filesystem::path &path);
PcaModel load_pca(const std::filesystem::path &path);

} // namespace uad

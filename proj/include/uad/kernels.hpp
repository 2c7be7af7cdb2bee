#pragma once

// Data-parallel inner loops.
//
// Everything in uad::kernels is OpenMP-parallel. Each kernel partitions its
// *outputs* across threads and keeps a fixed per-output summation order, so
// results are identical for any thread count. uad::kernels::serial holds
// straightforward single-threaded reference versions used by the tests and
// the benchmark.

#include <cstddef>
#include <span>
#include <vector>

#include "uad/volume.hpp"

namespace uad::kernels {

/// Extents of a channel-major 3D grid; w (x) is the fastest axis.
struct Grid {
    std::size_t d = 1, h = 1, w = 1;

    std::size_t count() const { return d * h * w; }
    bool operator==(const Grid &) const = default;

    static Grid from(const Dims &dims) { return {dims.nz, dims.ny, dims.nx}; }
    Dims dims() const { return {w, h, d}; }
};

/// Strided cubic convolution geometry. `in` is the fine grid, `out` the
/// coarse grid produced by the forward convolution.
struct ConvGeom {
    Grid in, out;
    std::size_t kernel = 4, stride = 2, pad = 1;

    /// Throws std::invalid_argument unless (n + 2p - k) is a non-negative
    /// multiple of the stride on every axis (so the transpose maps back exactly).
    static ConvGeom make(Grid in, std::size_t kernel, std::size_t stride, std::size_t pad);

    std::size_t taps() const { return kernel * kernel * kernel; }
};

bool all_finite(std::span<const double> v);

void elementwise(std::span<const double> a, std::span<const double> b, std::span<double> out, BinaryOp op);

/// Voxel-wise mean and sample standard deviation (n - 1) over `samples`,
/// two-pass per voxel over the sorted samples, so any permutation of
/// `samples` gives the same bits.
void voxel_moments(std::span<const std::span<const double>> samples, std::span<double> mean,
                   std::span<double> stddev);

/// Normalised (2r+1)^3 box filter with zero padding, separable.
void box_smooth(std::span<const double> in, Grid g, std::size_t radius, std::span<double> out);

/// col has shape [channels * taps, out.count()].
void im2col(std::span<const double> img, std::size_t channels, const ConvGeom &g, std::span<double> col);

/// Adjoint of im2col: img[channels, in.count()] = sum of matching col entries (overwrites img).
void col2im(std::span<const double> col, std::size_t channels, const ConvGeom &g, std::span<double> img);

// Row-major dense products. When `accumulate` is false C is overwritten.
// C[M,N] = A[M,K] * B[K,N]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate = false);
// C[M,N] = A^T * B with A stored [K,M]
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate = false);
// C[M,N] = A * B^T with B stored [N,K]
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate = false);

/// out[co, P_out] = W[co, ci*taps] * im2col(in) + bias[co]. `col` is scratch.
void conv3d_forward(std::span<const double> in, std::size_t c_in, std::size_t c_out, const ConvGeom &g,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> out,
                    std::vector<double> &col);

/// Transposed convolution coarse -> fine with the weight of the matching
/// forward convolution: W is [c_coarse, c_fine*taps].
void conv3d_transpose_forward(std::span<const double> in, std::size_t c_coarse, std::size_t c_fine,
                              const ConvGeom &g, std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out, std::vector<double> &col);

namespace serial {

void elementwise(std::span<const double> a, std::span<const double> b, std::span<double> out, BinaryOp op);

void voxel_moments(std::span<const std::span<const double>> samples, std::span<double> mean,
                   std::span<double> stddev);

/// Direct (non-separable) box filter.
void box_smooth(std::span<const double> in, Grid g, std::size_t radius, std::span<double> out);

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C);

/// Direct nested-loop convolution.
void conv3d_forward(std::span<const double> in, std::size_t c_in, std::size_t c_out, const ConvGeom &g,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> out);

/// Direct scatter form of the transposed convolution.
void conv3d_transpose_forward(std::span<const double> in, std::size_t c_coarse, std::size_t c_fine,
                              const ConvGeom &g, std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out);

} // namespace serial

} // namespace uad::kernels

#include <algorithm>
#include <cmath>

#include "uad/kernels.hpp"

namespace uad::kernels::serial {

using Index = std::ptrdiff_t;

void elementwise(std::span<const double> a, std::span<const double> b, std::span<double> out, BinaryOp op) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (op.kind) {
        case BinaryOpKind::add:
            out[i] = a[i] + b[i];
            break;
        case BinaryOpKind::sub:
            out[i] = a[i] - b[i];
            break;
        case BinaryOpKind::mul:
            out[i] = a[i] * b[i];
            break;
        case BinaryOpKind::div_guarded: {
            const double d = b[i] < 0.0 ? std::min(b[i], -op.eps) : std::max(b[i], op.eps);
            out[i] = a[i] / d;
            break;
        }
        }
    }
}

void voxel_moments(std::span<const std::span<const double>> samples, std::span<double> mean,
                   std::span<double> stddev) {
    const std::size_t n = samples.size();
    for (std::size_t v = 0; v < mean.size(); ++v) {
        double s = 0.0;
        for (const auto &x : samples)
            s += x[v];
        const double m = s * (1.0 / static_cast<double>(n));
        double ss = 0.0;
        for (const auto &x : samples)
            ss += (x[v] - m) * (x[v] - m);
        mean[v] = m;
        stddev[v] = std::sqrt(ss * (n > 1 ? 1.0 / static_cast<double>(n - 1) : 0.0));
    }
}

void box_smooth(std::span<const double> in, Grid g, std::size_t radius, std::span<double> out) {
    const Index r = static_cast<Index>(radius);
    const Index D = static_cast<Index>(g.d), H = static_cast<Index>(g.h), W = static_cast<Index>(g.w);
    const double norm = std::pow(static_cast<double>(2 * radius + 1), 3.0);
    for (Index z = 0; z < D; ++z)
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                double s = 0.0;
                for (Index dz = -r; dz <= r; ++dz)
                    for (Index dy = -r; dy <= r; ++dy)
                        for (Index dx = -r; dx <= r; ++dx) {
                            const Index zz = z + dz, yy = y + dy, xx = x + dx;
                            if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W)
                                continue;
                            s += in[static_cast<std::size_t>((zz * H + yy) * W + xx)];
                        }
                out[static_cast<std::size_t>((z * H + y) * W + x)] = s / norm;
            }
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0.0;
            for (std::size_t kk = 0; kk < K; ++kk)
                s += A[i * K + kk] * B[kk * N + j];
            C[i * N + j] = s;
        }
}

void conv3d_forward(std::span<const double> in, std::size_t c_in, std::size_t c_out, const ConvGeom &g,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> out) {
    const Index k = static_cast<Index>(g.kernel), s = static_cast<Index>(g.stride), p = static_cast<Index>(g.pad);
    const Index ID = static_cast<Index>(g.in.d), IH = static_cast<Index>(g.in.h), IW = static_cast<Index>(g.in.w);
    const Index OD = static_cast<Index>(g.out.d), OH = static_cast<Index>(g.out.h), OW = static_cast<Index>(g.out.w);
    for (std::size_t co = 0; co < c_out; ++co)
        for (Index oz = 0; oz < OD; ++oz)
            for (Index oy = 0; oy < OH; ++oy)
                for (Index ox = 0; ox < OW; ++ox) {
                    double acc = bias[co];
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (Index kz = 0; kz < k; ++kz)
                            for (Index ky = 0; ky < k; ++ky)
                                for (Index kx = 0; kx < k; ++kx) {
                                    const Index iz = oz * s + kz - p, iy = oy * s + ky - p, ix = ox * s + kx - p;
                                    if (iz < 0 || iz >= ID || iy < 0 || iy >= IH || ix < 0 || ix >= IW)
                                        continue;
                                    const std::size_t w =
                                        ((co * c_in + ci) * static_cast<std::size_t>(k * k * k)) +
                                        static_cast<std::size_t>((kz * k + ky) * k + kx);
                                    acc += weight[w] *
                                           in[ci * static_cast<std::size_t>(ID * IH * IW) +
                                              static_cast<std::size_t>((iz * IH + iy) * IW + ix)];
                                }
                    out[co * static_cast<std::size_t>(OD * OH * OW) + static_cast<std::size_t>((oz * OH + oy) * OW + ox)] = acc;
                }
}

void conv3d_transpose_forward(std::span<const double> in, std::size_t c_coarse, std::size_t c_fine,
                              const ConvGeom &g, std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out) {
    const Index k = static_cast<Index>(g.kernel), s = static_cast<Index>(g.stride), p = static_cast<Index>(g.pad);
    const Index ID = static_cast<Index>(g.in.d), IH = static_cast<Index>(g.in.h), IW = static_cast<Index>(g.in.w);
    const Index OD = static_cast<Index>(g.out.d), OH = static_cast<Index>(g.out.h), OW = static_cast<Index>(g.out.w);
    const std::size_t F = g.in.count();
    for (std::size_t cf = 0; cf < c_fine; ++cf)
        for (std::size_t j = 0; j < F; ++j)
            out[cf * F + j] = bias[cf];
    for (std::size_t cc = 0; cc < c_coarse; ++cc)
        for (Index oz = 0; oz < OD; ++oz)
            for (Index oy = 0; oy < OH; ++oy)
                for (Index ox = 0; ox < OW; ++ox) {
                    const double v = in[cc * static_cast<std::size_t>(OD * OH * OW) +
                                        static_cast<std::size_t>((oz * OH + oy) * OW + ox)];
                    for (std::size_t cf = 0; cf < c_fine; ++cf)
                        for (Index kz = 0; kz < k; ++kz)
                            for (Index ky = 0; ky < k; ++ky)
                                for (Index kx = 0; kx < k; ++kx) {
                                    const Index iz = oz * s + kz - p, iy = oy * s + ky - p, ix = ox * s + kx - p;
                                    if (iz < 0 || iz >= ID || iy < 0 || iy >= IH || ix < 0 || ix >= IW)
                                        continue;
                                    const std::size_t w = (cc * c_fine + cf) * static_cast<std::size_t>(k * k * k) +
                                                          static_cast<std::size_t>((kz * k + ky) * k + kx);
                                    out[cf * F + static_cast<std::size_t>((iz * IH + iy) * IW + ix)] += weight[w] * v;
                                }
                }
}

} // namespace uad::kernels::serial

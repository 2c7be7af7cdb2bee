#include "uad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace uad::kernels {

namespace {

using Index = std::ptrdiff_t;

constexpr std::size_t kColumnBlock = 256;
constexpr std::size_t kVoxelBlock = 4096;

inline double guarded_denominator(double b, double eps) { return b < 0.0 ? std::min(b, -eps) : std::max(b, eps); }

} // namespace

ConvGeom ConvGeom::make(Grid in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (kernel == 0 || stride == 0)
        throw std::invalid_argument("convolution kernel and stride must be positive");
    auto axis = [&](std::size_t n) {
        if (n + 2 * pad < kernel || (n + 2 * pad - kernel) % stride != 0)
            throw std::invalid_argument("extent " + std::to_string(n) + " is incompatible with kernel " +
                                        std::to_string(kernel) + ", stride " + std::to_string(stride) +
                                        ", padding " + std::to_string(pad));
        return (n + 2 * pad - kernel) / stride + 1;
    };
    ConvGeom g;
    g.in = in;
    g.out = {axis(in.d), axis(in.h), axis(in.w)};
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    return g;
}

bool all_finite(std::span<const double> v) {
    bool ok = true;
#pragma omp parallel for reduction(&& : ok) schedule(static)
    for (std::size_t i = 0; i < v.size(); ++i)
        ok = ok && std::isfinite(v[i]);
    return ok;
}

void elementwise(std::span<const double> a, std::span<const double> b, std::span<double> out, BinaryOp op) {
    const std::size_t n = out.size();
    switch (op.kind) {
    case BinaryOpKind::add:
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            out[i] = a[i] + b[i];
        break;
    case BinaryOpKind::sub:
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            out[i] = a[i] - b[i];
        break;
    case BinaryOpKind::mul:
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            out[i] = a[i] * b[i];
        break;
    case BinaryOpKind::div_guarded:
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            out[i] = a[i] / guarded_denominator(b[i], op.eps);
        break;
    }
}

void voxel_moments(std::span<const std::span<const double>> samples, std::span<double> mean,
                   std::span<double> stddev) {
    const std::size_t n = samples.size();
    const std::size_t voxels = mean.size();
    const std::size_t blocks = (voxels + kVoxelBlock - 1) / kVoxelBlock;
    const double dof = n > 1 ? static_cast<double>(n - 1) : 1.0;

    // Each voxel's samples are summed in ascending order, so the result does
    // not depend on the order of `samples`.
#pragma omp parallel
    {
        std::vector<double> vals(n);
#pragma omp for schedule(static)
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::size_t lo = b * kVoxelBlock;
            const std::size_t hi = std::min(voxels, lo + kVoxelBlock);
            for (std::size_t v = lo; v < hi; ++v) {
                for (std::size_t i = 0; i < n; ++i)
                    vals[i] = samples[i][v];
                std::sort(vals.begin(), vals.end());
                double s = 0.0;
                for (double x : vals)
                    s += x;
                // Clamping keeps the mean of identical samples exact.
                const double m = std::clamp(s / static_cast<double>(n), vals.front(), vals.back());
                double ss = 0.0;
                for (double x : vals)
                    ss += (x - m) * (x - m);
                mean[v] = m;
                stddev[v] = n > 1 ? std::sqrt(ss / dof) : 0.0;
            }
        }
    }
}

void box_smooth(std::span<const double> in, Grid g, std::size_t radius, std::span<double> out) {
    if (radius == 0) {
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    const Index r = static_cast<Index>(radius);
    const double w = 1.0 / static_cast<double>(2 * radius + 1);
    const Index D = static_cast<Index>(g.d), H = static_cast<Index>(g.h), W = static_cast<Index>(g.w);
    std::vector<double> a(in.begin(), in.end()), b(in.size());

    // x pass: a -> b
#pragma omp parallel for schedule(static)
    for (Index line = 0; line < D * H; ++line) {
        const double *src = a.data() + line * W;
        double *dst = b.data() + line * W;
        for (Index x = 0; x < W; ++x) {
            double s = 0.0;
            for (Index t = std::max<Index>(0, x - r); t <= std::min(W - 1, x + r); ++t)
                s += src[t];
            dst[x] = s * w;
        }
    }
    // y pass: b -> a
#pragma omp parallel for schedule(static)
    for (Index z = 0; z < D; ++z)
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                double s = 0.0;
                for (Index t = std::max<Index>(0, y - r); t <= std::min(H - 1, y + r); ++t)
                    s += b[static_cast<std::size_t>((z * H + t) * W + x)];
                a[static_cast<std::size_t>((z * H + y) * W + x)] = s * w;
            }
    // z pass: a -> out
#pragma omp parallel for schedule(static)
    for (Index z = 0; z < D; ++z)
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                double s = 0.0;
                for (Index t = std::max<Index>(0, z - r); t <= std::min(D - 1, z + r); ++t)
                    s += a[static_cast<std::size_t>((t * H + y) * W + x)];
                out[static_cast<std::size_t>((z * H + y) * W + x)] = s * w;
            }
}

void im2col(std::span<const double> img, std::size_t channels, const ConvGeom &g, std::span<double> col) {
    const Index k = static_cast<Index>(g.kernel), s = static_cast<Index>(g.stride), p = static_cast<Index>(g.pad);
    const Index ID = static_cast<Index>(g.in.d), IH = static_cast<Index>(g.in.h), IW = static_cast<Index>(g.in.w);
    const Index OD = static_cast<Index>(g.out.d), OH = static_cast<Index>(g.out.h), OW = static_cast<Index>(g.out.w);
    const Index taps = k * k * k;
    const Index P = OD * OH * OW;
    const Index rows = static_cast<Index>(channels) * taps;

#pragma omp parallel for schedule(static)
    for (Index row = 0; row < rows; ++row) {
        const Index c = row / taps;
        const Index t = row % taps;
        const Index kz = t / (k * k), ky = (t / k) % k, kx = t % k;
        const double *src = img.data() + c * ID * IH * IW;
        double *dst = col.data() + row * P;
        for (Index oz = 0; oz < OD; ++oz) {
            const Index iz = oz * s + kz - p;
            for (Index oy = 0; oy < OH; ++oy) {
                const Index iy = oy * s + ky - p;
                double *d = dst + (oz * OH + oy) * OW;
                if (iz < 0 || iz >= ID || iy < 0 || iy >= IH) {
                    std::fill(d, d + OW, 0.0);
                    continue;
                }
                const double *line = src + (iz * IH + iy) * IW;
                for (Index ox = 0; ox < OW; ++ox) {
                    const Index ix = ox * s + kx - p;
                    d[ox] = (ix >= 0 && ix < IW) ? line[ix] : 0.0;
                }
            }
        }
    }
}

void col2im(std::span<const double> col, std::size_t channels, const ConvGeom &g, std::span<double> img) {
    const Index k = static_cast<Index>(g.kernel), s = static_cast<Index>(g.stride), p = static_cast<Index>(g.pad);
    const Index ID = static_cast<Index>(g.in.d), IH = static_cast<Index>(g.in.h), IW = static_cast<Index>(g.in.w);
    const Index OD = static_cast<Index>(g.out.d), OH = static_cast<Index>(g.out.h), OW = static_cast<Index>(g.out.w);
    const Index taps = k * k * k;
    const Index P = OD * OH * OW;
    const Index planes = static_cast<Index>(channels) * ID;

    // Gather form: each fine voxel sums its taps in ascending row order,
    // which is the order the scatter form would visit them.
#pragma omp parallel for schedule(static)
    for (Index cz = 0; cz < planes; ++cz) {
        const Index c = cz / ID, iz = cz % ID;
        for (Index iy = 0; iy < IH; ++iy)
            for (Index ix = 0; ix < IW; ++ix) {
                double acc = 0.0;
                for (Index kz = 0; kz < k; ++kz) {
                    const Index tz = iz + p - kz;
                    if (tz < 0 || tz % s != 0 || tz / s >= OD)
                        continue;
                    const Index oz = tz / s;
                    for (Index ky = 0; ky < k; ++ky) {
                        const Index ty = iy + p - ky;
                        if (ty < 0 || ty % s != 0 || ty / s >= OH)
                            continue;
                        const Index oy = ty / s;
                        for (Index kx = 0; kx < k; ++kx) {
                            const Index tx = ix + p - kx;
                            if (tx < 0 || tx % s != 0 || tx / s >= OW)
                                continue;
                            const Index ox = tx / s;
                            const Index row = c * taps + (kz * k + ky) * k + kx;
                            acc += col[static_cast<std::size_t>(row * P + (oz * OH + oy) * OW + ox)];
                        }
                    }
                }
                img[static_cast<std::size_t>(((c * ID + iz) * IH + iy) * IW + ix)] = acc;
            }
    }
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate) {
    const std::size_t blocks = (N + kColumnBlock - 1) / kColumnBlock;
#pragma omp parallel for schedule(static)
    for (std::size_t jb = 0; jb < blocks; ++jb) {
        const std::size_t j0 = jb * kColumnBlock, j1 = std::min(N, j0 + kColumnBlock);
        for (std::size_t i = 0; i < M; ++i) {
            double *c = C.data() + i * N;
            if (!accumulate)
                std::fill(c + j0, c + j1, 0.0);
            for (std::size_t kk = 0; kk < K; ++kk) {
                const double a = A[i * K + kk];
                const double *b = B.data() + kk * N;
                for (std::size_t j = j0; j < j1; ++j)
                    c[j] += a * b[j];
            }
        }
    }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate) {
    const std::size_t blocks = (N + kColumnBlock - 1) / kColumnBlock;
#pragma omp parallel for schedule(static)
    for (std::size_t jb = 0; jb < blocks; ++jb) {
        const std::size_t j0 = jb * kColumnBlock, j1 = std::min(N, j0 + kColumnBlock);
        for (std::size_t i = 0; i < M; ++i) {
            double *c = C.data() + i * N;
            if (!accumulate)
                std::fill(c + j0, c + j1, 0.0);
            for (std::size_t kk = 0; kk < K; ++kk) {
                const double a = A[kk * M + i];
                const double *b = B.data() + kk * N;
                for (std::size_t j = j0; j < j1; ++j)
                    c[j] += a * b[j];
            }
        }
    }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const double> A, std::span<const double> B,
             std::span<double> C, bool accumulate) {
    const std::size_t total = M * N;
#pragma omp parallel for schedule(static)
    for (std::size_t ij = 0; ij < total; ++ij) {
        const std::size_t i = ij / N, j = ij % N;
        const double *a = A.data() + i * K;
        const double *b = B.data() + j * K;
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        std::size_t kk = 0;
        for (; kk + 4 <= K; kk += 4) {
            s0 += a[kk] * b[kk];
            s1 += a[kk + 1] * b[kk + 1];
            s2 += a[kk + 2] * b[kk + 2];
            s3 += a[kk + 3] * b[kk + 3];
        }
        for (; kk < K; ++kk)
            s0 += a[kk] * b[kk];
        const double dot = (s0 + s1) + (s2 + s3);
        C[ij] = accumulate ? C[ij] + dot : dot;
    }
}

void conv3d_forward(std::span<const double> in, std::size_t c_in, std::size_t c_out, const ConvGeom &g,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> out,
                    std::vector<double> &col) {
    const std::size_t P = g.out.count();
    const std::size_t rows = c_in * g.taps();
    col.resize(rows * P);
    im2col(in, c_in, g, col);
    gemm_nn(c_out, P, rows, weight, col, out);
#pragma omp parallel for schedule(static)
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t j = 0; j < P; ++j)
            out[co * P + j] += bias[co];
}

void conv3d_transpose_forward(std::span<const double> in, std::size_t c_coarse, std::size_t c_fine,
                              const ConvGeom &g, std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out, std::vector<double> &col) {
    const std::size_t P = g.out.count();
    const std::size_t rows = c_fine * g.taps();
    col.resize(rows * P);
    gemm_tn(rows, P, c_coarse, weight, in, col);
    col2im(col, c_fine, g, out);
    const std::size_t F = g.in.count();
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < c_fine; ++c)
        for (std::size_t j = 0; j < F; ++j)
            out[c * F + j] += bias[c];
}

} // namespace uad::kernels

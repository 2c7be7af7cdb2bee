// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <vector>

#include "uad/kernels.hpp"
#include "uad/rng.hpp"

using namespace uad;
using namespace uad::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    std::vector<double> v(n);
    Rng rng(seed, 0, 0);
    for (auto &x : v)
        x = rng.uniform(-1.0, 1.0);
    return v;
}

Grid cube(std::size_t n) { return {n, n, n}; }

template <bool Serial>
void BM_elementwise(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vector(n * n * n, 1), b = random_vector(n * n * n, 2);
    std::vector<double> out(a.size());
    for (auto _ : state) {
        if constexpr (Serial)
            serial::elementwise(a, b, out, BinaryOp::sub());
        else
            elementwise(a, b, out, BinaryOp::sub());
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Serial>
void BM_voxel_moments(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    std::vector<std::vector<double>> data;
    for (std::uint64_t s = 0; s < 50; ++s)
        data.push_back(random_vector(n * n * n, 10 + s));
    std::vector<std::span<const double>> spans(data.begin(), data.end());
    std::vector<double> mean(n * n * n), sd(n * n * n);
    for (auto _ : state) {
        if constexpr (Serial)
            serial::voxel_moments(spans, mean, sd);
        else
            voxel_moments(spans, mean, sd);
        benchmark::DoNotOptimize(sd.data());
    }
}

template <bool Serial>
void BM_box_smooth(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto in = random_vector(n * n * n, 3);
    std::vector<double> out(in.size());
    for (auto _ : state) {
        if constexpr (Serial)
            serial::box_smooth(in, cube(n), 2, out);
        else
            box_smooth(in, cube(n), 2, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Serial>
void BM_gemm(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vector(n * n, 4), b = random_vector(n * n, 5);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Serial)
            serial::gemm_nn(n, n, n, a, b, c);
        else
            gemm_nn(n, n, n, a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
}

template <bool Serial>
void BM_conv3d(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const std::size_t ci = 8, co = 16;
    const ConvGeom g = ConvGeom::make(cube(n), 4, 2, 1);
    const auto in = random_vector(ci * g.in.count(), 6);
    const auto w = random_vector(co * ci * g.taps(), 7);
    const auto bias = random_vector(co, 8);
    std::vector<double> out(co * g.out.count()), col;
    for (auto _ : state) {
        if constexpr (Serial)
            serial::conv3d_forward(in, ci, co, g, w, bias, out);
        else
            conv3d_forward(in, ci, co, g, w, bias, out, col);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Serial>
void BM_conv3d_transpose(benchmark::State &state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const std::size_t fine = 8, coarse = 16;
    const ConvGeom g = ConvGeom::make(cube(n), 4, 2, 1);
    const auto in = random_vector(coarse * g.out.count(), 9);
    const auto w = random_vector(coarse * fine * g.taps(), 10);
    const auto bias = random_vector(fine, 11);
    std::vector<double> out(fine * g.in.count()), col;
    for (auto _ : state) {
        if constexpr (Serial)
            serial::conv3d_transpose_forward(in, coarse, fine, g, w, bias, out);
        else
            conv3d_transpose_forward(in, coarse, fine, g, w, bias, out, col);
        benchmark::DoNotOptimize(out.data());
    }
}

} // namespace

BENCHMARK(BM_elementwise<true>)->Name("elementwise/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_elementwise<false>)->Name("elementwise/omp")->Arg(32)->Arg(64);
BENCHMARK(BM_voxel_moments<true>)->Name("voxel_moments/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_voxel_moments<false>)->Name("voxel_moments/omp")->Arg(16)->Arg(32);
BENCHMARK(BM_box_smooth<true>)->Name("box_smooth/serial")->Arg(32);
BENCHMARK(BM_box_smooth<false>)->Name("box_smooth/omp")->Arg(32);
BENCHMARK(BM_gemm<true>)->Name("gemm_nn/serial")->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<false>)->Name("gemm_nn/omp")->Arg(128)->Arg(256);
BENCHMARK(BM_conv3d<true>)->Name("conv3d/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_conv3d<false>)->Name("conv3d/omp")->Arg(16)->Arg(32);
BENCHMARK(BM_conv3d_transpose<true>)->Name("conv3d_transpose/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_conv3d_transpose<false>)->Name("conv3d_transpose/omp")->Arg(16)->Arg(32);

BENCHMARK_MAIN();

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "uad/kernels.hpp"
#include "uad/parallel.hpp"
#include "uad/rng.hpp"

using namespace uad;
using namespace uad::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, 3, 4);
    std::vector<double> v(n);
    for (auto &x : v)
        x = rng.uniform(lo, hi);
    return v;
}

double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double dot(const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

struct ThreadGuard {
    int saved = par::max_threads();
    ~ThreadGuard() { par::set_threads(saved); }
};

} // namespace

TEST_CASE("conv geometry accepts exact strides and rejects the rest") {
    const ConvGeom g = ConvGeom::make({8, 8, 8}, 4, 2, 1);
    CHECK(g.out == Grid{4, 4, 4});
    CHECK(g.taps() == 64);
    const ConvGeom h = ConvGeom::make({6, 4, 8}, 4, 2, 1);
    CHECK(h.out == Grid{3, 2, 4});
    CHECK_THROWS_AS(ConvGeom::make({7, 8, 8}, 4, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(ConvGeom::make({1, 1, 1}, 4, 1, 0), std::invalid_argument);
}

TEST_CASE("all_finite") {
    CHECK(all_finite(std::vector<double>{0.0, 1.0, -2.0}));
    CHECK_FALSE(all_finite(std::vector<double>{0.0, std::nan("")}));
    CHECK_FALSE(all_finite(std::vector<double>{INFINITY}));
}

TEST_CASE("elementwise matches the serial reference bitwise") {
    const auto a = random_vec(1000, 1);
    auto b = random_vec(1000, 2);
    b[3] = 0.0;
    b[4] = 1e-9;
    for (const BinaryOp op : {BinaryOp::add(), BinaryOp::sub(), BinaryOp::mul(), BinaryOp::div_guarded(1e-3)}) {
        std::vector<double> p(a.size()), s(a.size());
        elementwise(a, b, p, op);
        serial::elementwise(a, b, s, op);
        CHECK(p == s);
    }
}

TEST_CASE("voxel_moments matches the serial reference and a direct oracle") {
    const std::size_t n = 7, voxels = 300;
    std::vector<std::vector<double>> data;
    for (std::size_t i = 0; i < n; ++i)
        data.push_back(random_vec(voxels, 10 + i, 0.0, 5.0));
    std::vector<std::span<const double>> spans(data.begin(), data.end());

    std::vector<double> mp(voxels), sp(voxels), ms(voxels), ss(voxels);
    voxel_moments(spans, mp, sp);
    serial::voxel_moments(spans, ms, ss);
    CHECK(max_abs_diff(mp, ms) <= 1e-12);
    CHECK(max_abs_diff(sp, ss) <= 1e-12);

    for (std::size_t v = 0; v < voxels; v += 37) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += data[i][v];
        mean /= n;
        double ss2 = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            ss2 += (data[i][v] - mean) * (data[i][v] - mean);
        CHECK(mp[v] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(sp[v] == doctest::Approx(std::sqrt(ss2 / (n - 1))).epsilon(1e-12));
    }
}

TEST_CASE("voxel_moments is exactly permutation invariant") {
    std::vector<std::vector<double>> data;
    for (std::size_t i = 0; i < 9; ++i)
        data.push_back(random_vec(128, 40 + i, -3.0, 3.0));
    std::vector<std::span<const double>> fwd(data.begin(), data.end());
    std::vector<std::span<const double>> rev(data.rbegin(), data.rend());
    std::vector<double> m1(128), s1(128), m2(128), s2(128);
    voxel_moments(fwd, m1, s1);
    voxel_moments(rev, m2, s2);
    CHECK(m1 == m2);
    CHECK(s1 == s2);
}

TEST_CASE("voxel_moments gives zero spread for identical samples") {
    const auto x = random_vec(64, 5);
    std::vector<std::span<const double>> spans(4, std::span<const double>(x));
    std::vector<double> m(64), s(64);
    voxel_moments(spans, m, s);
    CHECK(m == x);
    CHECK(std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("box_smooth matches the direct filter and preserves constants inside") {
    const Grid g{5, 6, 7};
    const auto x = random_vec(g.count(), 7);
    for (std::size_t r : {0u, 1u, 2u}) {
        std::vector<double> p(g.count()), s(g.count());
        box_smooth(x, g, r, p);
        serial::box_smooth(x, g, r, s);
        CHECK(max_abs_diff(p, s) <= 1e-12);
    }
    std::vector<double> ones(g.count(), 1.0), out(g.count());
    box_smooth(ones, g, 1, out);
    // interior voxel sees the full window; corners see 8 of 27
    CHECK(out[(2 * 6 + 2) * 7 + 3] == doctest::Approx(1.0));
    CHECK(out[0] == doctest::Approx(8.0 / 27.0));
}

TEST_CASE("gemm variants agree with the serial product") {
    const std::size_t M = 5, N = 37, K = 11;
    const auto A = random_vec(M * K, 20);
    const auto B = random_vec(K * N, 21);
    std::vector<double> ref(M * N), C(M * N);
    serial::gemm_nn(M, N, K, A, B, ref);
    gemm_nn(M, N, K, A, B, C);
    CHECK(max_abs_diff(C, ref) <= 1e-12);

    std::vector<double> At(K * M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k)
            At[k * M + i] = A[i * K + k];
    gemm_tn(M, N, K, At, B, C);
    CHECK(max_abs_diff(C, ref) <= 1e-12);

    std::vector<double> Bt(N * K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j)
            Bt[j * K + k] = B[k * N + j];
    gemm_nt(M, N, K, A, Bt, C);
    CHECK(max_abs_diff(C, ref) <= 1e-12);

    std::vector<double> acc(M * N, 1.0);
    gemm_nn(M, N, K, A, B, acc, true);
    for (std::size_t i = 0; i < acc.size(); ++i)
        CHECK(acc[i] == doctest::Approx(ref[i] + 1.0).epsilon(1e-12));
}

TEST_CASE("col2im is the adjoint of im2col") {
    const ConvGeom g = ConvGeom::make({6, 4, 8}, 4, 2, 1);
    const std::size_t ch = 3;
    const auto x = random_vec(ch * g.in.count(), 30);
    const auto c = random_vec(ch * g.taps() * g.out.count(), 31);
    std::vector<double> cx(c.size()), xc(x.size());
    im2col(x, ch, g, cx);
    col2im(c, ch, g, xc);
    CHECK(dot(cx, c) == doctest::Approx(dot(x, xc)).epsilon(1e-12));
}

TEST_CASE("conv3d forward and transpose match direct loops") {
    const ConvGeom g = ConvGeom::make({8, 6, 4}, 4, 2, 1);
    const std::size_t ci = 2, co = 3;
    const auto x = random_vec(ci * g.in.count(), 50);
    const auto w = random_vec(co * ci * g.taps(), 51);
    const auto b = random_vec(co, 52);
    std::vector<double> col, p(co * g.out.count()), s(p.size());
    conv3d_forward(x, ci, co, g, w, b, p, col);
    serial::conv3d_forward(x, ci, co, g, w, b, s);
    CHECK(max_abs_diff(p, s) <= 1e-12);

    const auto y = random_vec(co * g.out.count(), 53);
    const auto bf = random_vec(ci, 54);
    std::vector<double> tp(ci * g.in.count()), ts(tp.size());
    conv3d_transpose_forward(y, co, ci, g, w, bf, tp, col);
    serial::conv3d_transpose_forward(y, co, ci, g, w, bf, ts);
    CHECK(max_abs_diff(tp, ts) <= 1e-12);
}

TEST_CASE("transposed convolution is the adjoint of the forward convolution") {
    const ConvGeom g = ConvGeom::make({8, 8, 8}, 4, 2, 1);
    const std::size_t ci = 2, co = 4;
    const auto x = random_vec(ci * g.in.count(), 60);
    const auto y = random_vec(co * g.out.count(), 61);
    const auto w = random_vec(co * ci * g.taps(), 62);
    const std::vector<double> zc(co, 0.0), zf(ci, 0.0);
    std::vector<double> col, ax(co * g.out.count()), aty(ci * g.in.count());
    conv3d_forward(x, ci, co, g, w, zc, ax, col);
    conv3d_transpose_forward(y, co, ci, g, w, zf, aty, col);
    CHECK(dot(ax, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));
}

TEST_CASE("kernel results do not depend on the thread count") {
    ThreadGuard guard;
    const ConvGeom g = ConvGeom::make({8, 8, 8}, 4, 2, 1);
    const std::size_t ci = 3, co = 5;
    const auto x = random_vec(ci * g.in.count(), 70);
    const auto w = random_vec(co * ci * g.taps(), 71);
    const auto b = random_vec(co, 72);
    const auto y = random_vec(co * g.out.count(), 73);
    const auto bf = random_vec(ci, 74);

    auto run = [&](int threads) {
        par::set_threads(threads);
        std::vector<double> col, f(co * g.out.count()), t(ci * g.in.count()), sm(g.in.count());
        conv3d_forward(x, ci, co, g, w, b, f, col);
        conv3d_transpose_forward(y, co, ci, g, w, bf, t, col);
        box_smooth(std::span<const double>(x).first(g.in.count()), g.in, 2, sm);
        f.insert(f.end(), t.begin(), t.end());
        f.insert(f.end(), sm.begin(), sm.end());
        return f;
    };
    const auto one = run(1);
    CHECK(run(2) == one);
    CHECK(run(4) == one);
}

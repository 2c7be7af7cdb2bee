#include "uad/pca.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>

#include <Eigen/Dense>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/volume_io.hpp"

namespace uad {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

void orthonormalise(std::vector<std::vector<double>> &basis) {
    for (std::size_t i = 0; i < basis.size(); ++i) {
        auto &u = basis[i];
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < i; ++j) {
                const double c = dot(u, basis[j]);
                for (std::size_t v = 0; v < u.size(); ++v)
                    u[v] -= c * basis[j][v];
            }
        const double norm = std::sqrt(dot(u, u));
        if (!(norm > 0.0))
            throw NumericalError("PCA component " + std::to_string(i) + " collapsed during orthonormalisation");
        for (auto &x : u)
            x /= norm;
    }
}

constexpr char kMagic[4] = {'P', 'C', 'A', '1'};

} // namespace

PcaModel pca_fit(std::span<const Volume> volumes, std::size_t k) {
    const std::size_t n = volumes.size();
    if (n < 1)
        throw std::invalid_argument("pca_fit needs at least one volume");
    if (k > n - 1)
        throw std::invalid_argument("PCA k = " + std::to_string(k) + " out of range; must be <= n - 1 = " +
                                    std::to_string(n - 1));
    const std::size_t N = volumes[0].size();
    for (const auto &v : volumes)
        require_same_dims(volumes[0], v, "pca_fit");

    std::vector<double> mean(N, 0.0);
    for (const auto &v : volumes)
        for (std::size_t i = 0; i < N; ++i)
            mean[i] += v[i];
    for (auto &x : mean)
        x /= static_cast<double>(n);

    std::vector<std::vector<double>> centred(n, std::vector<double>(N));
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < N; ++i)
            centred[s][i] = volumes[s][i] - mean[i];

    PcaModel m{volumes[0].with_data(mean), {}, {}};
    if (k == 0)
        return m;

    Eigen::MatrixXd gram(n, n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b)
            gram(a, b) = gram(b, a) = dot(centred[a], centred[b]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success)
        throw NumericalError("Gram matrix eigendecomposition failed");

    const double top = eig.eigenvalues()(static_cast<Eigen::Index>(n - 1));
    for (std::size_t c = 0; c < k; ++c) {
        const auto idx = static_cast<Eigen::Index>(n - 1 - c);
        const double lambda = eig.eigenvalues()(idx);
        if (!(lambda > 1e-12 * top) || !(top > 0.0))
            throw NumericalError("PCA component " + std::to_string(c) +
                                 " has a vanishing eigenvalue; the training volumes are degenerate");
        std::vector<double> u(N, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            const double w = eig.eigenvectors()(static_cast<Eigen::Index>(s), idx);
            for (std::size_t i = 0; i < N; ++i)
                u[i] += w * centred[s][i];
        }
        // Fix the sign: largest-magnitude entry positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < N; ++i)
            if (std::fabs(u[i]) > std::fabs(u[arg]))
                arg = i;
        if (u[arg] < 0.0)
            for (auto &x : u)
                x = -x;
        m.components.push_back(std::move(u));
        m.eigenvalues.push_back(lambda);
    }
    orthonormalise(m.components);
    return m;
}

Volume pca_reconstruct(const PcaModel &m, const Volume &x) {
    require_same_dims(m.mean, x, "pca_reconstruct");
    const std::size_t N = x.size();
    std::vector<double> d(N);
    for (std::size_t i = 0; i < N; ++i)
        d[i] = x[i] - m.mean[i];
    std::vector<double> out(m.mean.data().begin(), m.mean.data().end());
    for (const auto &u : m.components) {
        const double c = dot(u, d);
        for (std::size_t i = 0; i < N; ++i)
            out[i] += c * u[i];
    }
    return x.with_data(std::move(out));
}

void save_pca(const PcaModel &m, const std::filesystem::path &path) {
    const auto &d = m.mean.dims();
    const auto &s = m.mean.spacing();
    const nlohmann::json header = {{"dims", {d.nx, d.ny, d.nz}},
                                   {"spacing", {s.sx, s.sy, s.sz}},
                                   {"k", m.k()},
                                   {"eigenvalues", m.eigenvalues},
                                   {"dtype", "f64le"}};
    const std::string text = header.dump();
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((len >> (8 * i)) & 0xffu));
    out.insert(out.end(), text.begin(), text.end());
    auto put = [&](std::span<const double> v) {
        for (double x : v) {
            const auto bits = std::bit_cast<std::uint64_t>(x);
            for (int i = 0; i < 8; ++i)
                out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
        }
    };
    put(m.mean.data());
    for (const auto &u : m.components)
        put(u);
    write_bytes(path, out);
}

PcaModel load_pca(const std::filesystem::path &path) {
    const auto bytes = read_bytes(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError(path.string() + " is not a PCA1 model");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i)
        len |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    if (bytes.size() < 8 + std::size_t{len})
        throw FormatError("PCA1 header truncated");
    Dims dims;
    Spacing spacing;
    std::size_t k = 0;
    std::vector<double> eigenvalues;
    try {
        const auto h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
        const auto &d = h.at("dims");
        const auto &s = h.at("spacing");
        dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
        spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
        k = h.at("k").get<std::size_t>();
        eigenvalues = h.at("eigenvalues").get<std::vector<double>>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("PCA1 header malformed: ") + e.what());
    }
    const std::size_t N = dims.count();
    if (bytes.size() - 8 - len != 8 * N * (k + 1) || eigenvalues.size() != k)
        throw FormatError("PCA1 payload length does not match the header");
    const unsigned char *p = bytes.data() + 8 + len;
    auto get = [&](std::vector<double> &v) {
        v.resize(N);
        for (auto &x : v) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i)
                bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
            p += 8;
            x = std::bit_cast<double>(bits);
        }
    };
    std::vector<double> mean;
    get(mean);
    PcaModel m{Volume(dims, spacing, std::move(mean)), {}, std::move(eigenvalues)};
    m.components.resize(k);
    for (auto &u : m.components)
        get(u);
    return m;
}

} // namespace uad

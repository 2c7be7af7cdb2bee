#include "uad/vae.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uad/error.hpp"
#include "uad/rng.hpp"

namespace uad::vae {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kRunningMomentum = 0.1;

} // namespace

const char *to_string(NormKind k) {
    switch (k) {
    case NormKind::none:
        return "none";
    case NormKind::frozen:
        return "frozen";
    case NormKind::batch:
        return "batch";
    }
    return "?";
}

const char *to_string(OutputActivation a) { return a == OutputActivation::sigmoid ? "sigmoid" : "identity"; }

NormKind parse_norm(const std::string &s) {
    if (s == "none")
        return NormKind::none;
    if (s == "frozen")
        return NormKind::frozen;
    if (s == "batch")
        return NormKind::batch;
    throw std::invalid_argument("norm must be one of none|frozen|batch, got '" + s + "'");
}

OutputActivation parse_output(const std::string &s) {
    if (s == "sigmoid")
        return OutputActivation::sigmoid;
    if (s == "identity")
        return OutputActivation::identity;
    throw std::invalid_argument("output activation must be sigmoid|identity, got '" + s + "'");
}

void Architecture::validate() const {
    if (input_dims.count() == 0)
        throw std::invalid_argument("architecture input dims must be positive");
    if (latent_dim == 0)
        throw std::invalid_argument("latent_dim must be >= 1");
    for (auto c : channels)
        if (c == 0)
            throw std::invalid_argument("conv channel counts must be >= 1");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
        throw std::invalid_argument("leaky_slope must lie in [0, 1)");
    (void)geometries(); // throws on incompatible extents
}

std::vector<kernels::ConvGeom> Architecture::geometries() const {
    std::vector<kernels::ConvGeom> g;
    kernels::Grid grid = kernels::Grid::from(input_dims);
    for (std::size_t i = 0; i < channels.size(); ++i) {
        g.push_back(kernels::ConvGeom::make(grid, kernel, stride, padding));
        grid = g.back().out;
    }
    return g;
}

std::size_t Architecture::flat_features() const {
    if (channels.empty())
        return input_dims.count();
    return channels.back() * geometries().back().out.count();
}

std::vector<LayerShape> encoder_layers(const Architecture &a) {
    std::vector<LayerShape> out;
    const auto geoms = a.geometries();
    for (std::size_t i = 0; i < a.levels(); ++i)
        out.push_back({"conv", a.channels_at(i), a.channels_at(i + 1), geoms[i].in, geoms[i].out});
    out.push_back({"dense", a.flat_features(), 2 * a.latent_dim, {}, {}});
    return out;
}

std::vector<LayerShape> decoder_layers(const Architecture &a) {
    std::vector<LayerShape> out;
    const auto geoms = a.geometries();
    out.push_back({"dense", a.latent_dim, a.flat_features(), {}, {}});
    for (std::size_t j = 0; j < a.levels(); ++j) {
        const std::size_t i = a.levels() - 1 - j;
        out.push_back({"deconv", a.channels_at(i + 1), a.channels_at(i), geoms[i].out, geoms[i].in});
    }
    return out;
}

namespace {

struct Layout {
    std::vector<TensorSlot> params, buffers;
    std::size_t param_size = 0, buffer_size = 0;

    void add_param(std::string name, std::vector<std::size_t> shape) { add(params, param_size, std::move(name), std::move(shape)); }
    void add_buffer(std::string name, std::vector<std::size_t> shape) { add(buffers, buffer_size, std::move(name), std::move(shape)); }

  private:
    static void add(std::vector<TensorSlot> &v, std::size_t &total, std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto s : shape)
            n *= s;
        v.push_back({std::move(name), std::move(shape), total, n});
        total += n;
    }
};

bool has_norm(const Architecture &a) { return a.norm != NormKind::none; }

Layout make_layout(const Architecture &a) {
    Layout l;
    const std::size_t k = a.kernel;
    const std::size_t L = a.levels();
    for (std::size_t i = 0; i < L; ++i) {
        const std::string p = "enc.conv" + std::to_string(i);
        l.add_param(p + ".weight", {a.channels_at(i + 1), a.channels_at(i), k, k, k});
        l.add_param(p + ".bias", {a.channels_at(i + 1)});
        if (has_norm(a)) {
            const std::string n = "enc.norm" + std::to_string(i);
            l.add_param(n + ".gamma", {a.channels_at(i + 1)});
            l.add_param(n + ".beta", {a.channels_at(i + 1)});
            l.add_buffer(n + ".mean", {a.channels_at(i + 1)});
            l.add_buffer(n + ".var", {a.channels_at(i + 1)});
        }
    }
    l.add_param("enc.dense.weight", {2 * a.latent_dim, a.flat_features()});
    l.add_param("enc.dense.bias", {2 * a.latent_dim});
    l.add_param("dec.dense.weight", {a.flat_features(), a.latent_dim});
    l.add_param("dec.dense.bias", {a.flat_features()});
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t i = L - 1 - j;
        const std::string p = "dec.deconv" + std::to_string(j);
        l.add_param(p + ".weight", {a.channels_at(i + 1), a.channels_at(i), k, k, k});
        l.add_param(p + ".bias", {a.channels_at(i)});
        if (has_norm(a) && j + 1 < L) {
            const std::string n = "dec.norm" + std::to_string(j);
            l.add_param(n + ".gamma", {a.channels_at(i)});
            l.add_param(n + ".beta", {a.channels_at(i)});
            l.add_buffer(n + ".mean", {a.channels_at(i)});
            l.add_buffer(n + ".var", {a.channels_at(i)});
        }
    }
    return l;
}

const TensorSlot &find_slot(const std::vector<TensorSlot> &slots, const std::string &name) {
    for (const auto &s : slots)
        if (s.name == name)
            return s;
    throw std::out_of_range("no tensor named " + name);
}

} // namespace

VaeModel::VaeModel(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    Layout l = make_layout(arch_);
    param_slots_ = std::move(l.params);
    buffer_slots_ = std::move(l.buffers);
    params_.assign(l.param_size, 0.0);
    buffers_.assign(l.buffer_size, 0.0);
    for (const auto &s : param_slots_)
        if (s.name.ends_with(".gamma"))
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, 1.0);
    for (const auto &s : buffer_slots_)
        if (s.name.ends_with(".var"))
            std::fill_n(buffers_.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, 1.0);
}

VaeModel VaeModel::initialise(Architecture arch, std::uint64_t seed) {
    VaeModel m(std::move(arch));
    const auto &a = m.arch_;
    const double taps = static_cast<double>(a.kernel * a.kernel * a.kernel);
    const double per_output = std::max(1.0, taps / std::pow(static_cast<double>(a.stride), 3.0));
    for (std::size_t si = 0; si < m.param_slots_.size(); ++si) {
        const auto &s = m.param_slots_[si];
        if (!s.name.ends_with(".weight"))
            continue;
        double fan_in = 1.0;
        if (s.name.starts_with("enc.conv"))
            fan_in = static_cast<double>(s.shape[1]) * taps;
        else if (s.name.starts_with("dec.deconv"))
            fan_in = static_cast<double>(s.shape[0]) * per_output;
        else
            fan_in = static_cast<double>(s.shape[1]);
        const double bound = 1.0 / std::sqrt(fan_in);
        Rng rng(seed, 0x1417, si);
        for (std::size_t k = 0; k < s.size; ++k)
            m.params_[s.offset + k] = rng.uniform(-bound, bound);
    }
    return m;
}

std::span<const double> VaeModel::param(const std::string &name) const {
    const auto &s = find_slot(param_slots_, name);
    return std::span<const double>(params_).subspan(s.offset, s.size);
}

std::span<double> VaeModel::param(const std::string &name) {
    const auto &s = find_slot(param_slots_, name);
    return std::span<double>(params_).subspan(s.offset, s.size);
}

std::span<const double> VaeModel::buffer(const std::string &name) const {
    const auto &s = find_slot(buffer_slots_, name);
    return std::span<const double>(buffers_).subspan(s.offset, s.size);
}

std::span<double> VaeModel::buffer(const std::string &name) {
    const auto &s = find_slot(buffer_slots_, name);
    return std::span<double>(buffers_).subspan(s.offset, s.size);
}

bool VaeModel::all_finite() const { return kernels::all_finite(params_) && kernels::all_finite(buffers_); }

// ---------------------------------------------------------------------------
// Network evaluation

namespace {

struct NormLayer {
    bool present = false;
    std::size_t gamma = 0, beta = 0; // param offsets
    std::size_t mean = 0, var = 0;   // buffer offsets
};

struct ConvLayer {
    std::size_t weight = 0, bias = 0;
    std::size_t c_in = 0, c_out = 0; // forward-conv sense: fine -> coarse channels
    kernels::ConvGeom geom;
    NormLayer norm;
};

struct Net {
    const VaeModel &m;
    const Architecture &a;
    std::size_t L, lat, F, N;
    std::vector<ConvLayer> enc, dec;
    std::size_t enc_w, enc_b, dec_w, dec_b;

    explicit Net(const VaeModel &model)
        : m(model), a(model.arch()), L(a.levels()), lat(a.latent_dim), F(a.flat_features()), N(a.voxels()) {
        const auto geoms = a.geometries();
        auto off = [&](const std::string &n) { return find_slot(m.param_slots(), n).offset; };
        auto boff = [&](const std::string &n) { return find_slot(m.buffer_slots(), n).offset; };
        for (std::size_t i = 0; i < L; ++i) {
            ConvLayer c;
            const std::string p = "enc.conv" + std::to_string(i);
            c.weight = off(p + ".weight");
            c.bias = off(p + ".bias");
            c.c_in = a.channels_at(i);
            c.c_out = a.channels_at(i + 1);
            c.geom = geoms[i];
            if (has_norm(a)) {
                const std::string n = "enc.norm" + std::to_string(i);
                c.norm = {true, off(n + ".gamma"), off(n + ".beta"), boff(n + ".mean"), boff(n + ".var")};
            }
            enc.push_back(c);
        }
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t i = L - 1 - j;
            ConvLayer c;
            const std::string p = "dec.deconv" + std::to_string(j);
            c.weight = off(p + ".weight");
            c.bias = off(p + ".bias");
            c.c_in = a.channels_at(i);
            c.c_out = a.channels_at(i + 1);
            c.geom = geoms[i];
            if (has_norm(a) && j + 1 < L) {
                const std::string n = "dec.norm" + std::to_string(j);
                c.norm = {true, off(n + ".gamma"), off(n + ".beta"), boff(n + ".mean"), boff(n + ".var")};
            }
            dec.push_back(c);
        }
        enc_w = off("enc.dense.weight");
        enc_b = off("enc.dense.bias");
        dec_w = off("dec.dense.weight");
        dec_b = off("dec.dense.bias");
    }

    std::span<const double> P(std::size_t offset, std::size_t n) const { return m.params().subspan(offset, n); }
};

struct NormCache {
    std::vector<double> mean, inv_std;
};

struct Cache {
    std::size_t B = 0;
    std::vector<std::vector<double>> enc_act; // L+1; [0] = input batch
    std::vector<std::vector<double>> enc_xhat, enc_u;
    std::vector<NormCache> enc_stats;
    std::vector<double> h, z, noise;
    std::vector<double> dec_pre;
    std::vector<std::vector<double>> dec_act; // L; [j] = input of deconv j
    std::vector<std::vector<double>> dec_xhat, dec_u;
    std::vector<NormCache> dec_stats;
    std::vector<double> out_pre, out;
    std::vector<double> buffers; // updated statistics
};

bool batch_coupled(const Architecture &a, Pass pass) {
    return (pass == Pass::training && a.norm == NormKind::batch) || (pass == Pass::calibrate && has_norm(a));
}

// z [B, C, P] -> xhat, u (= gamma * xhat + beta). Statistics per channel.
void norm_forward(const Net &net, const NormLayer &nl, Pass pass, std::size_t B, std::size_t C, std::size_t P,
                  const std::vector<double> &z, std::vector<double> &xhat, std::vector<double> &u, NormCache &st,
                  std::vector<double> &buffers) {
    u.resize(z.size());
    if (!nl.present) {
        u = z;
        return;
    }
    xhat.resize(z.size());
    st.mean.assign(C, 0.0);
    st.inv_std.assign(C, 0.0);
    const auto gamma = net.P(nl.gamma, C);
    const auto beta = net.P(nl.beta, C);

    if (batch_coupled(net.a, pass)) {
        const double count = static_cast<double>(B * P);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t p = 0; p < P; ++p)
                    s += z[(b * C + c) * P + p];
            const double mean = s / count;
            double ss = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t p = 0; p < P; ++p) {
                    const double d = z[(b * C + c) * P + p] - mean;
                    ss += d * d;
                }
            const double var = ss / count;
            st.mean[c] = mean;
            st.inv_std[c] = 1.0 / std::sqrt(var + kNormEps);
            if (pass == Pass::calibrate) {
                buffers[nl.mean + c] = mean;
                buffers[nl.var + c] = var;
            } else {
                const double unbiased = count > 1 ? ss / (count - 1) : var;
                buffers[nl.mean + c] = (1 - kRunningMomentum) * buffers[nl.mean + c] + kRunningMomentum * mean;
                buffers[nl.var + c] = (1 - kRunningMomentum) * buffers[nl.var + c] + kRunningMomentum * unbiased;
            }
        }
    } else {
        const auto bufs = net.m.buffers();
        for (std::size_t c = 0; c < C; ++c) {
            st.mean[c] = bufs[nl.mean + c];
            st.inv_std[c] = 1.0 / std::sqrt(bufs[nl.var + c] + kNormEps);
        }
    }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * P;
            for (std::size_t p = 0; p < P; ++p) {
                const double xh = (z[base + p] - st.mean[c]) * st.inv_std[c];
                xhat[base + p] = xh;
                u[base + p] = gamma[c] * xh + beta[c];
            }
        }
}

// du -> dz, accumulating dgamma/dbeta into grad.
void norm_backward(const Net &net, const NormLayer &nl, Pass pass, std::size_t B, std::size_t C, std::size_t P,
                   const std::vector<double> &xhat, const NormCache &st, std::vector<double> &d,
                   std::vector<double> &grad) {
    if (!nl.present)
        return;
    const auto gamma = net.P(nl.gamma, C);
    const bool coupled = batch_coupled(net.a, pass);
    const double count = static_cast<double>(B * P);
    for (std::size_t c = 0; c < C; ++c) {
        double sum_du = 0.0, sum_du_xh = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * P;
            for (std::size_t p = 0; p < P; ++p) {
                sum_du += d[base + p];
                sum_du_xh += d[base + p] * xhat[base + p];
            }
        }
        grad[nl.gamma + c] += sum_du_xh;
        grad[nl.beta + c] += sum_du;
        const double g = gamma[c] * st.inv_std[c];
        if (coupled) {
            const double mean_du = sum_du / count;
            const double mean_du_xh = sum_du_xh / count;
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t base = (b * C + c) * P;
                for (std::size_t p = 0; p < P; ++p)
                    d[base + p] = g * (d[base + p] - mean_du - xhat[base + p] * mean_du_xh);
            }
        } else {
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t base = (b * C + c) * P;
                for (std::size_t p = 0; p < P; ++p)
                    d[base + p] *= g;
            }
        }
    }
}

void leaky_forward(const std::vector<double> &u, std::vector<double> &a, double slope) {
    a.resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        a[i] = u[i] > 0.0 ? u[i] : slope * u[i];
}

void leaky_backward(const std::vector<double> &u, std::vector<double> &d, double slope) {
    for (std::size_t i = 0; i < u.size(); ++i)
        if (!(u[i] > 0.0))
            d[i] *= slope;
}

double sigmoid(double x) {
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_finite(const std::vector<double> &v, const char *where) {
    if (!kernels::all_finite(v))
        throw NumericalError(std::string("non-finite activation in ") + where);
}

void run_encoder(const Net &net, Cache &c, Pass pass) {
    const std::size_t B = c.B;
    std::vector<double> col;
    c.enc_act.resize(net.L + 1);
    c.enc_xhat.resize(net.L);
    c.enc_u.resize(net.L);
    c.enc_stats.resize(net.L);
    for (std::size_t i = 0; i < net.L; ++i) {
        const ConvLayer &cl = net.enc[i];
        const std::size_t Pin = cl.geom.in.count(), Pout = cl.geom.out.count();
        std::vector<double> z(B * cl.c_out * Pout);
        for (std::size_t b = 0; b < B; ++b)
            kernels::conv3d_forward(std::span<const double>(c.enc_act[i]).subspan(b * cl.c_in * Pin, cl.c_in * Pin),
                                    cl.c_in, cl.c_out, cl.geom, net.P(cl.weight, cl.c_out * cl.c_in * cl.geom.taps()),
                                    net.P(cl.bias, cl.c_out),
                                    std::span<double>(z).subspan(b * cl.c_out * Pout, cl.c_out * Pout), col);
        norm_forward(net, cl.norm, pass, B, cl.c_out, Pout, z, c.enc_xhat[i], c.enc_u[i], c.enc_stats[i], c.buffers);
        leaky_forward(c.enc_u[i], c.enc_act[i + 1], net.a.leaky_slope);
    }
    const std::size_t H = 2 * net.lat;
    c.h.assign(B * H, 0.0);
    kernels::gemm_nt(B, H, net.F, c.enc_act[net.L], net.P(net.enc_w, H * net.F), c.h);
    const auto bias = net.P(net.enc_b, H);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < H; ++k)
            c.h[b * H + k] += bias[k];
    check_finite(c.h, "encoder");
}

void run_decoder(const Net &net, Cache &c, Pass pass) {
    const std::size_t B = c.B;
    std::vector<double> col;
    c.dec_pre.assign(B * net.F, 0.0);
    kernels::gemm_nt(B, net.F, net.lat, c.z, net.P(net.dec_w, net.F * net.lat), c.dec_pre);
    const auto bias = net.P(net.dec_b, net.F);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < net.F; ++k)
            c.dec_pre[b * net.F + k] += bias[k];

    if (net.L == 0) {
        c.out_pre = c.dec_pre;
    } else {
        c.dec_act.resize(net.L);
        c.dec_xhat.resize(net.L);
        c.dec_u.resize(net.L);
        c.dec_stats.resize(net.L);
        leaky_forward(c.dec_pre, c.dec_act[0], net.a.leaky_slope);
        for (std::size_t j = 0; j < net.L; ++j) {
            const ConvLayer &cl = net.dec[j];
            const std::size_t Pc = cl.geom.out.count(), Pf = cl.geom.in.count();
            std::vector<double> z(B * cl.c_in * Pf);
            for (std::size_t b = 0; b < B; ++b)
                kernels::conv3d_transpose_forward(
                    std::span<const double>(c.dec_act[j]).subspan(b * cl.c_out * Pc, cl.c_out * Pc), cl.c_out,
                    cl.c_in, cl.geom, net.P(cl.weight, cl.c_out * cl.c_in * cl.geom.taps()), net.P(cl.bias, cl.c_in),
                    std::span<double>(z).subspan(b * cl.c_in * Pf, cl.c_in * Pf), col);
            if (j + 1 < net.L) {
                norm_forward(net, cl.norm, pass, B, cl.c_in, Pf, z, c.dec_xhat[j], c.dec_u[j], c.dec_stats[j],
                             c.buffers);
                leaky_forward(c.dec_u[j], c.dec_act[j + 1], net.a.leaky_slope);
            } else {
                c.out_pre = std::move(z);
            }
        }
    }
    c.out.resize(c.out_pre.size());
    if (net.a.output == OutputActivation::sigmoid)
        for (std::size_t i = 0; i < c.out.size(); ++i)
            c.out[i] = sigmoid(c.out_pre[i]);
    else
        c.out = c.out_pre;
    check_finite(c.out, "decoder");
}

Cache start(const Net &net, std::span<const Volume *const> batch) {
    if (batch.empty())
        throw std::invalid_argument("batch must not be empty");
    Cache c;
    c.B = batch.size();
    c.buffers.assign(net.m.buffers().begin(), net.m.buffers().end());
    c.enc_act.resize(net.L + 1);
    c.enc_act[0].resize(c.B * net.N);
    for (std::size_t b = 0; b < c.B; ++b) {
        if (batch[b]->dims() != net.a.input_dims)
            throw std::invalid_argument("input dims " + batch[b]->dims().str() + " do not match model dims " +
                                        net.a.input_dims.str());
        std::copy(batch[b]->data().begin(), batch[b]->data().end(), c.enc_act[0].begin() + static_cast<std::ptrdiff_t>(b * net.N));
    }
    return c;
}

void sample_latent(const Net &net, Cache &c, std::span<const double> noise) {
    const std::size_t B = c.B, lat = net.lat;
    if (!noise.empty() && noise.size() != B * lat)
        throw std::invalid_argument("noise must have batch * latent_dim entries");
    c.noise.assign(noise.begin(), noise.end());
    c.z.resize(B * lat);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < lat; ++k) {
            const double mu = c.h[b * 2 * lat + k];
            const double lv = c.h[b * 2 * lat + lat + k];
            c.z[b * lat + k] = noise.empty() ? mu : mu + std::exp(0.5 * lv) * noise[b * lat + k];
        }
    check_finite(c.z, "latent sample");
}

BatchResult loss_terms(const Net &net, const Cache &c, double kl_weight) {
    BatchResult r;
    const std::size_t B = c.B, lat = net.lat;
    r.sample_kl.resize(B);
    double recon = 0.0, kl = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t v = 0; v < net.N; ++v) {
            const double d = c.enc_act[0][b * net.N + v] - c.out[b * net.N + v];
            s += d * d;
        }
        recon += s;
        const std::span<const double> h(c.h.data() + b * 2 * lat, 2 * lat);
        r.sample_kl[b] = kl_divergence(h.subspan(0, lat), h.subspan(lat, lat));
        kl += r.sample_kl[b];
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    r.loss = {(recon + kl_weight * kl) * inv_b, recon * inv_b, kl * inv_b};
    if (!std::isfinite(r.loss.total))
        throw NumericalError("ELBO is not finite");
    return r;
}

} // namespace

double kl_divergence(std::span<const double> mu, std::span<const double> logvar) {
    if (mu.size() != logvar.size())
        throw std::invalid_argument("mu and logvar lengths differ");
    double kl = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j)
        kl += mu[j] * mu[j] + std::max(0.0, std::expm1(logvar[j]) - logvar[j]);
    return 0.5 * kl;
}

Latent encode(const VaeModel &m, const Volume &x) {
    const Net net(m);
    const Volume *ptr = &x;
    Cache c = start(net, std::span<const Volume *const>(&ptr, 1));
    run_encoder(net, c, Pass::inference);
    Latent l;
    l.mu.assign(c.h.begin(), c.h.begin() + static_cast<std::ptrdiff_t>(net.lat));
    l.logvar.assign(c.h.begin() + static_cast<std::ptrdiff_t>(net.lat), c.h.end());
    return l;
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> noise) {
    if (mu.size() != logvar.size() || mu.size() != noise.size())
        throw std::invalid_argument("reparameterize: mu, logvar and noise must have equal lengths");
    std::vector<double> z(mu.size());
    for (std::size_t j = 0; j < z.size(); ++j)
        z[j] = mu[j] + std::exp(0.5 * logvar[j]) * noise[j];
    return z;
}

Volume decode(const VaeModel &m, std::span<const double> z, Spacing spacing) {
    const Net net(m);
    if (z.size() != net.lat)
        throw std::invalid_argument("latent vector length " + std::to_string(z.size()) + " != latent_dim " +
                                    std::to_string(net.lat));
    Cache c;
    c.B = 1;
    c.buffers.assign(m.buffers().begin(), m.buffers().end());
    c.z.assign(z.begin(), z.end());
    run_decoder(net, c, Pass::inference);
    return Volume(net.a.input_dims, spacing, std::move(c.out));
}

Volume reconstruct(const VaeModel &m, const Volume &x) {
    const Latent l = encode(m, x);
    return decode(m, l.mu, x.spacing());
}

LossTerms elbo_loss(const Volume &x, const Volume &x_hat, std::span<const double> mu, std::span<const double> logvar,
                    double kl_weight) {
    require_same_dims(x, x_hat, "elbo_loss");
    double recon = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - x_hat[i];
        recon += d * d;
    }
    const double kl = kl_divergence(mu, logvar);
    LossTerms t{recon + kl_weight * kl, recon, kl};
    if (!std::isfinite(t.total))
        throw NumericalError("ELBO is not finite");
    return t;
}

BatchResult forward_loss(const VaeModel &m, std::span<const Volume *const> batch, double kl_weight,
                         std::span<const double> noise, Pass pass) {
    const Net net(m);
    Cache c = start(net, batch);
    run_encoder(net, c, pass);
    sample_latent(net, c, noise);
    run_decoder(net, c, pass);
    BatchResult r = loss_terms(net, c, kl_weight);
    r.new_buffers = std::move(c.buffers);
    return r;
}

BatchResult backward(const VaeModel &m, std::span<const Volume *const> batch, double kl_weight,
                     std::span<const double> noise, Pass pass) {
    const Net net(m);
    Cache c = start(net, batch);
    run_encoder(net, c, pass);
    sample_latent(net, c, noise);
    run_decoder(net, c, pass);
    BatchResult r = loss_terms(net, c, kl_weight);

    const std::size_t B = c.B, lat = net.lat, N = net.N, F = net.F;
    const double inv_b = 1.0 / static_cast<double>(B);
    const double slope = net.a.leaky_slope;
    std::vector<double> grad(m.params().size(), 0.0);
    std::vector<double> col, dcol;

    // d loss / d output (after activation), then through the activation.
    std::vector<double> d(B * N);
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = 2.0 * (c.out[i] - c.enc_act[0][i]) * inv_b;
        if (net.a.output == OutputActivation::sigmoid)
            d[i] *= c.out[i] * (1.0 - c.out[i]);
    }

    // Decoder transposed convolutions, last to first.
    for (std::size_t jj = net.L; jj-- > 0;) {
        const ConvLayer &cl = net.dec[jj];
        const std::size_t Pc = cl.geom.out.count(), Pf = cl.geom.in.count(), taps = cl.geom.taps();
        if (jj + 1 < net.L) {
            leaky_backward(c.dec_u[jj], d, slope);
            norm_backward(net, cl.norm, pass, B, cl.c_in, Pf, c.dec_xhat[jj], c.dec_stats[jj], d, grad);
        }
        const auto W = net.P(cl.weight, cl.c_out * cl.c_in * taps);
        std::span<double> dW(grad.data() + cl.weight, cl.c_out * cl.c_in * taps);
        std::vector<double> din(B * cl.c_out * Pc);
        dcol.resize(cl.c_in * taps * Pc);
        for (std::size_t b = 0; b < B; ++b) {
            const std::span<const double> dout(d.data() + b * cl.c_in * Pf, cl.c_in * Pf);
            for (std::size_t ch = 0; ch < cl.c_in; ++ch) {
                double s = 0.0;
                for (std::size_t p = 0; p < Pf; ++p)
                    s += dout[ch * Pf + p];
                grad[cl.bias + ch] += s;
            }
            kernels::im2col(dout, cl.c_in, cl.geom, dcol);
            const std::span<const double> in(c.dec_act[jj].data() + b * cl.c_out * Pc, cl.c_out * Pc);
            kernels::gemm_nt(cl.c_out, cl.c_in * taps, Pc, in, dcol, dW, true);
            kernels::gemm_nn(cl.c_out, Pc, cl.c_in * taps, W, dcol,
                             std::span<double>(din.data() + b * cl.c_out * Pc, cl.c_out * Pc));
        }
        d = std::move(din);
    }
    if (net.L > 0)
        leaky_backward(c.dec_pre, d, slope);

    // Decoder dense: dec_pre = z W^T + b, W [F, lat].
    kernels::gemm_tn(F, lat, B, d, c.z, std::span<double>(grad.data() + net.dec_w, F * lat), true);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < F; ++k)
            grad[net.dec_b + k] += d[b * F + k];
    std::vector<double> dz(B * lat);
    kernels::gemm_nn(B, lat, F, d, net.P(net.dec_w, F * lat), dz);

    // Reparameterisation and KL.
    const std::size_t H = 2 * lat;
    std::vector<double> dh(B * H);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < lat; ++k) {
            const double mu = c.h[b * H + k];
            const double lv = c.h[b * H + lat + k];
            double dmu = dz[b * lat + k] + kl_weight * inv_b * mu;
            double dlv = kl_weight * inv_b * 0.5 * std::expm1(lv);
            if (!c.noise.empty())
                dlv += dz[b * lat + k] * c.noise[b * lat + k] * 0.5 * std::exp(0.5 * lv);
            dh[b * H + k] = dmu;
            dh[b * H + lat + k] = dlv;
        }

    // Encoder dense: h = act W^T + b, W [H, F].
    kernels::gemm_tn(H, F, B, dh, c.enc_act[net.L], std::span<double>(grad.data() + net.enc_w, H * F), true);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < H; ++k)
            grad[net.enc_b + k] += dh[b * H + k];
    if (net.L > 0) {
        d.assign(B * F, 0.0);
        kernels::gemm_nn(B, F, H, dh, net.P(net.enc_w, H * F), d);
    }

    // Encoder convolutions, last to first.
    for (std::size_t i = net.L; i-- > 0;) {
        const ConvLayer &cl = net.enc[i];
        const std::size_t Pin = cl.geom.in.count(), Pout = cl.geom.out.count(), taps = cl.geom.taps();
        leaky_backward(c.enc_u[i], d, slope);
        norm_backward(net, cl.norm, pass, B, cl.c_out, Pout, c.enc_xhat[i], c.enc_stats[i], d, grad);
        const auto W = net.P(cl.weight, cl.c_out * cl.c_in * taps);
        std::span<double> dW(grad.data() + cl.weight, cl.c_out * cl.c_in * taps);
        std::vector<double> din(i > 0 ? B * cl.c_in * Pin : 0);
        col.resize(cl.c_in * taps * Pout);
        dcol.resize(cl.c_in * taps * Pout);
        for (std::size_t b = 0; b < B; ++b) {
            const std::span<const double> dout(d.data() + b * cl.c_out * Pout, cl.c_out * Pout);
            for (std::size_t ch = 0; ch < cl.c_out; ++ch) {
                double s = 0.0;
                for (std::size_t p = 0; p < Pout; ++p)
                    s += dout[ch * Pout + p];
                grad[cl.bias + ch] += s;
            }
            kernels::im2col(std::span<const double>(c.enc_act[i].data() + b * cl.c_in * Pin, cl.c_in * Pin), cl.c_in,
                            cl.geom, col);
            kernels::gemm_nt(cl.c_out, cl.c_in * taps, Pout, dout, col, dW, true);
            if (i > 0) {
                kernels::gemm_tn(cl.c_in * taps, Pout, cl.c_out, W, dout, dcol);
                kernels::col2im(dcol, cl.c_in, cl.geom,
                                std::span<double>(din.data() + b * cl.c_in * Pin, cl.c_in * Pin));
            }
        }
        d = std::move(din);
    }

    if (!kernels::all_finite(grad))
        throw NumericalError("non-finite gradient");
    r.grad = std::move(grad);
    r.new_buffers = std::move(c.buffers);
    return r;
}

void calibrate_norm(VaeModel &m, std::span<const Volume *const> batch) {
    if (m.arch().norm == NormKind::none)
        return;
    BatchResult r = forward_loss(m, batch, 0.0, {}, Pass::calibrate);
    std::copy(r.new_buffers.begin(), r.new_buffers.end(), m.buffers().begin());
}

} // namespace uad::vae

#include "uad/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uad/error.hpp"
#include "uad/kernels.hpp"

namespace uad {

std::string Dims::str() const {
    return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nz) + ")";
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0)
        throw std::invalid_argument("volume dims must be positive, got " + dims_.str());
    if (!(spacing_.sx > 0.0 && spacing_.sy > 0.0 && spacing_.sz > 0.0) ||
        !std::isfinite(spacing_.sx) || !std::isfinite(spacing_.sy) || !std::isfinite(spacing_.sz))
        throw std::invalid_argument("volume spacing must be finite and strictly positive");
    if (data_.size() != dims_.count())
        throw std::invalid_argument("volume data length " + std::to_string(data_.size()) +
                                    " does not match dims " + dims_.str());
    if (!kernels::all_finite(data_))
        throw NumericalError("volume contains non-finite values");
}

double Volume::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Volume::max() const { return *std::max_element(data_.begin(), data_.end()); }

double Volume::mean() const {
    double s = 0.0;
    for (double v : data_)
        s += v;
    return s / static_cast<double>(data_.size());
}

Volume make_volume(Dims dims, Spacing spacing, double fill) {
    if (!std::isfinite(fill))
        throw std::invalid_argument("fill value must be finite");
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
        throw std::invalid_argument("volume dims must be positive, got " + dims.str());
    return Volume(dims, spacing, std::vector<double>(dims.count(), fill));
}

void require_same_dims(const Volume &a, const Volume &b, const char *what) {
    if (a.dims() != b.dims())
        throw std::invalid_argument(std::string(what) + ": dimension mismatch " + a.dims().str() +
                                    " vs " + b.dims().str());
}

Volume map2(const Volume &a, const Volume &b, BinaryOp op) {
    require_same_dims(a, b, "map2");
    if (op.kind == BinaryOpKind::div_guarded && !(op.eps > 0.0))
        throw std::invalid_argument("div_guarded requires eps > 0");
    std::vector<double> out(a.size());
    kernels::elementwise(a.data(), b.data(), out, op);
    if (!kernels::all_finite(out))
        throw NumericalError("map2 produced a non-finite value (overflow)");
    return a.with_data(std::move(out));
}

Volume operator+(const Volume &a, const Volume &b) { return map2(a, b, BinaryOp::add()); }
Volume operator-(const Volume &a, const Volume &b) { return map2(a, b, BinaryOp::sub()); }

Volume scale(const Volume &v, double factor) {
    std::vector<double> out(v.data().begin(), v.data().end());
    for (double &x : out)
        x *= factor;
    if (!kernels::all_finite(out))
        throw NumericalError("scale produced a non-finite value");
    return v.with_data(std::move(out));
}

Volume abs(const Volume &v) {
    std::vector<double> out(v.data().begin(), v.data().end());
    for (double &x : out)
        x = std::fabs(x);
    return v.with_data(std::move(out));
}

Volume minmax_normalise(const Volume &v) {
    const double lo = v.min();
    const double hi = v.max();
    if (!(hi > lo))
        throw std::invalid_argument("cannot min-max normalise a constant volume");
    const double range = hi - lo;
    std::vector<double> out(v.size());
    auto in = v.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp((in[i] - lo) / range, 0.0, 1.0);
    return v.with_data(std::move(out));
}

const char *plane_name(Plane p) {
    switch (p) {
    case Plane::axial:
        return "axial";
    case Plane::coronal:
        return "coronal";
    case Plane::sagittal:
        return "sagittal";
    }
    return "?";
}

SliceImage extract_slice(const Volume &v, Plane plane, std::size_t index) {
    const Dims &d = v.dims();
    SliceImage s;
    s.plane = plane;
    s.index = index;
    switch (plane) {
    case Plane::axial:
        if (index >= d.nz)
            throw std::out_of_range("axial slice index out of range");
        s.width = d.nx;
        s.height = d.ny;
        s.pixels.resize(s.width * s.height);
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x)
                s.pixels[x + d.nx * y] = v(x, y, index);
        break;
    case Plane::coronal:
        if (index >= d.ny)
            throw std::out_of_range("coronal slice index out of range");
        s.width = d.nx;
        s.height = d.nz;
        s.pixels.resize(s.width * s.height);
        for (std::size_t z = 0; z < d.nz; ++z)
            for (std::size_t x = 0; x < d.nx; ++x)
                s.pixels[x + d.nx * z] = v(x, index, z);
        break;
    case Plane::sagittal:
        if (index >= d.nx)
            throw std::out_of_range("sagittal slice index out of range");
        s.width = d.ny;
        s.height = d.nz;
        s.pixels.resize(s.width * s.height);
        for (std::size_t z = 0; z < d.nz; ++z)
            for (std::size_t y = 0; y < d.ny; ++y)
                s.pixels[y + d.ny * z] = v(index, y, z);
        break;
    }
    return s;
}

std::array<SliceImage, 3> central_slices(const Volume &v) {
    const Dims &d = v.dims();
    return {extract_slice(v, Plane::axial, d.nz / 2), extract_slice(v, Plane::coronal, d.ny / 2),
            extract_slice(v, Plane::sagittal, d.nx / 2)};
}

} // namespace uad

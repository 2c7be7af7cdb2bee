#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace uad {

struct Dims {
    std::size_t nx = 0, ny = 0, nz = 0;

    std::size_t count() const { return nx * ny * nz; }
    std::size_t operator[](std::size_t axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    bool operator==(const Dims &) const = default;
    std::string str() const;
};

/// Millimetres per voxel.
struct Spacing {
    double sx = 1.0, sy = 1.0, sz = 1.0;
    bool operator==(const Spacing &) const = default;
};

/// Dense 3D scalar field, x-fastest storage: index = x + nx * (y + ny * z).
///
/// Immutable once built. Every constructor path checks the invariants
/// (positive dims and spacing, data length, all values finite), so any Volume
/// in hand is valid.
class Volume {
  public:
    Volume(Dims dims, Spacing spacing, std::vector<double> data);

    const Dims &dims() const { return dims_; }
    const Spacing &spacing() const { return spacing_; }
    std::span<const double> data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims_.nx * (y + dims_.ny * z);
    }
    double operator()(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same geometry, new payload.
    Volume with_data(std::vector<double> data) const { return Volume(dims_, spacing_, std::move(data)); }

    bool same_geometry(const Volume &other) const { return dims_ == other.dims_; }

    double min() const;
    double max() const;
    double mean() const;

  private:
    Dims dims_;
    Spacing spacing_;
    std::vector<double> data_;
};

/// Volume with every voxel set to `fill`.
Volume make_volume(Dims dims, Spacing spacing, double fill);

enum class BinaryOpKind { add, sub, mul, div_guarded };

struct BinaryOp {
    BinaryOpKind kind = BinaryOpKind::add;
    double eps = 1e-6; // only read by div_guarded

    static BinaryOp add() { return {BinaryOpKind::add, 0.0}; }
    static BinaryOp sub() { return {BinaryOpKind::sub, 0.0}; }
    static BinaryOp mul() { return {BinaryOpKind::mul, 0.0}; }
    static BinaryOp div_guarded(double eps = 1e-6) { return {BinaryOpKind::div_guarded, eps}; }
};

/// Elementwise a (op) b. div_guarded divides by sign(b) * max(|b|, eps).
/// Throws std::invalid_argument on geometry mismatch, NumericalError on overflow.
Volume map2(const Volume &a, const Volume &b, BinaryOp op);

Volume operator+(const Volume &a, const Volume &b);
Volume operator-(const Volume &a, const Volume &b);

Volume scale(const Volume &v, double factor);
Volume abs(const Volume &v);

/// Affine rescale onto [0, 1]. Rejects constant volumes.
Volume minmax_normalise(const Volume &v);

void require_same_dims(const Volume &a, const Volume &b, const char *what);

enum class Plane { axial, coronal, sagittal };

const char *plane_name(Plane p);

/// One 2D cut through a volume, row-major with `width` pixels per row.
///   axial:    z fixed, width nx, height ny
///   coronal:  y fixed, width nx, height nz
///   sagittal: x fixed, width ny, height nz
struct SliceImage {
    Plane plane = Plane::axial;
    std::size_t index = 0;
    std::size_t width = 0, height = 0;
    std::vector<double> pixels;

    double operator()(std::size_t col, std::size_t row) const { return pixels[col + width * row]; }
};

SliceImage extract_slice(const Volume &v, Plane plane, std::size_t index);

/// Axial, coronal and sagittal slices at floor(dim / 2).
std::array<SliceImage, 3> central_slices(const Volume &v);

} // namespace uad

#pragma once

// Transverse-plane discretization, complex fields and the continuous Fourier
// convention  U^(k) = \int U(x) exp(-i k.x) dx,  U(x) = (2 pi)^-d \int U^(k) exp(i k.x) dk.
//
// Storage is row-major and "centered": node i of an axis sits at x = (i - n/2) dx,
// and a spectral array returned by forward_transform holds k = (i - n/2) dk at node i.
// Internal propagation code works in FFT-native order instead (see fft.hpp).

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "speckle/error.hpp"
#include "speckle/fft.hpp"

namespace speckle {

using cplx = std::complex<double>;

struct TransverseGrid {
    int dim = 1;
    int n = 0;
    double dx = 0.0;

    static TransverseGrid make(int dim, int n, double dx) {
        TransverseGrid g{dim, n, dx};
        g.validate();
        return g;
    }

    void validate() const {
        if (dim != 1 && dim != 2) throw ConfigError("grid: dim must be 1 or 2");
        if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("grid: n must be a power of two >= 8");
        if (!(dx > 0.0) || !std::isfinite(dx)) throw ConfigError("grid: dx must be positive");
    }

    [[nodiscard]] std::size_t size() const {
        return dim == 1 ? static_cast<std::size_t>(n) : static_cast<std::size_t>(n) * n;
    }
    [[nodiscard]] double length() const { return n * dx; }
    [[nodiscard]] double dk() const { return 2.0 * std::numbers::pi / (n * dx); }
    [[nodiscard]] double cell_volume() const { return dim == 1 ? dx : dx * dx; }
    [[nodiscard]] double spectral_cell_volume() const {
        const double w = dk() / (2.0 * std::numbers::pi);
        return dim == 1 ? w : w * w;
    }
    /// Coordinate of centered node i along one axis.
    [[nodiscard]] double coord(int i) const { return (i - n / 2) * dx; }
    /// Wavenumber of centered spectral node i along one axis.
    [[nodiscard]] double centered_wavenumber(int i) const { return (i - n / 2) * dk(); }
    /// Wavenumber of FFT-native index i along one axis.
    [[nodiscard]] double native_wavenumber(int i) const { return (i < n / 2 ? i : i - n) * dk(); }
    /// |k|^2 for FFT-native flat index.
    [[nodiscard]] double native_k2(std::size_t flat) const {
        if (dim == 1) {
            const double k = native_wavenumber(static_cast<int>(flat));
            return k * k;
        }
        const double ky = native_wavenumber(static_cast<int>(flat / n));
        const double kx = native_wavenumber(static_cast<int>(flat % n));
        return kx * kx + ky * ky;
    }
    /// Squared distance from the origin of centered flat index.
    [[nodiscard]] double r2(std::size_t flat) const {
        if (dim == 1) {
            const double x = coord(static_cast<int>(flat));
            return x * x;
        }
        const double y = coord(static_cast<int>(flat / n));
        const double x = coord(static_cast<int>(flat % n));
        return x * x + y * y;
    }
    [[nodiscard]] FftShape fft_shape() const { return dim == 1 ? FftShape{n, 0} : FftShape{n, n}; }

    friend bool operator==(const TransverseGrid&, const TransverseGrid&) = default;
};

struct ComplexField {
    TransverseGrid grid;
    std::vector<cplx> values;

    ComplexField() = default;
    explicit ComplexField(const TransverseGrid& g) : grid(g), values(g.size(), cplx{0.0, 0.0}) {}
    ComplexField(const TransverseGrid& g, std::vector<cplx> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.size()) throw PreconditionError("field: value count does not match grid");
    }

    /// Samples f(x) (d=1) or f(x, y) (d=2) at the centered nodes.
    template <class F>
    static ComplexField sample(const TransverseGrid& g, F&& f) {
        ComplexField out(g);
        if (g.dim == 1) {
            for (int i = 0; i < g.n; ++i) out.values[i] = f(g.coord(i), 0.0);
        } else {
            for (int j = 0; j < g.n; ++j)
                for (int i = 0; i < g.n; ++i)
                    out.values[static_cast<std::size_t>(j) * g.n + i] = f(g.coord(i), g.coord(j));
        }
        return out;
    }
};

/// Real scalar samples on a grid (intensities, Brownian increments).
struct RealField {
    TransverseGrid grid;
    std::vector<double> values;

    RealField() = default;
    explicit RealField(const TransverseGrid& g) : grid(g), values(g.size(), 0.0) {}
    RealField(const TransverseGrid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.size()) throw PreconditionError("field: value count does not match grid");
    }
};

namespace detail {

/// Swap halves along every axis (fftshift == ifftshift for even n).
template <class T>
void half_shift(const TransverseGrid& g, std::span<T> v) {
    const int n = g.n;
    const int h = n / 2;
    if (g.dim == 1) {
        for (int i = 0; i < h; ++i) std::swap(v[i], v[i + h]);
        return;
    }
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < h; ++i) std::swap(v[static_cast<std::size_t>(j) * n + i], v[static_cast<std::size_t>(j) * n + i + h]);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < n; ++i)
            std::swap(v[static_cast<std::size_t>(j) * n + i], v[static_cast<std::size_t>(j + h) * n + i]);
}

}  // namespace detail

/// Continuous-convention forward transform; spectral samples in centered order.
inline ComplexField forward_transform(const ComplexField& f) {
    ComplexField out = f;
    detail::half_shift<cplx>(out.grid, out.values);
    fft_inplace(out.grid.fft_shape(), out.values, FftDirection::forward);
    detail::half_shift<cplx>(out.grid, out.values);
    const double w = out.grid.cell_volume();
    for (auto& v : out.values) v *= w;
    return out;
}

/// Inverse of forward_transform (weights dk^d / (2 pi)^d).
inline ComplexField inverse_transform(const ComplexField& spec) {
    ComplexField out = spec;
    detail::half_shift<cplx>(out.grid, out.values);
    fft_inplace(out.grid.fft_shape(), out.values, FftDirection::backward);
    detail::half_shift<cplx>(out.grid, out.values);
    const double w = out.grid.spectral_cell_volume();
    for (auto& v : out.values) v *= w;
    return out;
}

/// Riemann sum of |U|^2 dx^d.
inline double energy(const ComplexField& f) {
    double s = 0.0;
    for (const auto& v : f.values) s += std::norm(v);
    return s * f.grid.cell_volume();
}

/// Energy of a spectral array: (2 pi)^-d sum |U^|^2 dk^d.
inline double spectral_energy(const ComplexField& spec) {
    double s = 0.0;
    for (const auto& v : spec.values) s += std::norm(v);
    return s * spec.grid.spectral_cell_volume();
}

// ---- raw dumps --------------------------------------------------------------
// One JSON header line, then little-endian IEEE-754 doubles (re, im) row-major.

namespace detail {

inline void write_le_doubles(std::ostream& os, std::span<const double> data) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

}  // namespace detail

inline void write_field_dump(const std::string& path, const ComplexField& f, const std::string& kind,
                             nlohmann::json extra = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    nlohmann::json h = std::move(extra);
    h["dim"] = f.grid.dim;
    h["n"] = f.grid.n;
    h["dx"] = f.grid.dx;
    h["kind"] = kind;
    os << h.dump() << '\n';
    detail::write_le_doubles(
        os, std::span<const double>(reinterpret_cast<const double*>(f.values.data()), f.values.size() * 2));
    if (!os) throw IoError("write failed: " + path);
}

struct FieldDump {
    nlohmann::json header;
    ComplexField field;
};

inline FieldDump read_field_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("missing header line: " + path);
    FieldDump out;
    try {
        out.header = nlohmann::json::parse(line);
        const auto g = TransverseGrid::make(out.header.at("dim").get<int>(), out.header.at("n").get<int>(),
                                            out.header.at("dx").get<double>());
        out.field = ComplexField(g);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dump header in " + path + ": " + e.what());
    }
    auto& v = out.field.values;
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(cplx)));
    if (is.gcount() != static_cast<std::streamsize>(v.size() * sizeof(cplx)))
        throw IoError("truncated dump payload: " + path);
    return out;
}

}  // namespace speckle

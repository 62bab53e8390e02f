#pragma once

// Adaptive Gauss-Kronrod (7/15) quadrature on finite intervals.

#include <array>
#include <cmath>
#include <complex>
#include <sstream>
#include <string>

#include "speckle/error.hpp"

namespace speckle {

template <class T>
struct QuadResult {
    T value{};
    double error = 0.0;
    int evaluations = 0;
    bool converged = true;
};

namespace detail {

inline constexpr std::array<double, 8> kronrod_x = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kronrod_w = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> gauss_w = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline double magnitude(double v) { return std::abs(v); }
inline double magnitude(const std::complex<double>& v) { return std::abs(v); }

template <class T, class F>
void gk15(F& f, double a, double b, T& kron, double& err) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const T fc = f(c);
    T k = fc * kronrod_w[7];
    T g = fc * gauss_w[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = h * kronrod_x[j];
        const T f1 = f(c - dx);
        const T f2 = f(c + dx);
        k += (f1 + f2) * kronrod_w[j];
        if (j % 2 == 1) g += (f1 + f2) * gauss_w[j / 2];
    }
    kron = k * h;
    err = magnitude(k * h - g * h);
}

template <class T, class F>
void adapt(F& f, double a, double b, double tol, int depth, QuadResult<T>& acc) {
    T k{};
    double e = 0.0;
    gk15<T>(f, a, b, k, e);
    acc.evaluations += 15;
    if (e <= tol || depth >= 40 || std::abs(b - a) < 1e-14 * (1.0 + std::abs(a))) {
        if (e > tol) acc.converged = false;
        acc.value += k;
        acc.error += e;
        return;
    }
    const double m = 0.5 * (a + b);
    adapt<T>(f, a, m, 0.5 * tol, depth + 1, acc);
    adapt<T>(f, m, b, 0.5 * tol, depth + 1, acc);
}

}  // namespace detail

/// Integrates f over [a, b] to absolute tolerance `tol`. Non-convergence is
/// reported in the result; use integrate_or_throw to surface it as an error.
template <class T = double, class F>
QuadResult<T> integrate(F&& f, double a, double b, double tol = 1e-10) {
    QuadResult<T> acc;
    if (a == b) return acc;
    detail::adapt<T>(f, a, b, tol, 0, acc);
    return acc;
}

template <class T = double, class F>
T integrate_or_throw(F&& f, double a, double b, double tol, const char* what) {
    auto r = integrate<T>(f, a, b, tol);
    if (!r.converged) {
        std::ostringstream os;
        os << what << ": quadrature did not converge on [" << a << ", " << b << "], estimated error " << r.error
           << " > tolerance " << tol << " after " << r.evaluations << " evaluations";
        throw NumericalError(os.str());
    }
    return r.value;
}

}  // namespace speckle

#pragma once

#include <Eigen/QR>

#include "xsketch/common.hpp"

namespace xsketch {

// Ordinary least squares polynomial fit on normalized abscissae t_c = c/(C-1)
// (t = 0 when C == 1). Effective degree is lowered to C-1 when there are too
// few points. Solved by Householder QR.
struct PolyFit {
    Vec coeffs;       // ascending powers, degree+1 entries
    Vec fitted;       // evaluation at the fit abscissae
    int degree = 0;   // effective degree after lowering

    double eval(double t) const {
        double acc = 0.0, p = 1.0;
        for (int i = 0; i < coeffs.size(); ++i, p *= t) acc += coeffs[i] * p;
        return acc;
    }
};

inline Vec poly_abscissae(int n) {
    Vec t(n);
    for (int i = 0; i < n; ++i) t[i] = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    return t;
}

inline Mat vandermonde(const Vec& t, int degree) {
    Mat v(t.size(), degree + 1);
    for (Eigen::Index r = 0; r < t.size(); ++r) {
        double p = 1.0;
        for (int c = 0; c <= degree; ++c, p *= t[r]) v(r, c) = p;
    }
    return v;
}

inline PolyFit polyfit(const Vec& values, int degree) {
    const int n = static_cast<int>(values.size());
    if (n == 0) throw std::invalid_argument("polyfit: empty input");
    PolyFit out;
    out.degree = std::min(degree, n - 1);
    const Vec t = poly_abscissae(n);
    const Mat v = vandermonde(t, out.degree);
    out.coeffs = v.householderQr().solve(values);
    out.fitted = v * out.coeffs;
    return out;
}

// per-column fit of a C x A matrix; returns fitted values with the same shape
inline Mat polyfit_columns(const Mat& values, int degree, Mat* coeffs = nullptr) {
    Mat fitted(values.rows(), values.cols());
    if (coeffs) coeffs->resize(values.cols(), std::min<int>(degree, static_cast<int>(values.rows()) - 1) + 1);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        PolyFit f = polyfit(values.col(c), degree);
        fitted.col(c) = f.fitted;
        if (coeffs) {
            coeffs->row(c).setZero();
            coeffs->row(c).head(f.coeffs.size()) = f.coeffs.transpose();
        }
    }
    return fitted;
}

}  // namespace xsketch

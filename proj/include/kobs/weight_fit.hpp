#pragma once

#include <optional>
#include <vector>

#include "kobs/lti.hpp"
#include "kobs/uncertainty.hpp"

namespace kobs {

// W(z) = (num[0] + num[1] z^-1 + ...) / (den[0] + den[1] z^-1 + ...), den[0] = 1
struct BoundWeight {
    std::vector<double> num{0.0}, den{1.0};
    double dt = 1.0;
    int order = 0;
    FrequencyGrid grid;            // fit grid
    double max_undershoot = 0.0;   // max_k (b_k - |W_k|), <= 0 after a fit
    double mean_log_overshoot = 0.0;  // mean_k (ln|W_k| - ln max(b_k, eps))
    double max_pole_modulus = 0.0;
    bool warning = false;          // mean overshoot above 40 dB

    cplx eval(double theta) const;
    double magnitude(double theta) const { return std::abs(eval(theta)); }
    std::vector<double> magnitude(const FrequencyGrid& g) const;
    // controllable canonical form
    StateSpace state_space() const;
};

struct FitOptions {
    double eps = 1e-8;
    double stability_radius = 1 - 1e-6;
    // Optional soft ceiling on |W| over the grid and at and below its lowest
    // frequency. Only bites where the fit would otherwise exceed it.
    std::optional<double> cap;
    std::vector<double> penalties{0, 1e1, 1e2, 1e3, 1e4, 1e5};
    int max_fev = 5000;
};

// Fits orders 0..order in turn; each order also starts from the previous
// solution, so raising the order never worsens the mean log-overshoot.
BoundWeight fit_bound(const std::vector<double>& b, const FrequencyGrid& grid, int order, double dt = 1.0,
                      const FitOptions& opt = {});

// single local search from `init` (or the spread initialization when null)
BoundWeight fit_bound_from(const std::vector<double>& b, const FrequencyGrid& grid, int order, double dt,
                           const FitOptions& opt, const BoundWeight* init);

using WeightMatrix = std::vector<std::vector<BoundWeight>>;  // [i][j]

WeightMatrix fit_bound_matrix(const ResidualSet& rs, const std::vector<std::vector<int>>& orders, double dt = 1.0,
                              const FitOptions& opt = {});

// |W_ij| per grid point
std::vector<Mat> weight_magnitudes(const WeightMatrix& W, const FrequencyGrid& grid);

// y_i = sum_j W_ij u_j
StateSpace weight_state_space(const WeightMatrix& W);

// reflection coefficients -> monic polynomial in z^-1 (step-up recursion)
std::vector<double> reflection_to_poly(const std::vector<double>& k);
// inverse; throws if the polynomial is not strictly stable
std::vector<double> poly_to_reflection(const std::vector<double>& a);

}  // namespace kobs

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace kobs {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

struct StateSpace {
    Mat A, B, C, D;
    double dt = 1.0;

    StateSpace() = default;
    StateSpace(Mat a, Mat b, Mat c, Mat d, double dt_);

    int nx() const { return static_cast<int>(A.rows()); }
    int nu() const { return static_cast<int>(D.cols()); }
    int ny() const { return static_cast<int>(D.rows()); }

    void validate() const;

    // pure feedthrough, no states
    static StateSpace gain(const Mat& d, double dt);
};

struct FrequencyGrid {
    std::vector<double> theta;  // rad/sample

    FrequencyGrid() = default;
    explicit FrequencyGrid(std::vector<double> t);

    std::size_t size() const { return theta.size(); }
    void validate() const;

    static FrequencyGrid logspace(double lo, double hi, int n);
    // 512 log points 1e-4..pi
    static FrequencyGrid default_grid();
};

struct FreqResponse {
    FrequencyGrid grid;
    std::vector<CMat> samples;

    int rows() const { return samples.empty() ? 0 : static_cast<int>(samples[0].rows()); }
    int cols() const { return samples.empty() ? 0 : static_cast<int>(samples[0].cols()); }
};

constexpr double kSchurTol = 1e-9;

CMat eval_tf(const StateSpace& sys, double theta);
FreqResponse freq_response(const StateSpace& sys, const FrequencyGrid& grid);

double spectral_radius(const Mat& A);
bool is_schur(const Mat& A, double tol = kSchurTol);
bool is_schur(const StateSpace& sys, double tol = kSchurTol);

// A P A' - P + Q = 0
Mat solve_dlyap(const Mat& A, const Mat& Q);

double h2_norm(const StateSpace& sys);
// grid lower bound of the true sup
double hinf_norm(const StateSpace& sys, const FrequencyGrid& grid);
double sigma_max(const CMat& M);

// y = g2(g1(u))
StateSpace series(const StateSpace& g1, const StateSpace& g2);
StateSpace append(const StateSpace& g1, const StateSpace& g2);

// lower LFT: P has inputs [w; u] and outputs [z; y], last nu inputs / ny outputs
// belong to the control channel; K maps y -> u
StateSpace feedback_lft(const StateSpace& P, int nu, int ny, const StateSpace& K);

// sub-system on selected input / output indices
StateSpace select_io(const StateSpace& sys, const std::vector<int>& outs, const std::vector<int>& ins);

std::vector<int> index_range(int begin, int end);

}  // namespace kobs

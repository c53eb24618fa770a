#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kobs/lti.hpp"

// Small dense SDP solver for LMI problems
//   minimize c'y  s.t.  F_j(y) = F_j0 + sum_i y_i F_ji  >= 0  for every block j
// Primal-dual interior point, HKM direction, Mehrotra predictor-corrector,
// infeasible start.
namespace kobs::sdp {

struct Block {
    int dim = 0;
    Mat F0;
    std::vector<std::pair<int, Mat>> terms;  // (variable index, coefficient)
};

struct Problem {
    int nvar = 0;
    Vec c;
    std::vector<Block> blocks;
};

enum class Status { Optimal, Infeasible, Unbounded, MaxIterations, NumericalError };
const char* to_string(Status s);

struct Options {
    double tol = 1e-8;
    int max_iter = 150;
    bool extended_precision = false;  // long double arithmetic
    bool verbose = false;
};

struct Result {
    Status status = Status::NumericalError;
    Vec y;
    double primal_obj = 0.0;  // c'y
    double dual_obj = 0.0;
    double rel_gap = 0.0;
    double primal_infeas = 0.0;
    double dual_infeas = 0.0;
    double min_eig = 0.0;  // smallest eigenvalue over all F_j(y)
    int iterations = 0;
    std::string message;
};

Result solve(const Problem& prob, const Options& opt = {});

// matrix-valued affine expression in the decision variables
class Affine {
public:
    Affine() = default;
    Affine(int r, int c) : c0(Mat::Zero(r, c)) {}
    static Affine constant(const Mat& m);

    int rows() const { return static_cast<int>(c0.rows()); }
    int cols() const { return static_cast<int>(c0.cols()); }

    Mat c0;
    std::map<int, Mat> terms;

    Affine operator+(const Affine& o) const;
    Affine operator-(const Affine& o) const;
    Affine operator-() const;
    Affine operator*(const Mat& R) const;
    friend Affine operator*(const Mat& L, const Affine& a);
    Affine scaled(double s) const;
    Affine transpose() const;
    Mat value(const Vec& y) const;
};

Affine operator+(const Affine& a, const Mat& m);
Affine operator+(const Mat& m, const Affine& a);

// rows of blocks; every block in a row shares its row count, every block in a
// column shares its column count
Affine bmat(const std::vector<std::vector<Affine>>& rows);
inline Affine zeros(int r, int c) { return Affine(r, c); }
inline Affine eye(int n) { return Affine::constant(Mat::Identity(n, n)); }

class Builder {
public:
    Affine sym(int n);            // symmetric n x n variable
    Affine full(int r, int c);    // unstructured r x c variable
    Affine scalar();
    int nvar() const { return n_; }

    // F >= margin * I, F is symmetrized
    void add_lmi(const Affine& F, double margin = 0.0);
    void minimize(const Affine& objective);  // 1x1

    Problem problem() const;

private:
    int n_ = 0;
    std::vector<Affine> lmis_;
    std::vector<double> margins_;
    Affine obj_;
};

}  // namespace kobs::sdp

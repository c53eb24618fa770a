#pragma once

#include <string>
#include <vector>

#include "kobs/lti.hpp"

namespace kobs {

enum class UncertaintyForm { Additive, InputMult, OutputMult, InverseAdditive, InverseInputMult, InverseOutputMult };

const std::vector<UncertaintyForm>& all_forms();
std::string to_string(UncertaintyForm f);
UncertaintyForm form_from_string(const std::string& s);

// below this ratio of singular values a matrix is flagged as ill-conditioned
constexpr double kCondFlag = 1e-8;

CMat pinv(const CMat& M);

// E at one frequency; *ill set when the matrix being inverted is near singular
CMat residual_at(UncertaintyForm f, const CMat& G, const CMat& Gp, bool* ill = nullptr);
// inverse of residual_at for square invertible G, Gp
CMat reconstruct_at(UncertaintyForm f, const CMat& G, const CMat& E);

struct Residuals {
    std::vector<CMat> E;
    std::vector<int> ill_conditioned;  // grid indices
};
Residuals residual(UncertaintyForm f, const FreqResponse& Gnom, const FreqResponse& Gpert);

struct ResidualSet {
    UncertaintyForm form = UncertaintyForm::Additive;
    int nominal_id = 0;
    FrequencyGrid grid;
    std::vector<int> drive_ids;
    std::vector<std::vector<CMat>> residuals;  // [drive][k]
    std::vector<double> bound;
    int ill_conditioned = 0;  // flagged (drive, frequency) pairs

    double peak() const;
    double argmax_theta() const;
    std::vector<double> sigma_profile(std::size_t drive) const;
    // max over drives of |E_ij| per frequency
    std::vector<double> entry_bound(int i, int j) const;
    int rows() const;
    int cols() const;
};

std::vector<double> population_bound(const ResidualSet& rs);

// models[i] belongs to ids[i]
ResidualSet make_residual_set(UncertaintyForm f, std::size_t nominal_index, const std::vector<FreqResponse>& models,
                              const std::vector<int>& ids);

struct NominalCandidate {
    int nominal_id;
    UncertaintyForm form;
    double peak;
};

struct Selection {
    ResidualSet set;
    std::vector<NominalCandidate> table;  // every evaluated pair
};

// minimizes the bound peak over (nominal, form); ties go to the lower id, then enum order
Selection select_nominal(const std::vector<FreqResponse>& models, const std::vector<int>& ids,
                         const std::vector<UncertaintyForm>& forms);

struct OutlierFlags {
    bool outlier = false;
    std::vector<std::vector<bool>> entry;      // [i][j]
    std::vector<std::vector<int>> first_index;  // first offending grid index or -1
    double worst_ratio = 0.0;                   // max |E_ij| / |W_ij|
};

// weight_mag[k](i, j) = |W_ij(e^{j theta_k})|
OutlierFlags detect_outliers(const std::vector<Mat>& weight_mag, const FreqResponse& candidate,
                             const FreqResponse& Gnom, UncertaintyForm f, double margin);

struct ScreenResult {
    std::vector<int> kept, removed;  // drive ids
    std::vector<double> ratio;       // per input drive
};

// Leave-one-out screen: a drive whose residual peak exceeds `threshold` times
// the peak of the bound over all other drives is removed before weights are
// fitted. The nominal is never removed.
ScreenResult screen_population(const ResidualSet& rs, double threshold);

}  // namespace kobs

#pragma once

#include <cstddef>
#include <vector>

namespace kobs {

// one recorded run of a drive, channels at the gearbox output
struct Episode {
    double dt = 0.001;
    std::vector<double> t;
    std::vector<double> ref_pos, ref_vel;    // rad, rad/s
    std::vector<double> meas_pos, meas_vel;  // rad, rad/s
    std::vector<double> current;             // fraction of full scale

    std::size_t size() const { return t.size(); }
    void validate() const;
};

}  // namespace kobs

#pragma once

#include <filesystem>
#include <json.hpp>

#include "kobs/edmd.hpp"
#include "kobs/lifting.hpp"
#include "kobs/lti.hpp"
#include "kobs/population_sim.hpp"
#include "kobs/weight_fit.hpp"

namespace kobs {

using json = nlohmann::json;

json mat_to_json(const Mat& m);
Mat mat_from_json(const json& j, long cols_if_empty = 0);

json to_json(const StateSpace& s);
StateSpace state_space_from_json(const json& j);

json to_json(const LiftingConfig& c);
LiftingConfig lifting_from_json(const json& j);

json to_json(const KoopmanModel& m);
KoopmanModel koopman_from_json(const json& j);

json to_json(const BoundWeight& w);
BoundWeight weight_from_json(const json& j);

json to_json(const DriveParams& p);
DriveParams drive_params_from_json(const json& j);

// pretty-printed with a trailing newline
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace kobs

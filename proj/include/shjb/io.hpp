#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "shjb/bsde.hpp"
#include "shjb/dpp.hpp"
#include "shjb/galerkin.hpp"
#include "shjb/hjb.hpp"

namespace shjb {

// Doubles are written with 17 significant digits so files round-trip exactly.
std::string format_double(double v);

// [{"mark": [..], "weight": w}, ...]
MarkMeasure measure_from_json(const nlohmann::json& j);
nlohmann::json measure_to_json(const MarkMeasure& m);

void write_trajectory_csv(std::ostream& os, const StateTrajectory& tr);
void write_value_table_csv(std::ostream& os, const ValueTable& tab);
void write_bsde_csv(std::ostream& os, const BsdeSolution& sol);
// node, t, scenario, label, probability, y_1..y_nb
void write_bseej_csv(std::ostream& os, const BseejSolution& sol);
// t, scenario, x_1..x_n, V, Phi_d, Psi_1..Psi_J; absent components are written as 0.
void write_triplet_csv(std::ostream& os, const RandomFieldTriplet& tr);
// Reads the layout written above on a tensor grid; Phi and Psi columns that are
// identically zero are dropped.
RandomFieldTriplet read_triplet_csv(std::istream& is, int d);

}  // namespace shjb

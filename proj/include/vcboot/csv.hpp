#pragma once

#include <iosfwd>
#include <string>

#include "vcboot/simstudy.hpp"
#include "vcboot/types.hpp"

namespace vcboot {

// Long-format dataset files: header "id,y,x1,...,xk" (k may be 0), one row
// per observation, rows grouped by id in order of first appearance.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv_file(const std::string& path);
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv_file(const std::string& path, const Dataset& data);

// Study results: one row per (procedure, arm, alpha).  The c_n field is
// empty on asymptotic rows.  Power results carry two extra columns for the
// grid coordinates.
void write_scenario_csv(std::ostream& out, const ScenarioResult& result,
                        bool power_columns = false);
void write_scenario_csv_file(const std::string& path,
                             const ScenarioResult& result,
                             bool power_columns = false);

}  // namespace vcboot

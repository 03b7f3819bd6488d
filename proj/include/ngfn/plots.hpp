#pragma once

#include <string>
#include <vector>

#include "ngfn/metrics.hpp"

namespace ngfn {

// Writes one standalone SVG line chart per metric column (step on the x
// axis) into dir, named plot_<metric>.svg. Throws ConfigError on an empty
// record list and IoError on write failure.
void write_metric_plots(const std::vector<MetricsRecord>& records, const std::string& dir);

}  // namespace ngfn

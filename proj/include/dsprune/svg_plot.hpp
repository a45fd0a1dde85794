#pragma once

#include <string>
#include <vector>

#include "dsprune/experiment.hpp"

namespace dsprune {

/// Renders the sparsity/accuracy figure: one line per method, x = channel
/// sparsity ratio, y = mean target accuracy after finetuning over seeds. The
/// legend carries per-point seed counts. Output bytes are a deterministic
/// function of the records.
std::string render_sweep_svg(const std::vector<MetricsRecord>& records);

}  // namespace dsprune

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "brainssl/train.hpp"

namespace brainssl::tools {

/// Two panels side by side: training loss (left) and validation loss (right).
std::string loss_curve_svg(const RunLog& log);

/// Per-split count, first/last/min loss, and the mean over the last tenth of the steps.
nlohmann::json runlog_summary(const RunLog& log);

/// Mean test Dice per fraction with one-std error bars, one series per arm.
std::string fewshot_svg(const std::vector<FewShotSummary>& summary);

/// Reads the `fraction,arm,mean,std` table written by the fewshot subcommand.
std::vector<FewShotSummary> parse_fewshot_summary(const std::string& text);

}  // namespace brainssl::tools

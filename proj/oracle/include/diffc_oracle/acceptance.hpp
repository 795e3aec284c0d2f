#pragma once

#include <string>
#include <vector>

namespace diffc::acceptance {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

/// Criterion ids 1..10.
std::vector<int> criterion_ids();

/// Runs one criterion with its pinned configuration and tolerances. Worker
/// counts default to DIFFC_THREADS / hardware concurrency where a criterion
/// does not fix them. Throws ParameterError for an unknown id.
CriterionResult run_criterion(int id);

/// "criterion <id> PASS|FAIL <name>: <detail> [<seconds>s]"
std::string format_result(const CriterionResult& r);

}  // namespace diffc::acceptance

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "diffc_oracle/oracles.hpp"

namespace diffc::cli {

/// Runs one `diffc` invocation. args excludes the program name. Returns the
/// process exit status: 0 on success, 1 when selftest finds a failure, 2 on a
/// usage or module error (printed to `err` as "<category>: <message>").
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct SelftestOptions {
    /// Skip the acceptance criteria that take more than a few seconds.
    bool quick = false;
    /// Run only the oracle suites.
    bool oracles_only = false;
    std::vector<int> criteria;
};

/// Oracle suites, then acceptance criteria, one line each. `kl` is the KL
/// implementation under test (diffc::kl_bits in production; tests inject
/// broken ones). Returns true when everything passed.
bool selftest(const oracle::KlFn& kl, const SelftestOptions& opts, std::ostream& out);

}  // namespace diffc::cli

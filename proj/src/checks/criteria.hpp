#pragma once

#include <string>
#include <vector>

namespace sattn::checks {

struct CheckResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

// The acceptance gate: every check runs at its pinned tolerance and returns
// a one-line verdict. Used by both the acceptance binary and `selftest`.
std::vector<CheckResult> run_acceptance_checks();

} // namespace sattn::checks

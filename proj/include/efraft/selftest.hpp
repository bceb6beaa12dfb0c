#pragma once

#include <functional>
#include <string>
#include <vector>

namespace efraft {

// Named oracle-equivalence and invariant suites, runnable from the CLI.
// Every brute-force oracle in the library is exercised by exactly one suite
// here; tests assert the registry size so a new oracle cannot land without
// registering.
struct SelftestSuite {
    std::string name;
    std::function<bool(std::string& detail)> run;  // detail filled on failure
};

const std::vector<SelftestSuite>& selftest_registry();

}  // namespace efraft

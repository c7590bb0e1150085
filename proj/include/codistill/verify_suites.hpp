#pragma once

// Standard verification suites over randomized default instances, shared by
// the command-line `verify` subcommand and the acceptance harness.  Each
// suite builds its own seeded instances, runs the exact checks from
// codistill::verify, and returns a structured pass/fail report with the
// observed residuals / z statistics.  Tolerances are pinned here:
//   theorem1  residual inf-norm <= 1e-8 per instance
//   lemma1    componentwise |z| <= 4 with the G/(G-1) correction, and the
//             uncorrected control must exceed that bound while matching the
//             (G-1)/G bias ratio on every well-resolved component
//   fd        loss-gradient rel. l2 error <= 1e-5 vs central differences

#include <string>

#include "codistill/objectives.hpp"
#include "codistill/verify.hpp"

namespace codistill {
namespace verify {

struct SuiteCheck {
  std::string name;
  bool pass = false;
  std::string detail;  // human-readable numbers for the report line
};

struct SuiteReport {
  std::string suite;
  std::vector<SuiteCheck> checks;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  // One line per check: "[suite] name detail PASS|FAIL".
  std::string to_text() const;
};

SuiteReport theorem1_suite(std::uint64_t seed = 7, int instances = 20);

// Runs G in {2, 4, 8} plus the uncorrected positive control.
SuiteReport lemma1_suite(std::uint64_t seed = 7, std::size_t groups = 100000);

SuiteReport fd_suite(std::uint64_t seed = 7, int instances = 50);

}  // namespace verify
}  // namespace codistill

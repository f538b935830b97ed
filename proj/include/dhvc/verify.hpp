// dhvc/verify.hpp -- verification suites cross-checking the diffusion
// machinery against the independent oracles, plus finite-difference checks
// of every network type. Shared by the `oracle` CLI command and the
// acceptance suite.
#pragma once

#include <iosfwd>
#include <filesystem>
#include <string>
#include <vector>

namespace dhvc::verify {

struct CheckRecord {
  std::string suite;
  std::string name;
  double value = 0.0;      // measured statistic
  double threshold = 0.0;  // bound it must stay within
  bool pass = false;
};

enum class Mutation { none, flip_drift_sign };

// suite: one of all|marginal|score|sampler|gradcheck.
// Throws DomainError for an unknown suite name.
std::vector<CheckRecord> run_suite(const std::string& suite,
                                   Mutation mutation = Mutation::none);

bool all_pass(const std::vector<CheckRecord>& records);
void print_table(std::ostream& os, const std::vector<CheckRecord>& records);
void write_csv(const std::filesystem::path& path, const std::vector<CheckRecord>& records);

}  // namespace dhvc::verify

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdream/autodiff.hpp"

namespace kdream::gradcheck {

struct Report {
  std::string name;
  std::size_t coordinates = 0;
  ad::GradCheckResult result;
};

/// Central-difference checks on small random instances, all in double precision.
Report transe_margin(std::uint64_t seed);
Report dsm(std::uint64_t seed);
Report crn_params(std::uint64_t seed);
/// Input gradient of ‖y − P_φ(G)‖², X entries and symmetric E entries.
Report guidance_input(std::uint64_t seed);

std::vector<Report> all(std::uint64_t seed);
/// Runs one of transe, dsm, crn, guidance or all.
std::vector<Report> run(const std::string& module, std::uint64_t seed);

}  // namespace kdream::gradcheck

// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks for every differentiable op, run at
// 64-bit precision. The checker only ever calls forward code: analytic grads
// come from one backward pass, numeric ones from perturbing leaf values.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hazelayer/autograd.hpp"

namespace hazelayer::gradcheck {

inline constexpr double kTolerance = 1e-3;
inline constexpr double kStep = 1e-4;
inline constexpr double kDenominatorFloor = 1e-8;
/// Probes whose coordinate lies within this distance of a relu kink or a
/// max/min tie are skipped: the branch pattern is compared at +-kKinkRadius.
inline constexpr double kKinkRadius = 1e-4;
inline constexpr int kProbesPerOp = 100;

struct OpReport {
  std::string op;
  int probes = 0;    // accepted probes
  int excluded = 0;  // probes skipped near a kink or tie
  double max_rel_error = 0.0;
  bool passed() const { return probes > 0 && max_rel_error <= kTolerance; }
};

struct ProbeResult {
  int accepted = 0;
  int excluded = 0;
  double max_rel_error = 0.0;
};

/// Builds a scalar from the given leaves inside a fresh graph.
using ScalarFn = std::function<ag::DArray<double>(ag::Graph<double>&, const std::vector<ag::DArray<double>>&)>;

/// |analytic - numeric| / (|numeric| + 1e-8) for one coordinate.
double relative_error(double analytic, double numeric);

/// A scalar root plus addends that sum to it. With addends present the
/// numeric derivative is the sum of per-addend central differences, so a large
/// addend that a probe leaves untouched cannot drown the others in rounding.
struct Objective {
  ag::DArray<double> root;
  std::vector<ag::DArray<double>> addends;
};
using ObjectiveFn =
    std::function<Objective(ag::Graph<double>&, const std::vector<ag::DArray<double>>&)>;

/// Probes `probes` random coordinates across `leaves` (all requiring grad),
/// drawing replacements for coordinates that sit near a kink.
ProbeResult max_relative_error(const std::vector<ag::DArray<double>>& leaves, const ObjectiveFn& fn, int probes,
                               std::mt19937_64& rng, double step = kStep);
ProbeResult max_relative_error(const std::vector<ag::DArray<double>>& leaves, const ScalarFn& fn, int probes,
                               std::mt19937_64& rng, double step = kStep);

/// Every primitive op, every loss term and the end-to-end objective on a
/// 16x16 image. Each report covers `probes` probes spread over random inputs.
std::vector<OpReport> run_suite(std::uint64_t seed, int probes = kProbesPerOp);

}  // namespace hazelayer::gradcheck

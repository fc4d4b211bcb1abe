#pragma once

#include <cstdint>

#include "cedar/types.hpp"

namespace cedar {

// Column-law mix used throughout the simulation study: floor(p/2) standard
// Gaussian columns, floor(p/4) Uniform(-sqrt(3), sqrt(3)), remainder Laplace
// with unit variance; assignment order is a seeded permutation.
std::vector<FeatureLaw> mixed_feature_laws(int p, std::uint64_t seed);

std::vector<FeatureLaw> gaussian_feature_laws(int p);

// Simulation-study coefficient design: the first floor(p/4) (at least 1)
// coefficients are drawn Uniform(0,1), the rest are zero.
VectorXd sparse_uniform_beta0(int p, std::uint64_t seed);

int beta0_support_size(int p);

GroundTruth make_truth(VectorXd beta0, double sigma0_sq,
                       std::vector<FeatureLaw> laws);

SiteData generate_site_data(const GroundTruth& truth, int n,
                            std::uint64_t seed, int site_id = 1);

LocalFit local_mle(const SiteData& data);

SufficientStats sufficient_stats(const SiteData& data);

}  // namespace cedar

#pragma once

#include "market/buyer.hpp"
#include "market/markov_chain.hpp"
#include "market/pricing.hpp"
#include "market/rng.hpp"

#include <string>
#include <vector>

namespace market {

enum class PriorFamily { Random, Uniform, Beta23, Beta15 };

PriorFamily parse_prior_family(const std::string& name);
const char* to_string(PriorFamily family);

/// Prior over `n` types. Random is a flat Dirichlet draw; the beta families
/// discretize the density at the cell midpoints (i + 0.5) / n.
std::vector<double> make_prior(std::size_t n, PriorFamily family, Rng& rng);

/// Types with nondecreasing valuations in the metric, scaled into [0, bound]
/// and rounded to cents so that ties actually occur.
Population random_population(std::size_t types, std::size_t grid_size, double bound, PriorFamily family, Rng& rng);

/// Chain whose rows favor staying put or moving up by about `drift` states.
MarkovChain random_drift_chain(const MetricGrid& grid, std::size_t horizon, double drift, Rng& rng);

/// Chain with independent random rows (no structure).
MarkovChain random_dense_chain(const MetricGrid& grid, std::size_t horizon, Rng& rng);

/// Zero-sum perturbation of a prior with Euclidean norm at most `eps`, shrunk
/// when needed to stay in the simplex.
std::vector<double> perturb_prior(const std::vector<double>& prior, double eps, Rng& rng);

/// Each row moves by a zero-sum direction of norm eps / sqrt(n), shrunk to
/// stay stochastic.
MarkovChain perturb_chain(const MarkovChain& chain, double eps, Rng& rng);

} // namespace market

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmpc/dataset.hpp"
#include "pmpc/mlp.hpp"

namespace pmpc {

/// Writes <prefix>_params.csv (one row of flat parameters per member, full
/// precision) and <prefix>_manifest.json (layer sizes, activation, seed).
void save_ensemble(const Ensemble& ensemble, const std::string& prefix, std::uint64_t seed = 0);
Ensemble load_ensemble(const std::string& prefix);

/// Writes <prefix>_trial<k>.csv with header t,y1..yd,u1..ud (controls
/// sampled at the observation times) plus <prefix>_manifest.json. Loading
/// reconstructs the control signal by cubic interpolation of the sampled
/// controls.
void save_datasets(const std::vector<TrialDataset>& trials, const std::string& prefix,
                   const std::string& system_name, double noise_sigma, std::uint64_t seed);
std::vector<TrialDataset> load_datasets(const std::string& prefix);

}  // namespace pmpc

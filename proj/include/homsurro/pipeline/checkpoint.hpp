#pragma once

#include <optional>
#include <string>

#include "homsurro/descriptors/pca.hpp"
#include "homsurro/pipeline/dataset.hpp"
#include "homsurro/pipeline/optim.hpp"
#include "homsurro/seqmodel/surrogate.hpp"

namespace homsurro::pipeline {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  double best_val_mse = -1.0;
  std::string note;
};

/// Checkpoint directory layout:
///   manifest.json  - architecture config, standardizer, metadata, tensor index
///   weights.bin    - little-endian f32 tensors concatenated in index order
///   resume.bin     - optional f64 parameters + Adam moments for exact resume
void save_checkpoint(const std::string& dir, seqmodel::SurrogateModel& model,
                     const Standardizer& standardizer,
                     const std::optional<descriptors::PCABasis>& pca,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  seqmodel::SurrogateModel model;
  Standardizer standardizer;
  std::optional<descriptors::PCABasis> pca;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

/// Copies tensors matched by name from an existing checkpoint into `model`
/// (pretrained initialization for fine-tuning). Unmatched model tensors keep
/// their current values. Returns the number of tensors loaded.
std::size_t load_matching_weights(const std::string& dir,
                                  seqmodel::SurrogateModel& model);

/// Exact-resume state: f64 parameters, Adam moments and counters.
void save_resume_state(const std::string& dir, seqmodel::SurrogateModel& model,
                       Adam& adam, std::size_t next_epoch);
/// Returns the epoch to continue from, or nullopt when no resume state exists.
std::optional<std::size_t> load_resume_state(const std::string& dir,
                                             seqmodel::SurrogateModel& model,
                                             Adam& adam);

}  // namespace homsurro::pipeline

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "homsurro/descriptors/pca.hpp"
#include "homsurro/pipeline/checkpoint.hpp"
#include "homsurro/pipeline/dataset.hpp"
#include "homsurro/seqmodel/surrogate.hpp"

namespace homsurro::pipeline {

struct TrainConfig {
  seqmodel::SurrogateConfig arch;
  std::size_t batch_size = 100;
  std::size_t warmup_steps = 4000;
  std::size_t epochs = 10;
  bool fine_tune = false;  // scales every scheduled lr by 0.1
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double clip_norm = 1.0;
  bool truncate = true;  // per-sample random truncation
  std::string init_checkpoint;   // optional pretrained weights
  std::string out_dir;           // best checkpoint destination
  bool resume = false;           // continue from out_dir/resume.bin
  std::size_t save_resume_every = 1;  // epochs; 0 disables resume snapshots
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_mse = 0.0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  std::string checkpoint_dir;
};

/// Divergence (NaN validation loss) diagnostic.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what)
      : std::runtime_error(what) {}
};

/// 80/20 train/validation split by record-id hash (stable across runs).
bool is_validation_record(std::int64_t id);

/// Trains the surrogate on `records` (teacher forcing, MSE on standardized
/// values, Adam with warmup schedule, gradient clipping at the global norm).
/// For the PCA route a basis is fitted on the training split when `basis` is
/// null; the basis in use is embedded in the saved checkpoint. Progress is
/// written to `log_stream` when non-null. The best-validation checkpoint is
/// written to cfg.out_dir.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<SequenceRecord>& records,
                  const descriptors::PCABasis* basis = nullptr,
                  std::ostream* log_stream = nullptr);

}  // namespace homsurro::pipeline

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "homsurro/descriptors/pca.hpp"
#include "homsurro/pipeline/dataset.hpp"
#include "homsurro/seqmodel/surrogate.hpp"

namespace homsurro::pipeline {

struct EvalMetrics {
  double overall_rmse = 0.0;  // MPa, de-standardized, pooled components
  std::vector<double> rmse_by_position;
  std::vector<std::pair<std::int64_t, double>> worst;  // top per-record RMSE
  std::size_t records = 0;
  double stress_std = 0.0;  // pooled std of the true stresses evaluated
};

/// Autoregressive predictions against ground truth. Evaluates the first
/// `limit` records when limit > 0. Decoding is O(T^2) per record.
EvalMetrics evaluate(seqmodel::SurrogateModel& model,
                     const Standardizer& standardizer,
                     const descriptors::PCABasis* basis,
                     const std::vector<SequenceRecord>& records,
                     std::size_t limit = 0, std::size_t jobs = 1);

/// Descriptor for one record under the model's microstructure encoding.
std::vector<double> record_descriptor(seqmodel::SurrogateModel& model,
                                      const descriptors::PCABasis* basis,
                                      const SequenceRecord& record);

void write_metrics_json(const EvalMetrics& m, const std::string& path);
void write_rmse_csv(const EvalMetrics& m, const std::string& path);

}  // namespace homsurro::pipeline

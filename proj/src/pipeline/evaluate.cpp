#include "homsurro/pipeline/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "homsurro/descriptors/twopoint.hpp"
#include "json.hpp"

namespace homsurro::pipeline {

using ndcore::Tensor;
using seqmodel::MicroEncoding;

std::vector<double> record_descriptor(seqmodel::SurrogateModel& model,
                                      const descriptors::PCABasis* basis,
                                      const SequenceRecord& record) {
  switch (model.cfg.micro) {
    case MicroEncoding::none: return {};
    case MicroEncoding::descriptor: {
      if (!basis)
        throw std::invalid_argument("PCA-encoded model needs a basis");
      if (!record.micro)
        throw std::invalid_argument("record " + std::to_string(record.id) +
                                    " has no microstructure");
      return descriptors::pca_transform(
                 *basis, descriptors::matrix_autocorrelation(*record.micro))
          .scores;
    }
    case MicroEncoding::image: {
      if (!record.micro)
        throw std::invalid_argument("record " + std::to_string(record.id) +
                                    " has no microstructure");
      return model.cnn.descriptor(*record.micro);
    }
  }
  return {};
}

EvalMetrics evaluate(seqmodel::SurrogateModel& model,
                     const Standardizer& standardizer,
                     const descriptors::PCABasis* basis,
                     const std::vector<SequenceRecord>& records,
                     std::size_t limit, std::size_t jobs) {
  const std::size_t n =
      limit > 0 ? std::min(limit, records.size()) : records.size();
  if (n == 0) throw std::invalid_argument("evaluate: no records");

  std::size_t max_len = 0;
  for (std::size_t i = 0; i < n; ++i)
    max_len = std::max(max_len, records[i].length());

  struct PerRecord {
    double sq_sum = 0.0;
    std::size_t entries = 0;
    std::vector<double> sq_by_pos;
    std::vector<std::size_t> n_by_pos;
  };
  std::vector<PerRecord> partial(n);

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  const std::size_t per = (n + workers - 1) / workers;
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const SequenceRecord& rec = records[i];
      const std::vector<double> desc = record_descriptor(model, basis, rec);
      const Tensor strain = strain_tensor(rec, &standardizer);
      const Tensor pred_std = model.predict_autoregressive(strain, desc);
      PerRecord& pr = partial[i];
      const std::size_t t_len = rec.length();
      pr.sq_by_pos.assign(t_len, 0.0);
      pr.n_by_pos.assign(t_len, 0);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < 4; ++c) {
          const double destd = pred_std.at(t, c) * standardizer.stress_std[c] +
                               standardizer.stress_mean[c];
          if (!std::isfinite(destd))
            throw std::runtime_error("non-finite prediction in record " +
                                     std::to_string(rec.id));
          const double d = destd - rec.stress[t][c];
          pr.sq_sum += d * d;
          ++pr.entries;
          pr.sq_by_pos[t] += d * d;
          pr.n_by_pos[t] += 1;
        }
    }
  };
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t lo = w * per, hi = std::min(n, lo + per);
      if (lo >= hi) break;
      pool.emplace_back(work, lo, hi);
    }
    for (auto& t : pool) t.join();
  }

  EvalMetrics m;
  m.records = n;
  double sq_total = 0.0;
  std::size_t entries = 0;
  std::vector<double> pos_sq(max_len, 0.0);
  std::vector<std::size_t> pos_n(max_len, 0);
  std::vector<std::pair<std::int64_t, double>> per_record;
  for (std::size_t i = 0; i < n; ++i) {
    const PerRecord& pr = partial[i];
    sq_total += pr.sq_sum;
    entries += pr.entries;
    for (std::size_t t = 0; t < pr.sq_by_pos.size(); ++t) {
      pos_sq[t] += pr.sq_by_pos[t];
      pos_n[t] += pr.n_by_pos[t];
    }
    per_record.emplace_back(
        records[i].id,
        std::sqrt(pr.sq_sum / static_cast<double>(pr.entries)));
  }
  m.overall_rmse = std::sqrt(sq_total / static_cast<double>(entries));
  m.rmse_by_position.resize(max_len);
  for (std::size_t t = 0; t < max_len; ++t)
    m.rmse_by_position[t] =
        pos_n[t] ? std::sqrt(pos_sq[t] / static_cast<double>(pos_n[t])) : 0.0;
  std::sort(per_record.begin(), per_record.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  per_record.resize(std::min<std::size_t>(10, per_record.size()));
  m.worst = std::move(per_record);

  // pooled statistics of the evaluated ground truth
  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& s : records[i].stress)
      for (double v : s) {
        sum += v;
        sumsq += v * v;
        ++count;
      }
  const double mean = sum / static_cast<double>(count);
  m.stress_std =
      std::sqrt(std::max(0.0, sumsq / static_cast<double>(count) - mean * mean));
  return m;
}

void write_metrics_json(const EvalMetrics& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["records"] = m.records;
  j["overall_rmse_mpa"] = m.overall_rmse;
  j["stress_std_mpa"] = m.stress_std;
  j["rmse_by_position"] = m.rmse_by_position;
  j["worst_records"] = nlohmann::ordered_json::array();
  for (const auto& [id, rmse] : m.worst)
    j["worst_records"].push_back({{"id", id}, {"rmse_mpa", rmse}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

void write_rmse_csv(const EvalMetrics& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "position,rmse_mpa\n";
  for (std::size_t t = 0; t < m.rmse_by_position.size(); ++t)
    out << (t + 1) << "," << m.rmse_by_position[t] << "\n";
}

}  // namespace homsurro::pipeline

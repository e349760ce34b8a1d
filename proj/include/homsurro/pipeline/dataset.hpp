#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "homsurro/constitutive/plasticity.hpp"
#include "homsurro/micro/sve.hpp"
#include "homsurro/ndcore/rng.hpp"
#include "homsurro/ndcore/tensor.hpp"

namespace homsurro::pipeline {

/// One strain/stress sequence, optionally with its microcell raster.
/// Homogeneous records carry no microstructure and fvr 0.
struct SequenceRecord {
  std::int64_t id = 0;
  std::string kind;  // "random" | "cyclic"
  double fvr = 0.0;
  std::optional<micro::PhaseGrid> micro;  // inline grid
  std::optional<std::string> micro_path;  // PGM reference (alternative)
  std::vector<std::array<double, 3>> strain;
  std::vector<std::array<double, 4>> stress;

  std::size_t length() const { return strain.size(); }
};

std::string record_to_json(const SequenceRecord& r);
SequenceRecord record_from_json(const std::string& line);

void write_jsonl(const std::vector<SequenceRecord>& records,
                 const std::string& path);
std::vector<SequenceRecord> read_jsonl(const std::string& path);

enum class DatasetKind { homogeneous, mixture };

struct GenConfig {
  DatasetKind kind = DatasetKind::homogeneous;
  std::size_t count = 1000;
  double random_fraction = 0.5;  // remainder is cyclic
  std::uint64_t seed = 0;
  std::size_t steps = 100;
  double fvr_min = 0.2;
  double fvr_max = 0.5;
  std::size_t resolution = 32;
  constitutive::MaterialParams matrix = constitutive::MaterialParams::matrix();
  constitutive::MaterialParams fiber = constitutive::MaterialParams::fiber();
  std::size_t jobs = 1;
};

/// Record `index` of the dataset; depends only on (config, index), so
/// generation is order-independent and embarrassingly parallel.
SequenceRecord generate_record(const GenConfig& cfg, std::size_t index);

/// Streams `count` records to a JSONL file (parallel generation, sequential
/// index-ordered writes; output bytes are independent of the job count).
void generate_dataset(const GenConfig& cfg, const std::string& out_path);

/// Runs the constitutive oracle along a strain path.
std::vector<std::array<double, 4>> simulate_homogeneous(
    const std::vector<std::array<double, 3>>& strain,
    const constitutive::MaterialParams& matrix);
std::vector<std::array<double, 4>> simulate_mixture(
    const std::vector<std::array<double, 3>>& strain, double fvr,
    const constitutive::MaterialParams& matrix,
    const constitutive::MaterialParams& fiber);

/// Per-component affine rescaling to zero mean and unit variance, fitted
/// over every time step of the fit set.
struct Standardizer {
  std::array<double, 3> strain_mean{}, strain_std{};
  std::array<double, 4> stress_mean{}, stress_std{};
};

Standardizer standardize_fit(const std::vector<SequenceRecord>& records);
SequenceRecord standardize_apply(const Standardizer& s,
                                 const SequenceRecord& r);
SequenceRecord standardize_invert(const Standardizer& s,
                                  const SequenceRecord& r);

/// Model inputs for the first `len` steps (full length when len == 0);
/// standardized when `s` is non-null.
ndcore::Tensor strain_tensor(const SequenceRecord& r, const Standardizer* s,
                             std::size_t len = 0);
ndcore::Tensor stress_tensor(const SequenceRecord& r, const Standardizer* s,
                             std::size_t len = 0);

/// Uniform truncation length on [1, T].
std::size_t truncate_length(ndcore::Rng& rng, std::size_t t);
SequenceRecord truncate_random(const SequenceRecord& r, ndcore::Rng& rng);

}  // namespace homsurro::pipeline

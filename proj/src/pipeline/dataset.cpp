#include "homsurro/pipeline/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "homsurro/loadpath/paths.hpp"
#include "json.hpp"

namespace homsurro::pipeline {

using ndcore::Rng;

namespace {

nlohmann::ordered_json grid_to_json(const micro::PhaseGrid& g) {
  nlohmann::ordered_json j;
  j["resolution"] = g.resolution;
  std::vector<std::string> rows(g.resolution);
  for (std::size_t i = 0; i < g.resolution; ++i) {
    std::string& row = rows[i];
    row.resize(g.resolution);
    for (std::size_t c = 0; c < g.resolution; ++c)
      row[c] = g.at(i, c) ? '1' : '0';
  }
  j["rows"] = rows;
  return j;
}

micro::PhaseGrid grid_from_json(const nlohmann::json& j) {
  micro::PhaseGrid g;
  g.resolution = j.at("resolution").get<std::size_t>();
  const auto rows = j.at("rows").get<std::vector<std::string>>();
  if (rows.size() != g.resolution)
    throw std::runtime_error("inline grid row count mismatch");
  g.cells.resize(g.resolution * g.resolution);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < g.resolution; ++i) {
    if (rows[i].size() != g.resolution)
      throw std::runtime_error("inline grid row length mismatch");
    for (std::size_t c = 0; c < g.resolution; ++c) {
      g.cells[i * g.resolution + c] = rows[i][c] == '1' ? 1 : 0;
      ones += g.cells[i * g.resolution + c];
    }
  }
  g.fvr = static_cast<double>(ones) /
          static_cast<double>(g.resolution * g.resolution);
  return g;
}

}  // namespace

std::string record_to_json(const SequenceRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["kind"] = r.kind;
  j["fvr"] = r.fvr;
  if (r.micro) j["micro"] = grid_to_json(*r.micro);
  else if (r.micro_path) j["micro"] = *r.micro_path;
  j["strain"] = r.strain;
  j["stress"] = r.stress;
  return j.dump();
}

SequenceRecord record_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  SequenceRecord r;
  r.id = j.at("id").get<std::int64_t>();
  r.kind = j.at("kind").get<std::string>();
  r.fvr = j.at("fvr").get<double>();
  if (j.contains("micro")) {
    if (j["micro"].is_string()) r.micro_path = j["micro"].get<std::string>();
    else r.micro = grid_from_json(j["micro"]);
  }
  r.strain = j.at("strain").get<std::vector<std::array<double, 3>>>();
  r.stress = j.at("stress").get<std::vector<std::array<double, 4>>>();
  if (r.strain.size() != r.stress.size())
    throw std::runtime_error("record " + std::to_string(r.id) +
                             ": strain/stress length mismatch");
  return r;
}

void write_jsonl(const std::vector<SequenceRecord>& records,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) out << record_to_json(r) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<SequenceRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<SequenceRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(line));
  }
  return records;
}

std::vector<std::array<double, 4>> simulate_homogeneous(
    const std::vector<std::array<double, 3>>& strain,
    const constitutive::MaterialParams& matrix) {
  std::vector<std::array<double, 4>> out;
  out.reserve(strain.size());
  constitutive::PlasticState state;
  for (const auto& e : strain) {
    const auto s = constitutive::j2_step(state, {e[0], e[1], e[2]}, matrix);
    out.push_back({s.xx, s.yy, s.zz, s.xy});
  }
  return out;
}

std::vector<std::array<double, 4>> simulate_mixture(
    const std::vector<std::array<double, 3>>& strain, double fvr,
    const constitutive::MaterialParams& matrix,
    const constitutive::MaterialParams& fiber) {
  std::vector<std::array<double, 4>> out;
  out.reserve(strain.size());
  constitutive::MixtureState state;
  for (const auto& e : strain) {
    const auto s = constitutive::mixture_step(state, {e[0], e[1], e[2]}, fvr,
                                              matrix, fiber);
    out.push_back({s.xx, s.yy, s.zz, s.xy});
  }
  return out;
}

SequenceRecord generate_record(const GenConfig& cfg, std::size_t index) {
  const std::size_t n_random = static_cast<std::size_t>(
      std::llround(cfg.random_fraction * static_cast<double>(cfg.count)));
  const bool is_random = index < n_random;

  SequenceRecord r;
  r.id = static_cast<std::int64_t>(index);
  r.kind = is_random ? "random" : "cyclic";

  Rng path_rng(ndcore::derive_seed(cfg.seed, index, 1));
  loadpath::StretchPath path;
  if (is_random) {
    path = loadpath::random_path(path_rng, cfg.steps);
  } else {
    const auto mode = static_cast<loadpath::CyclicMode>(path_rng.bounded(4));
    path = loadpath::cyclic_path(path_rng, mode, cfg.steps);
  }
  r.strain = loadpath::to_strain_path(path);

  if (cfg.kind == DatasetKind::homogeneous) {
    r.stress = simulate_homogeneous(r.strain, cfg.matrix);
    return r;
  }

  Rng fvr_rng(ndcore::derive_seed(cfg.seed, index, 2));
  const double target = fvr_rng.uniform(cfg.fvr_min, cfg.fvr_max);
  const auto fibers =
      micro::generate_sve_retrying(ndcore::derive_seed(cfg.seed, index, 3), target);
  r.micro = micro::rasterize(fibers, cfg.resolution);
  r.fvr = r.micro->fvr;
  r.stress = simulate_mixture(r.strain, r.fvr, cfg.matrix, cfg.fiber);
  return r;
}

void generate_dataset(const GenConfig& cfg, const std::string& out_path) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + out_path);

  const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
  const std::size_t chunk = std::max<std::size_t>(jobs, 256);
  std::vector<std::string> lines(chunk);
  for (std::size_t base = 0; base < cfg.count; base += chunk) {
    const std::size_t n = std::min(chunk, cfg.count - base);
    auto work = [&](std::size_t worker) {
      for (std::size_t i = worker; i < n; i += jobs)
        lines[i] = record_to_json(generate_record(cfg, base + i));
    };
    if (jobs == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < n; ++i) out << lines[i] << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + out_path);
}

Standardizer standardize_fit(const std::vector<SequenceRecord>& records) {
  Standardizer s;
  std::array<double, 7> sum{};
  std::size_t n = 0;
  for (const auto& r : records) {
    for (const auto& e : r.strain)
      for (std::size_t c = 0; c < 3; ++c) sum[c] += e[c];
    for (const auto& t : r.stress)
      for (std::size_t c = 0; c < 4; ++c) sum[3 + c] += t[c];
    n += r.length();
  }
  if (n == 0) throw std::invalid_argument("standardize_fit: empty fit set");
  const double inv_n = 1.0 / static_cast<double>(n);
  std::array<double, 7> mean{};
  for (std::size_t c = 0; c < 7; ++c) mean[c] = sum[c] * inv_n;

  // two-pass variance: exactly zero for constant components
  std::array<double, 7> var{};
  for (const auto& r : records) {
    for (const auto& e : r.strain)
      for (std::size_t c = 0; c < 3; ++c)
        var[c] += (e[c] - mean[c]) * (e[c] - mean[c]);
    for (const auto& t : r.stress)
      for (std::size_t c = 0; c < 4; ++c)
        var[3 + c] += (t[c] - mean[3 + c]) * (t[c] - mean[3 + c]);
  }
  for (std::size_t c = 0; c < 7; ++c) {
    const double sd = std::sqrt(var[c] * inv_n);
    if (!(sd > 1e-12))
      throw std::invalid_argument(
          "standardize_fit: zero-variance component " + std::to_string(c));
    if (c < 3) {
      s.strain_mean[c] = mean[c];
      s.strain_std[c] = sd;
    } else {
      s.stress_mean[c - 3] = mean[c];
      s.stress_std[c - 3] = sd;
    }
  }
  return s;
}

SequenceRecord standardize_apply(const Standardizer& s,
                                 const SequenceRecord& r) {
  SequenceRecord out = r;
  for (auto& e : out.strain)
    for (std::size_t c = 0; c < 3; ++c)
      e[c] = (e[c] - s.strain_mean[c]) / s.strain_std[c];
  for (auto& t : out.stress)
    for (std::size_t c = 0; c < 4; ++c)
      t[c] = (t[c] - s.stress_mean[c]) / s.stress_std[c];
  return out;
}

SequenceRecord standardize_invert(const Standardizer& s,
                                  const SequenceRecord& r) {
  SequenceRecord out = r;
  for (auto& e : out.strain)
    for (std::size_t c = 0; c < 3; ++c)
      e[c] = e[c] * s.strain_std[c] + s.strain_mean[c];
  for (auto& t : out.stress)
    for (std::size_t c = 0; c < 4; ++c)
      t[c] = t[c] * s.stress_std[c] + s.stress_mean[c];
  return out;
}

ndcore::Tensor strain_tensor(const SequenceRecord& r, const Standardizer* s,
                             std::size_t len) {
  const std::size_t t = len == 0 ? r.length() : len;
  ndcore::Tensor out({t, 3});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      out.at(i, c) = s ? (r.strain[i][c] - s->strain_mean[c]) / s->strain_std[c]
                       : r.strain[i][c];
  return out;
}

ndcore::Tensor stress_tensor(const SequenceRecord& r, const Standardizer* s,
                             std::size_t len) {
  const std::size_t t = len == 0 ? r.length() : len;
  ndcore::Tensor out({t, 4});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      out.at(i, c) = s ? (r.stress[i][c] - s->stress_mean[c]) / s->stress_std[c]
                       : r.stress[i][c];
  return out;
}

std::size_t truncate_length(ndcore::Rng& rng, std::size_t t) {
  if (t == 0) throw std::invalid_argument("cannot truncate an empty sequence");
  return 1 + static_cast<std::size_t>(rng.bounded(t));
}

SequenceRecord truncate_random(const SequenceRecord& r, ndcore::Rng& rng) {
  const std::size_t len = truncate_length(rng, r.length());
  SequenceRecord out = r;
  out.strain.resize(len);
  out.stress.resize(len);
  return out;
}

}  // namespace homsurro::pipeline

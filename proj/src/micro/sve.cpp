#include "homsurro/micro/sve.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "homsurro/ndcore/rng.hpp"
#include "json.hpp"

namespace homsurro::micro {

namespace {

double wrapped_dist2(const std::array<double, 2>& a,
                     const std::array<double, 2>& b, double cell) {
  double dx = std::abs(a[0] - b[0]);
  double dy = std::abs(a[1] - b[1]);
  dx = std::min(dx, cell - dx);
  dy = std::min(dy, cell - dy);
  return dx * dx + dy * dy;
}

}  // namespace

double FiberSet::analytic_fvr() const {
  const double r = fiber_diameter / 2.0;
  return static_cast<double>(centers.size()) * std::numbers::pi * r * r /
         (cell_size * cell_size);
}

FiberSet generate_sve(std::uint64_t seed, double target_fvr, double cell_size,
                      double fiber_diameter) {
  if (target_fvr < 0.0 || target_fvr >= 0.55)
    throw std::invalid_argument(
        "target FVR must be in [0, 0.55) for random sequential placement");
  if (cell_size <= 0.0 || fiber_diameter <= 0.0 || fiber_diameter > cell_size)
    throw std::invalid_argument("invalid cell or fiber size");

  FiberSet f;
  f.cell_size = cell_size;
  f.fiber_diameter = fiber_diameter;

  ndcore::Rng rng(seed);
  const double d2 = fiber_diameter * fiber_diameter;
  while (f.analytic_fvr() < target_fvr) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::array<double, 2> c = {rng.uniform(0.0, cell_size),
                                 rng.uniform(0.0, cell_size)};
      bool overlaps = false;
      for (const auto& other : f.centers)
        if (wrapped_dist2(c, other, cell_size) < d2) {
          overlaps = true;
          break;
        }
      if (!overlaps) {
        f.centers.push_back(c);
        placed = true;
        break;
      }
    }
    if (!placed) throw JammingError(f.analytic_fvr());
  }
  return f;
}

FiberSet generate_sve_retrying(std::uint64_t seed, double target_fvr,
                               double cell_size, double fiber_diameter,
                               int max_restarts) {
  for (int restart = 0;; ++restart) {
    try {
      return generate_sve(restart == 0
                              ? seed
                              : ndcore::derive_seed(seed, 0x5eed,
                                                    static_cast<std::uint64_t>(
                                                        restart)),
                          target_fvr, cell_size, fiber_diameter);
    } catch (const JammingError&) {
      if (restart >= max_restarts) throw;
    }
  }
}

double min_pair_distance(const FiberSet& f) {
  double best = f.cell_size;
  for (std::size_t i = 0; i < f.centers.size(); ++i)
    for (std::size_t j = i + 1; j < f.centers.size(); ++j)
      best = std::min(best, std::sqrt(wrapped_dist2(f.centers[i], f.centers[j],
                                                    f.cell_size)));
  return best;
}

PhaseGrid rasterize(const FiberSet& f, std::size_t resolution) {
  if (resolution < 8)
    throw std::invalid_argument("raster resolution must be >= 8");
  PhaseGrid g;
  g.resolution = resolution;
  g.cells.assign(resolution * resolution, 0);

  const double pitch = f.cell_size / static_cast<double>(resolution);
  const double r2 = f.fiber_diameter * f.fiber_diameter / 4.0;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j) {
      const std::array<double, 2> p = {(static_cast<double>(j) + 0.5) * pitch,
                                       (static_cast<double>(i) + 0.5) * pitch};
      for (const auto& c : f.centers)
        if (wrapped_dist2(p, c, f.cell_size) <= r2) {
          g.cells[i * resolution + j] = 1;
          ++ones;
          break;
        }
    }
  g.fvr = static_cast<double>(ones) /
          static_cast<double>(resolution * resolution);
  return g;
}

void write_pgm(const PhaseGrid& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P5\n" << g.resolution << " " << g.resolution << "\n255\n";
  std::vector<std::uint8_t> bytes(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i)
    bytes[i] = g.cells[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

PhaseGrid read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path);
  std::size_t w = 0, h = 0;
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w != h || w == 0 || maxval != 255)
    throw std::runtime_error("unsupported PGM header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("truncated PGM body in " + path);

  PhaseGrid g;
  g.resolution = w;
  g.cells.resize(bytes.size());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    g.cells[i] = bytes[i] >= 128 ? 1 : 0;
    ones += g.cells[i];
  }
  g.fvr = static_cast<double>(ones) / static_cast<double>(w * h);
  return g;
}

std::string fiberset_to_json(const FiberSet& f) {
  nlohmann::ordered_json j;
  j["cell_size"] = f.cell_size;
  j["fiber_diameter"] = f.fiber_diameter;
  j["centers"] = nlohmann::ordered_json::array();
  for (const auto& c : f.centers) j["centers"].push_back({c[0], c[1]});
  return j.dump();
}

FiberSet fiberset_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  FiberSet f;
  f.cell_size = j.at("cell_size").get<double>();
  f.fiber_diameter = j.at("fiber_diameter").get<double>();
  for (const auto& c : j.at("centers"))
    f.centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
  return f;
}

}  // namespace homsurro::micro
